"""
Level hierarchies of the STT cube.

Components:
- BaseHierarchy: step-function contract shared by every hierarchy
- DateHierarchy / TimeOfDayHierarchy: temporal hierarchies and build_temporal
- SemanticSpatialHierarchy / GridHierarchy: spatial hierarchies over a SpatialTaxonomy or a grid
- TextualHierarchy: hypernym hierarchy with replication, majority and custom parent schemes
"""

from .base_hierarchy import BaseHierarchy
from .spatial_hierarchy import GridHierarchy, SemanticSpatialHierarchy, SpatialTaxonomy, spatial_parents
from .temporal_hierarchy import DateHierarchy, TemporalMembers, TimeOfDayHierarchy, build_temporal
from .textual_hierarchy import (
    ParentAssignment,
    TextTaxonomy,
    TextualHierarchy,
    assign_parents,
    load_importance,
    textual_parent_custom,
    textual_parent_majority,
    textual_parents_replication,
)

__all__ = [
    "BaseHierarchy",
    "DateHierarchy",
    "TimeOfDayHierarchy",
    "TemporalMembers",
    "build_temporal",
    "SpatialTaxonomy",
    "SemanticSpatialHierarchy",
    "GridHierarchy",
    "spatial_parents",
    "TextTaxonomy",
    "TextualHierarchy",
    "ParentAssignment",
    "assign_parents",
    "load_importance",
    "textual_parents_replication",
    "textual_parent_majority",
    "textual_parent_custom",
]
