"""
STTCube engine

Builds OLAP cubes over geo-tagged, timestamped text:
- hierarchies: date, time-of-day, semantic/grid spatial and textual level hierarchies
- services: ingest, cube construction and update, lattice planning,
  materialization, measures, STT-OLAP operators, querying, persistence and benchmarking
"""

__version__ = "1.0.0"
