import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import TaxonomyError
from ..models import (
    ALL_LEVEL,
    ALL_MEMBER,
    EARTH_SURFACE_KM2,
    SEMANTIC_LEVELS,
    SPATIAL,
    UNKNOWN_MEMBER,
    GridConfig,
)
from .base_hierarchy import BaseHierarchy, float_or_none, read_tsv

logger = logging.getLogger(__name__)

GEO_COLUMNS = ["member_id", "level", "name", "parent_id", "rep_lat", "rep_lon", "surface_area_km2"]
TAXONOMY_LEVELS = ("city", "region", "country")


@dataclass(frozen=True)
class GeoMember:
    id: str
    level: str
    name: str
    parent: Optional[str]
    lat: Optional[float]
    lon: Optional[float]
    surface_area: float


class SpatialTaxonomy:
    """City -> Region -> Country taxonomy with representative points and surface areas."""

    def __init__(self, members: List[GeoMember], source: str = "memory"):
        self.source = source
        self.members: Dict[str, GeoMember] = {member.id: member for member in members}
        cities = sorted(member.id for member in members if member.level == "city")
        self.city_ids = np.array(cities, dtype=object)
        self.city_lat = np.array([self.members[c].lat for c in cities], dtype=float)
        self.city_lon = np.array([self.members[c].lon for c in cities], dtype=float)
        self.unknown_area = float(sum(self.members[c].surface_area for c in cities))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SpatialTaxonomy":
        """Read the TSV taxonomy; a header row is optional."""
        frame = read_tsv(path, GEO_COLUMNS)
        rows: Dict[str, dict] = {}
        for line, row in enumerate(frame.to_dict("records"), start=1):
            member_id = row["member_id"].strip()
            level = row["level"].strip().lower()
            if not member_id or level not in TAXONOMY_LEVELS:
                raise TaxonomyError(f"{path}: row {line} has an invalid id or level {level!r}")
            if member_id in rows or member_id in (UNKNOWN_MEMBER, ALL_MEMBER):
                raise TaxonomyError(f"{path}: duplicate or reserved member id {member_id!r}")
            rows[member_id] = {**row, "member_id": member_id, "level": level}

        expected_parent = {"city": "region", "region": "country"}
        for member_id, row in rows.items():
            parent = row["parent_id"].strip()
            if row["level"] == "country":
                continue
            if parent not in rows:
                raise TaxonomyError(f"{path}: {member_id} references unknown parent {parent!r}")
            if rows[parent]["level"] != expected_parent[row["level"]]:
                raise TaxonomyError(f"{path}: parent of {row['level']} {member_id} must be a {expected_parent[row['level']]}")

        areas: Dict[str, float] = {}
        points: Dict[str, Tuple[Optional[float], Optional[float]]] = {}
        for member_id, row in rows.items():
            lat, lon = float_or_none(row["rep_lat"]), float_or_none(row["rep_lon"])
            area = float_or_none(row["surface_area_km2"])
            if row["level"] == "city":
                if lat is None or lon is None:
                    raise TaxonomyError(f"{path}: city {member_id} needs a representative point")
                if area is None or area <= 0:
                    raise TaxonomyError(f"{path}: city {member_id} needs a positive surface area")
            if area is not None:
                if area <= 0:
                    raise TaxonomyError(f"{path}: {member_id} has a non-positive surface area")
                areas[member_id] = area
            points[member_id] = (lat, lon)

        # regions first so that countries can sum derived region areas
        for level, child_level in (("region", "city"), ("country", "region")):
            for member_id, row in rows.items():
                if row["level"] != level or member_id in areas:
                    continue
                children = [c for c, r in rows.items() if r["level"] == child_level and r["parent_id"].strip() == member_id]
                total = sum(areas[c] for c in children)
                if total <= 0:
                    raise TaxonomyError(f"{path}: {level} {member_id} has no area and no children to derive it from")
                areas[member_id] = total

        members = [
            GeoMember(
                id=member_id,
                level=row["level"],
                name=row["name"] or member_id,
                parent=row["parent_id"].strip() or None,
                lat=points[member_id][0],
                lon=points[member_id][1],
                surface_area=areas[member_id],
            )
            for member_id, row in rows.items()
        ]
        taxonomy = cls(members, source=str(path))
        logger.info(f"Loaded spatial taxonomy from {path}: {len(taxonomy.city_ids)} cities")
        return taxonomy

    def __len__(self) -> int:
        return len(self.members)

    def get(self, member_id: str) -> Optional[GeoMember]:
        return self.members.get(member_id)

    def ids(self, level: str) -> List[str]:
        return sorted(m.id for m in self.members.values() if m.level == level)

    def parent_of(self, member_id: str) -> str:
        if member_id == UNKNOWN_MEMBER:
            return UNKNOWN_MEMBER
        member = self.members.get(member_id)
        if member is None:
            raise KeyError(f"unknown spatial member {member_id!r}")
        return member.parent or ALL_MEMBER

    def area_of(self, member_id: str) -> float:
        if member_id == UNKNOWN_MEMBER:
            return self.unknown_area
        if member_id == ALL_MEMBER:
            return EARTH_SURFACE_KM2
        return self.members[member_id].surface_area


def spatial_parents(base: str, geo: SpatialTaxonomy) -> Tuple[str, str, str, str]:
    """City, Region, Country and All members above a city (or UNKNOWN)."""
    if base == UNKNOWN_MEMBER:
        return (UNKNOWN_MEMBER, UNKNOWN_MEMBER, UNKNOWN_MEMBER, ALL_MEMBER)
    member = geo.get(base)
    if member is None or member.level != "city":
        raise KeyError(f"{base!r} is not a city of the spatial taxonomy")
    region = geo.parent_of(base)
    country = geo.parent_of(region)
    return (base, region, country, ALL_MEMBER)


class SemanticSpatialHierarchy(BaseHierarchy[SpatialTaxonomy]):
    """Location -> City -> Region -> Country -> All over a spatial taxonomy.

    Location members are exact coordinate pairs; their City link comes from
    reverse geocoding at ingest and is registered with ``link_location``.
    """

    def __init__(self, taxonomy: SpatialTaxonomy, grid: GridConfig):
        super().__init__(SPATIAL, SEMANTIC_LEVELS, taxonomy)
        self.grid = grid
        self.location_city: Dict[str, str] = {}

    def link_location(self, location: str, city: str) -> None:
        self.location_city.setdefault(location, city)

    def parent(self, member: str, level: str) -> str:
        if level == "location":
            return self.location_city[member]
        if level in TAXONOMY_LEVELS:
            return self.source.parent_of(member)
        raise ValueError(f"{level} has no parent in the {self.name} hierarchy")

    def surface_area(self, member: str, level: str) -> float:
        if level == ALL_LEVEL:
            return EARTH_SURFACE_KM2
        if level == "location":
            return self.grid.cell_area_km2(0)
        return self.source.area_of(member)


class GridHierarchy(BaseHierarchy[GridConfig]):
    """Aligned equal-size grid cells ``g{level}:{ix}:{iy}``; a parent cell covers factor x factor children."""

    def __init__(self, grid: GridConfig):
        super().__init__(SPATIAL, grid.levels, grid)

    def parent(self, member: str, level: str) -> str:
        index = self.level_index(level)
        if index >= self.source.level_count - 1:
            return ALL_MEMBER
        _, ix, iy = member.split(":")
        factor = self.source.coarsening_factor
        return f"g{index + 1}:{int(ix) // factor}:{int(iy) // factor}"

    def roll_series(self, members: pd.Series, from_level: str, to_level: str) -> pd.Series:
        if from_level == to_level or to_level == ALL_LEVEL or members.empty:
            return super().roll_series(members, from_level, to_level)
        steps = self.level_index(to_level) - self.level_index(from_level)
        if steps < 0:
            raise ValueError(f"cannot roll {self.name} down from {from_level} to {to_level}")
        parts = members.str.split(":", expand=True)
        scale = self.source.coarsening_factor**steps
        ix = parts[1].astype(np.int64) // scale
        iy = parts[2].astype(np.int64) // scale
        return f"g{self.level_index(to_level)}:" + ix.astype(str) + ":" + iy.astype(str)

    def surface_area(self, member: str, level: str) -> float:
        if level == ALL_LEVEL:
            return EARTH_SURFACE_KM2
        return self.source.cell_area_km2(self.level_index(level))
