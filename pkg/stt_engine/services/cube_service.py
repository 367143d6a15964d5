import logging
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .. import config as settings
from ..errors import SchemaMismatchError, SttCubeError
from ..hierarchies import (
    DateHierarchy,
    GridHierarchy,
    SemanticSpatialHierarchy,
    SpatialTaxonomy,
    TextTaxonomy,
    TextualHierarchy,
    TimeOfDayHierarchy,
    build_temporal,
    load_importance,
    textual_parent_custom,
    textual_parent_majority,
)
from ..hierarchies.base_hierarchy import BaseHierarchy
from ..models import (
    DATE,
    SPATIAL,
    TEXTUAL,
    TIME_OF_DAY,
    UNKNOWN_MEMBER,
    CubeConfig,
    CubeSchema,
    Cuboid,
    CuboidCoord,
    FactRow,
    MaterializationConfig,
    Member,
    MemberStore,
    Rejection,
    SpatialScheme,
    SttObject,
    TextualScheme,
)
from . import ingest_service
from .lattice_service import UNKNOWN_ROWS, Lattice, enumerate_lattice, estimate_sizes

logger = logging.getLogger(__name__)

# Member store keys
SEMANTIC = "semantic"
GRID = "grid"
MEMBER_HIERARCHIES = (DATE, TIME_OF_DAY, SEMANTIC, GRID, TEXTUAL)
FACT_COLUMNS = ["fact", "day", "second", "ts", "location", "cell0", "city", "theme", "n_terms"]
TERM_COLUMNS = ["fact", "term", "count"]


@dataclass
class Taxonomies:
    geo: SpatialTaxonomy
    text: TextTaxonomy
    importance: Dict[str, float]
    geo_path: Optional[Path] = None
    text_path: Optional[Path] = None
    importance_path: Optional[Path] = None


def load_taxonomies(
    geo_path: Optional[Union[str, Path]] = None,
    text_path: Optional[Union[str, Path]] = None,
    importance_path: Optional[Union[str, Path]] = None,
) -> Taxonomies:
    """Load the spatial, textual and importance taxonomies (packaged defaults when a path is omitted)."""
    geo_path = Path(geo_path or settings.DEFAULT_GEO_TAXONOMY)
    text_path = Path(text_path or settings.DEFAULT_TEXT_TAXONOMY)
    importance_path = Path(importance_path or settings.DEFAULT_IMPORTANCE)
    return Taxonomies(
        geo=SpatialTaxonomy.load(geo_path),
        text=TextTaxonomy.load(text_path),
        importance=load_importance(importance_path),
        geo_path=geo_path,
        text_path=text_path,
        importance_path=importance_path,
    )


class FactStore:
    """Append-only base facts with cached columnar views."""

    def __init__(self):
        self.rows: List[FactRow] = []
        self._fact_chunks: List[pd.DataFrame] = []
        self._term_chunks: List[pd.DataFrame] = []
        self._facts: Optional[pd.DataFrame] = None
        self._terms: Optional[pd.DataFrame] = None

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, rows: Sequence[FactRow]) -> np.ndarray:
        """Append facts and return their ids (positions in the store)."""
        start = len(self.rows)
        ids = np.arange(start, start + len(rows), dtype=np.int64)
        if not rows:
            return ids
        self.rows.extend(rows)
        self._fact_chunks.append(
            pd.DataFrame(
                {
                    "fact": ids,
                    "day": [row.day for row in rows],
                    "second": [row.second for row in rows],
                    "ts": np.array([row.epoch for row in rows], dtype=np.int64),
                    "location": [row.location for row in rows],
                    "cell0": [row.cell0 for row in rows],
                    "city": [row.city for row in rows],
                    "theme": [row.theme for row in rows],
                    "n_terms": np.array([len(row.terms) for row in rows], dtype=np.int64),
                },
                index=ids,
            )
        )
        fact_ids, terms, counts = [], [], []
        for fact, row in zip(ids.tolist(), rows):
            for term, count in Counter(row.terms).items():
                fact_ids.append(fact)
                terms.append(term)
                counts.append(count)
        self._term_chunks.append(
            pd.DataFrame(
                {"fact": np.array(fact_ids, dtype=np.int64), "term": terms, "count": np.array(counts, dtype=np.int64)}
            )
        )
        self._facts = self._terms = None
        return ids

    @property
    def facts_frame(self) -> pd.DataFrame:
        if self._facts is None:
            if self._fact_chunks:
                self._facts = pd.concat(self._fact_chunks)
                self._fact_chunks = [self._facts]
            else:
                self._facts = pd.DataFrame({column: pd.Series(dtype=object) for column in FACT_COLUMNS})
        return self._facts

    @property
    def terms_frame(self) -> pd.DataFrame:
        if self._terms is None:
            if self._term_chunks:
                self._terms = pd.concat(self._term_chunks, ignore_index=True)
                self._term_chunks = [self._terms]
            else:
                self._terms = pd.DataFrame({column: pd.Series(dtype=object) for column in TERM_COLUMNS})
        return self._terms


class SttCube:
    """Facts, members, lattice and materialized cuboids of one spatio-textual-temporal cube."""

    def __init__(
        self,
        config: CubeConfig,
        taxonomies: Taxonomies,
        members: Optional[MemberStore] = None,
        facts: Optional[FactStore] = None,
    ):
        self.config = config
        self.schema: CubeSchema = config.schema_()
        self.taxonomies = taxonomies
        self.members = members or MemberStore()
        self.facts = facts or FactStore()
        self.date_hierarchy = DateHierarchy()
        self.time_of_day_hierarchy = TimeOfDayHierarchy()
        self.semantic_hierarchy = SemanticSpatialHierarchy(taxonomies.geo, config.grid)
        self.grid_hierarchy = GridHierarchy(config.grid)
        self.textual_hierarchy = TextualHierarchy(taxonomies.text)
        for location in self.members.ids(SEMANTIC, "location"):
            self.semantic_hierarchy.link_location(location, self.members.get(SEMANTIC, "location", location).parent)
        self.lattice: Lattice = enumerate_lattice(self.schema)
        self.cuboids: Dict[CuboidCoord, Cuboid] = {}
        self.rejected = 0
        self.unknown_locations = 0

    def hierarchy(self, name: str, spatial_scheme: Optional[SpatialScheme] = None) -> BaseHierarchy:
        if name == DATE:
            return self.date_hierarchy
        if name == TIME_OF_DAY:
            return self.time_of_day_hierarchy
        if name == TEXTUAL:
            return self.textual_hierarchy
        if name == SPATIAL:
            scheme = spatial_scheme or self.config.spatial_scheme
            return self.grid_hierarchy if scheme == SpatialScheme.GRID else self.semantic_hierarchy
        raise KeyError(f"unknown hierarchy {name!r}")

    @property
    def base_coord(self) -> CuboidCoord:
        return self.lattice.base

    @property
    def fact_count(self) -> int:
        return len(self.facts)

    def spatial_base_level(self, scheme: Optional[SpatialScheme] = None) -> str:
        scheme = scheme or self.config.spatial_scheme
        return self.grid_hierarchy.levels[0] if scheme == SpatialScheme.GRID else "location"

    def member_key(self, scheme: Optional[SpatialScheme] = None) -> str:
        scheme = scheme or self.config.spatial_scheme
        return GRID if scheme == SpatialScheme.GRID else SEMANTIC

    def ensure_sizes(self) -> None:
        """Estimate every node whose row count is still unknown."""
        unknown = [node.coord for node in self.lattice if node.row_count == UNKNOWN_ROWS]
        if unknown:
            estimate_sizes(self, unknown)

    def base_rows(self) -> int:
        node = self.lattice.node(self.base_coord)
        if node.row_count == UNKNOWN_ROWS:
            estimate_sizes(self, [self.base_coord])
        return node.row_count

    def storage_rows(self) -> Tuple[int, int]:
        """Rows stored by the base and by all other materialized cuboids."""
        return self.base_rows(), sum(cuboid.row_count for cuboid in self.cuboids.values())

    def store(self, cuboid: Cuboid) -> None:
        self.cuboids[cuboid.coord] = cuboid
        self.lattice.set_materialized(cuboid.coord, stored_rows=cuboid.row_count, top_k=cuboid.top_k)

    def clear_materialized(self) -> None:
        self.cuboids.clear()
        self.lattice.reset()

    def fork(self, materialization: Optional[MaterializationConfig] = None) -> "SttCube":
        """A cube over the same facts and members with only the base materialized."""
        cfg = self.config if materialization is None else self.config.model_copy(update={"materialization": materialization})
        other = SttCube(cfg, self.taxonomies, members=self.members, facts=self.facts)
        other.semantic_hierarchy = self.semantic_hierarchy
        other.lattice = self.lattice.copy()
        other.rejected, other.unknown_locations = self.rejected, self.unknown_locations
        return other

    # Construction

    def ingest(self, objects: Iterable[Union[SttObject, Rejection]]) -> np.ndarray:
        """Link objects to base members, register new members and append facts; returns new fact ids."""
        accepted: List[SttObject] = []
        for item in objects:
            if isinstance(item, Rejection):
                self.rejected += 1
            else:
                accepted.append(item)
        if not accepted:
            return np.arange(0, dtype=np.int64)

        lat = [obj.location.lat for obj in accepted]
        lon = [obj.location.lon for obj in accepted]
        locations = [obj.location.member_id() for obj in accepted]
        cities = self._geocode(locations, lat, lon)
        cell0 = ingest_service.grid_cells(lat, lon, self.config.grid, 0)
        self.unknown_locations += cities.count(UNKNOWN_MEMBER)

        rows: List[FactRow] = []
        for obj, location, city, cell in zip(accepted, locations, cities, cell0):
            temporal = build_temporal(obj.timestamp)
            rows.append(
                FactRow(
                    day=temporal.date["day"],
                    second=temporal.time_of_day["second"],
                    location=location,
                    cell0=cell,
                    city=city,
                    terms=tuple(obj.terms),
                    theme=self._fact_theme(obj.terms),
                    epoch=int(obj.timestamp.timestamp()),
                )
            )
        self._register_members(rows)
        ids = self.facts.append(rows)
        for node in self.lattice:
            node.row_count = UNKNOWN_ROWS
        logger.info(f"Ingested {len(rows)} facts ({self.fact_count} total)")
        return ids

    def _geocode(self, locations: List[str], lat: List[float], lon: List[float]) -> List[str]:
        """City of every location; a location keeps the city it was first linked to."""
        known = self.semantic_hierarchy.location_city
        pending: Dict[str, Tuple[float, float]] = {}
        for location, la, lo in zip(locations, lat, lon):
            if location not in known and location not in pending:
                pending[location] = (la, lo)
        if pending:
            points = list(pending.values())
            found = ingest_service.reverse_geocode_many(
                [p[0] for p in points], [p[1] for p in points], self.taxonomies.geo, self.config.geocode_cutoff_km
            )
            for location, city in zip(pending, found):
                self.semantic_hierarchy.link_location(location, city)
        return [known[location] for location in locations]

    def _fact_theme(self, terms: Sequence[str]) -> Optional[str]:
        scheme = self.config.textual_scheme
        if scheme == TextualScheme.MAJORITY:
            return textual_parent_majority(terms, self.taxonomies.text)
        if scheme == TextualScheme.CUSTOM:
            return textual_parent_custom(terms, self.taxonomies.text, self.taxonomies.importance)
        return None

    def _add_chain(self, key: str, hierarchy: BaseHierarchy, member: str, level: str, name: Optional[str] = None) -> None:
        levels = hierarchy.levels[hierarchy.level_index(level) :]
        chain = hierarchy.chain(member, level)
        for position, (current, current_level) in enumerate(zip(chain, levels)):
            parent = chain[position + 1] if position + 1 < len(chain) else None
            area = hierarchy.surface_area(current, current_level)
            label = name if position == 0 and name else self._display_name(current)
            if not self.members.add(key, Member(id=current, level=current_level, name=label, parent=parent, surface_area=area)):
                if position:
                    break

    def _display_name(self, member: str) -> str:
        geo = self.taxonomies.geo.get(member)
        return geo.name if geo is not None else member

    def _register_members(self, rows: Sequence[FactRow]) -> None:
        for row in rows:
            if not self.members.contains(DATE, "day", row.day):
                self._add_chain(DATE, self.date_hierarchy, row.day, "day")
            if not self.members.contains(TIME_OF_DAY, "second", row.second):
                self._add_chain(TIME_OF_DAY, self.time_of_day_hierarchy, row.second, "second")
            if not self.members.contains(SEMANTIC, "location", row.location):
                self._add_chain(SEMANTIC, self.semantic_hierarchy, row.location, "location")
            if not self.members.contains(GRID, "cell0", row.cell0):
                self._add_chain(GRID, self.grid_hierarchy, row.cell0, "cell0")
            for term in row.terms:
                if not self.members.contains(TEXTUAL, "term", term):
                    self._add_chain(TEXTUAL, self.textual_hierarchy, term, "term")


def _objects_of(objects: Iterable[Union[SttObject, Rejection]]) -> List[Union[SttObject, Rejection]]:
    return list(objects or [])


def construct(
    objects: Iterable[Union[SttObject, Rejection]],
    taxonomies: Optional[Taxonomies] = None,
    config: Optional[CubeConfig] = None,
) -> SttCube:
    """
    Build a cube from STT objects and materialize cuboids per the configured strategy

    Args:
        objects: parsed objects; rejections are counted, not stored
        taxonomies: spatial, textual and importance taxonomies (packaged defaults when omitted)
        config: schemes, grid, materialization strategy and budget

    Returns:
        The constructed cube
    """
    from .materialize_service import apply_strategy

    config = config or CubeConfig()
    taxonomies = taxonomies or load_taxonomies()
    cube = SttCube(config, taxonomies)
    cube.ingest(_objects_of(objects))
    apply_strategy(cube, config.materialization)
    logger.info(
        f"Constructed cube: {cube.fact_count} facts, {cube.rejected} rejected, "
        f"{cube.unknown_locations} UNKNOWN locations, {len(cube.cuboids)} materialized cuboids"
    )
    return cube


SCHEMA_FIELDS = ("spatial_scheme", "textual_scheme", "grid")


def check_compatible(cube: SttCube, config: CubeConfig) -> None:
    for name in SCHEMA_FIELDS:
        if getattr(cube.config, name) != getattr(config, name):
            raise SchemaMismatchError(
                f"cube was built with {name}={getattr(cube.config, name)!r}, update requested {getattr(config, name)!r}"
            )


def update(
    cube: SttCube,
    new_objects: Iterable[Union[SttObject, Rejection]],
    config: Optional[CubeConfig] = None,
    full_rebuild: bool = False,
) -> SttCube:
    """Append objects and re-aggregate the materialized cuboids they touch."""
    from .materialize_service import rebuild_materialized, refresh_materialized

    if config is not None:
        check_compatible(cube, config)
    new_ids = cube.ingest(_objects_of(new_objects))
    if not len(new_ids):
        logger.info("Update carried no new facts; cube unchanged")
        return cube
    if full_rebuild:
        rebuild_materialized(cube)
    else:
        refresh_materialized(cube, new_ids)
    logger.info(f"Updated cube with {len(new_ids)} facts")
    return cube


class CubeService:
    """Registry of named cubes with one writer at a time per cube."""

    def __init__(self, data_dir: Optional[Union[str, Path]] = None):
        self.data_dir = Path(data_dir or settings.DATA_DIR)
        self._cubes: Dict[str, SttCube] = {}
        self._locks: Dict[str, threading.RLock] = {}
        self._registry_lock = threading.Lock()

    def _lock(self, name: str) -> threading.RLock:
        with self._registry_lock:
            return self._locks.setdefault(name, threading.RLock())

    @contextmanager
    def writing(self, name: str) -> Iterator[None]:
        with self._lock(name):
            yield

    def names(self) -> List[str]:
        return sorted(self._cubes)

    def get(self, name: str) -> SttCube:
        if name not in self._cubes:
            path = self.data_dir / name
            if not (path / "schema.json").exists():
                raise KeyError(f"no cube named {name!r}")
            from .storage_service import load_cube

            self._cubes[name] = load_cube(path)
        return self._cubes[name]

    def build(
        self,
        name: str,
        objects: Iterable[Union[SttObject, Rejection]],
        taxonomies: Optional[Taxonomies] = None,
        config: Optional[CubeConfig] = None,
        persist: bool = False,
    ) -> SttCube:
        if not name or "/" in name or name.startswith("."):
            raise SttCubeError(f"invalid cube name {name!r}")
        with self.writing(name):
            cube = construct(objects, taxonomies, config)
            self._cubes[name] = cube
            if persist:
                self.persist(name)
        return cube

    def update(self, name: str, objects: Iterable[Union[SttObject, Rejection]], persist: bool = False) -> SttCube:
        with self.writing(name):
            cube = update(self.get(name), objects)
            if persist:
                self.persist(name)
        return cube

    def materialize(self, name: str, materialization: MaterializationConfig, persist: bool = False) -> SttCube:
        from .materialize_service import apply_strategy

        with self.writing(name):
            cube = self.get(name)
            apply_strategy(cube, materialization)
            if persist:
                self.persist(name)
        return cube

    def persist(self, name: str) -> Path:
        from .storage_service import save_cube

        return save_cube(self.get(name), self.data_dir / name)

    def drop(self, name: str) -> None:
        with self.writing(name):
            self._cubes.pop(name, None)


# Global instance
cube_service = CubeService()
