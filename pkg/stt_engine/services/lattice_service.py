import itertools
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models import (
    BOUNDARY,
    DATE,
    FACT_COUNT,
    FREQ,
    GROUP_COLUMNS,
    KEYWORD,
    SPATIAL,
    SURFACE_AREA,
    TEXTUAL,
    TIME_OF_DAY,
    CubeSchema,
    Cuboid,
    CuboidCoord,
    SpatialScheme,
    TextualScheme,
)

if TYPE_CHECKING:
    from .cube_service import SttCube

logger = logging.getLogger(__name__)

# Row count of a node whose size has not been estimated yet
UNKNOWN_ROWS = sys.maxsize
LATTICE_COLUMNS = ["coord", "row_count", "stored_rows", "materialized", "top_k"]


@dataclass(frozen=True)
class LatticeDimension:
    """One hierarchy as seen by the lattice: its levels and which steps only the base can cross."""

    name: str
    levels: Tuple[str, ...]
    fact_linked: Tuple[int, ...] = ()


@dataclass
class LatticeNode:
    coord: CuboidCoord
    index: Tuple[int, ...]
    row_count: int = UNKNOWN_ROWS
    materialized: bool = False
    stored_rows: Optional[int] = None
    top_k: Optional[int] = None

    @property
    def truncated(self) -> bool:
        return self.top_k is not None


class Lattice:
    """Dependency DAG of cuboids; ancestors are finer, descendants coarser."""

    def __init__(self, dimensions: Sequence[LatticeDimension]):
        self.dimensions = tuple(dimensions)
        self.nodes: Dict[CuboidCoord, LatticeNode] = {}
        for index in itertools.product(*(range(len(d.levels)) for d in self.dimensions)):
            coord = self.coord_of(index)
            self.nodes[coord] = LatticeNode(coord=coord, index=tuple(index))
        self.base = self.coord_of(tuple(0 for _ in self.dimensions))
        self.nodes[self.base].materialized = True

    @classmethod
    def from_levels(cls, levels: Mapping[str, Sequence[str]]) -> "Lattice":
        return cls([LatticeDimension(name, tuple(names)) for name, names in levels.items()])

    def coord_of(self, index: Sequence[int]) -> CuboidCoord:
        return CuboidCoord(tuple((d.name, d.levels[i]) for d, i in zip(self.dimensions, index)))

    def index_of(self, coord: CuboidCoord) -> Tuple[int, ...]:
        return self.nodes[coord].index

    def node(self, coord: CuboidCoord) -> LatticeNode:
        try:
            return self.nodes[coord]
        except KeyError:
            raise KeyError(f"{coord} is not a node of the lattice") from None

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes.values())

    def edges(self) -> List[Tuple[CuboidCoord, CuboidCoord]]:
        """Single-level roll-up edges, finer node first."""
        result = []
        for node in self.nodes.values():
            for position, dimension in enumerate(self.dimensions):
                if node.index[position] + 1 < len(dimension.levels):
                    child = list(node.index)
                    child[position] += 1
                    result.append((node.coord, self.coord_of(child)))
        return result

    def answers(self, source: CuboidCoord, target: CuboidCoord) -> bool:
        """Whether ``target`` can be computed from ``source`` alone.

        Every level of the source must be at or below the target's; a step
        only the base can cross (a fact-level link) must not be crossed by
        any other source.
        """
        s_index, t_index = self.index_of(source), self.index_of(target)
        if any(s > t for s, t in zip(s_index, t_index)):
            return False
        if source == self.base:
            return True
        for dimension, s, t in zip(self.dimensions, s_index, t_index):
            if any(s <= step < t for step in dimension.fact_linked):
                return False
        return True

    def descendants(self, coord: CuboidCoord) -> List[CuboidCoord]:
        """Nodes answerable from ``coord``, itself included."""
        return [other for other in self.nodes if self.answers(coord, other)]

    def ancestors(self, coord: CuboidCoord) -> List[CuboidCoord]:
        return [other for other in self.nodes if self.answers(other, coord)]

    def materialized(self) -> List[LatticeNode]:
        return [node for node in self.nodes.values() if node.materialized]

    def set_materialized(self, coord: CuboidCoord, stored_rows: Optional[int] = None, top_k: Optional[int] = None) -> None:
        node = self.node(coord)
        node.materialized = True
        node.top_k = top_k
        node.stored_rows = stored_rows

    def reset(self) -> None:
        """Forget every materialized node except the base."""
        for node in self.nodes.values():
            if node.coord != self.base:
                node.materialized, node.top_k, node.stored_rows = False, None, None

    def total_rows(self) -> int:
        return sum(node.row_count for node in self.materialized())

    def stored_total(self) -> int:
        return sum(node.stored_rows if node.stored_rows is not None else node.row_count for node in self.materialized())

    def set_sizes(self, sizes: Mapping[CuboidCoord, int]) -> None:
        for coord, rows in sizes.items():
            self.node(coord).row_count = int(rows)

    def copy(self) -> "Lattice":
        other = Lattice(self.dimensions)
        for coord, node in self.nodes.items():
            other.nodes[coord].row_count = node.row_count
        return other

    def dump(self) -> pd.DataFrame:
        """Nodes with their (size)(flag) annotations, finest first."""
        rows = [
            {
                "coord": node.coord.label,
                "row_count": node.row_count,
                "stored_rows": node.stored_rows if node.stored_rows is not None else (node.row_count if node.materialized else 0),
                "materialized": int(node.materialized),
                "top_k": node.top_k if node.top_k is not None else "",
            }
            for node in sorted(self.nodes.values(), key=lambda n: (sum(n.index), n.index))
        ]
        return pd.DataFrame(rows, columns=LATTICE_COLUMNS)

    def write_dump(self, path: Union[str, Path]) -> None:
        self.dump().to_csv(path, sep="\t", index=False)


def enumerate_lattice(schema: CubeSchema) -> Lattice:
    """One node per combination of hierarchy levels, in schema hierarchy order."""
    dimensions = [
        LatticeDimension(
            name=hierarchy.name,
            levels=hierarchy.levels,
            fact_linked=tuple(i for i, step in enumerate(hierarchy.steps) if step.fact_linked),
        )
        for hierarchy in schema.hierarchies()
    ]
    lattice = Lattice(dimensions)
    logger.debug(f"Enumerated lattice with {len(lattice)} nodes and {len(lattice.edges())} edges")
    return lattice


def cost(lattice: Lattice, coord: CuboidCoord) -> int:
    """Rows scanned to answer ``coord``: size of its smallest materialized ancestor."""
    return min(node.row_count for node in lattice.materialized() if lattice.answers(node.coord, coord))


def cost_map(lattice: Lattice) -> Dict[CuboidCoord, int]:
    materialized = lattice.materialized()
    return {
        coord: min(node.row_count for node in materialized if lattice.answers(node.coord, coord))
        for coord in lattice.nodes
    }


def benefit(
    lattice: Lattice,
    coord: CuboidCoord,
    costs: Optional[Mapping[CuboidCoord, int]] = None,
    descendants: Optional[Iterable[CuboidCoord]] = None,
) -> int:
    """Row-scan savings of materializing ``coord`` for itself and every node it answers."""
    size = lattice.node(coord).row_count
    costs = costs if costs is not None else cost_map(lattice)
    targets = descendants if descendants is not None else lattice.descendants(coord)
    return sum(max(0, costs[target] - size) for target in targets)


# Aggregation


def group_frame(cube: "SttCube", facts: pd.DataFrame, coord: CuboidCoord, spatial_scheme: Optional[SpatialScheme] = None) -> pd.DataFrame:
    """Date, time-of-day and spatial members of each fact at the levels of ``coord``."""
    scheme = spatial_scheme or cube.config.spatial_scheme
    frame = pd.DataFrame(index=facts.index)
    for name in GROUP_COLUMNS:
        frame[name] = fact_members(cube, facts, name, coord.get(name), scheme)
    return frame


def fact_members(cube: "SttCube", facts: pd.DataFrame, name: str, level: str, scheme: SpatialScheme) -> pd.Series:
    """Members of one group hierarchy linked to each fact."""
    hierarchy = cube.hierarchy(name, scheme)
    if name == DATE:
        return hierarchy.roll_series(facts["day"], "day", level)
    if name == TIME_OF_DAY:
        return hierarchy.roll_series(facts["second"], "second", level)
    if scheme == SpatialScheme.GRID:
        return hierarchy.roll_series(facts["cell0"], "cell0", level)
    if level == "location":
        return facts["location"]
    return hierarchy.roll_series(facts["city"], "city", level)


def uses_fact_theme(cube: "SttCube", textual_level: str) -> bool:
    """Majority and custom schemes link a fact to a single Theme; coarser levels follow it."""
    return cube.config.textual_scheme != TextualScheme.REPLICATION and textual_level != "term"


def keyword_members(cube: "SttCube", frame: pd.DataFrame, level: str) -> pd.Series:
    textual = cube.hierarchy(TEXTUAL)
    if uses_fact_theme(cube, level):
        return textual.roll_series(frame["theme"], "theme", level)
    return textual.roll_series(frame["term"], "term", level)


def area_column(cube: "SttCube", members: pd.Series, level: str, scheme: SpatialScheme) -> pd.Series:
    hierarchy = cube.hierarchy(SPATIAL, scheme)
    areas = {member: hierarchy.surface_area(member, level) for member in pd.unique(members)}
    return members.map(areas).astype(float)


def finish_frames(groups: pd.DataFrame, cells: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
    groups = groups.sort_values(list(GROUP_COLUMNS), kind="mergesort").reset_index(drop=True)
    cells = cells.sort_values(list(GROUP_COLUMNS) + [KEYWORD], kind="mergesort").reset_index(drop=True)
    groups[FACT_COUNT] = groups[FACT_COUNT].astype(np.int64)
    groups[BOUNDARY] = groups[BOUNDARY].astype(np.int64)
    cells[FREQ] = cells[FREQ].astype(np.int64)
    return groups, cells


def aggregate_facts(
    cube: "SttCube",
    target: CuboidCoord,
    fact_ids: Optional[np.ndarray] = None,
    spatial_scheme: Optional[SpatialScheme] = None,
) -> Cuboid:
    """Aggregate base facts (optionally a subset of fact ids) into the cells of ``target``."""
    scheme = spatial_scheme or cube.config.spatial_scheme
    facts = cube.facts.facts_frame
    if fact_ids is not None:
        facts = facts.iloc[np.asarray(fact_ids, dtype=np.int64)]
    keys = group_frame(cube, facts, target, scheme)

    groups = keys.groupby(list(GROUP_COLUMNS), sort=False).size().rename(FACT_COUNT).reset_index()
    groups[SURFACE_AREA] = area_column(cube, groups[SPATIAL], target.get(SPATIAL), scheme)
    groups[BOUNDARY] = 0

    textual_level = target.get(TEXTUAL)
    if uses_fact_theme(cube, textual_level):
        occurrences = keys.assign(**{KEYWORD: keyword_members(cube, facts, textual_level).values, FREQ: 1})
    else:
        terms = cube.facts.terms_frame
        if fact_ids is not None:
            terms = terms[terms["fact"].isin(facts["fact"])]
        occurrences = keys.reindex(terms["fact"].to_numpy()).reset_index(drop=True)
        occurrences[KEYWORD] = keyword_members(cube, terms, textual_level).to_numpy()
        occurrences[FREQ] = terms["count"].to_numpy()
    cells = occurrences.groupby(list(GROUP_COLUMNS) + [KEYWORD], sort=False)[FREQ].sum().reset_index()
    groups, cells = finish_frames(groups, cells)
    return Cuboid(coord=target, groups=groups, cells=cells)


def keyword_fact_counts(
    cube: "SttCube",
    target: CuboidCoord,
    fact_ids: Optional[np.ndarray] = None,
    spatial_scheme: Optional[SpatialScheme] = None,
) -> pd.DataFrame:
    """Distinct facts per (group, keyword) of ``target``, counted from base facts."""
    scheme = spatial_scheme or cube.config.spatial_scheme
    facts = cube.facts.facts_frame
    terms = cube.facts.terms_frame
    if fact_ids is not None:
        facts = facts.iloc[np.asarray(fact_ids, dtype=np.int64)]
        terms = terms[terms["fact"].isin(facts["fact"])]
    keys = group_frame(cube, facts, target, scheme)
    level = target.get(TEXTUAL)
    source = facts if uses_fact_theme(cube, level) else terms
    pairs = pd.DataFrame(
        {"fact": source["fact"].to_numpy(), KEYWORD: keyword_members(cube, source, level).to_numpy()}
    ).drop_duplicates()
    joined = keys.reindex(pairs["fact"].to_numpy()).reset_index(drop=True)
    joined[KEYWORD] = pairs[KEYWORD].to_numpy()
    counts = joined.groupby(list(GROUP_COLUMNS) + [KEYWORD], sort=False).size().rename(FACT_COUNT).reset_index()
    return counts.sort_values(list(GROUP_COLUMNS) + [KEYWORD], kind="mergesort").reset_index(drop=True)


def roll_cuboid(cube: "SttCube", cuboid: Cuboid, target: CuboidCoord, spatial_scheme: Optional[SpatialScheme] = None) -> Cuboid:
    """Group an untruncated cuboid's rows under the coarser levels of ``target``."""
    if cuboid.truncated:
        raise ValueError(f"cannot aggregate from truncated cuboid {cuboid.coord}")
    scheme = spatial_scheme or cube.config.spatial_scheme
    source = cuboid.coord

    def rolled(frame: pd.DataFrame) -> pd.DataFrame:
        frame = frame.copy()
        for name in GROUP_COLUMNS:
            frame[name] = cube.hierarchy(name, scheme).roll_series(frame[name], source.get(name), target.get(name))
        return frame

    groups = rolled(cuboid.groups).groupby(list(GROUP_COLUMNS), sort=False)[FACT_COUNT].sum().reset_index()
    groups[SURFACE_AREA] = area_column(cube, groups[SPATIAL], target.get(SPATIAL), scheme)
    groups[BOUNDARY] = 0
    cells = rolled(cuboid.cells)
    cells[KEYWORD] = cube.hierarchy(TEXTUAL).roll_series(cells[KEYWORD], source.get(TEXTUAL), target.get(TEXTUAL))
    cells = cells.groupby(list(GROUP_COLUMNS) + [KEYWORD], sort=False)[FREQ].sum().reset_index()
    groups, cells = finish_frames(groups, cells)
    return Cuboid(coord=target, groups=groups, cells=cells)


def aggregate(cube: "SttCube", target: CuboidCoord, source: CuboidCoord) -> Cuboid:
    """Cells of ``target`` computed from the materialized ``source``."""
    lattice = cube.lattice
    if not lattice.answers(source, target):
        raise ValueError(f"{source} cannot answer {target}")
    if source == lattice.base:
        return aggregate_facts(cube, target)
    if source not in cube.cuboids:
        raise ValueError(f"{source} is not materialized")
    return roll_cuboid(cube, cube.cuboids[source], target)


def smallest_source(cube: "SttCube", target: CuboidCoord, allow_truncated: bool = False) -> CuboidCoord:
    """Built node answering ``target`` with the fewest stored rows (ties by label); the base is always a candidate."""
    lattice = cube.lattice
    best, best_key = lattice.base, (cube.base_rows(), lattice.base.label)
    for coord, cuboid in cube.cuboids.items():
        if (allow_truncated or not cuboid.truncated) and lattice.answers(coord, target):
            key = (cuboid.row_count, coord.label)
            if key < best_key:
                best, best_key = coord, key
    return best


# Size estimation


def _combine(codes: Sequence[np.ndarray], cardinalities: Sequence[int]) -> Tuple[np.ndarray, int]:
    """Mixed-radix key of several integer code columns, re-factorized when the radix would overflow."""
    key = np.zeros(len(codes[0]) if codes else 0, dtype=np.int64)
    cardinality = 1
    for column, size in zip(codes, cardinalities):
        size = max(int(size), 1)
        if cardinality * size >= 2**62:
            key, uniques = pd.factorize(key)
            cardinality = len(uniques)
        key = key * size + column
        cardinality *= size
    return key, cardinality


def _codes(series: pd.Series) -> Tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(series, sort=False)
    return codes.astype(np.int64), len(uniques)


def estimate_sizes(
    cube: "SttCube",
    coords: Optional[Iterable[CuboidCoord]] = None,
    method: Optional[str] = None,
    fraction: Optional[float] = None,
    seed: int = 0,
) -> Dict[CuboidCoord, int]:
    """Row counts of lattice nodes from integer-coded distinct counting over the fact store."""
    lattice = cube.lattice
    method = method or cube.config.size_estimator
    fraction = fraction or cube.config.sample_fraction
    coords = list(coords) if coords is not None else list(lattice.nodes)
    facts, terms = cube.facts.facts_frame, cube.facts.terms_frame
    if not len(facts):
        sizes = {coord: 0 for coord in coords}
        lattice.set_sizes(sizes)
        return sizes

    occurrence_fact = terms["fact"].to_numpy(dtype=np.int64)
    if method == "sample":
        rng = np.random.default_rng(seed)
        fact_rows = np.sort(rng.choice(len(facts), size=max(1, int(len(facts) * fraction)), replace=False))
        occurrence_rows = np.flatnonzero(np.isin(occurrence_fact, fact_rows))
        scale = len(facts) / len(fact_rows)
    else:
        fact_rows = np.arange(len(facts))
        occurrence_rows = np.arange(len(terms))
        scale = 1.0

    level_codes: Dict[Tuple[str, str], Tuple[np.ndarray, int]] = {}

    def codes_for(name: str, level: str) -> Tuple[np.ndarray, int]:
        if (name, level) not in level_codes:
            if name == TEXTUAL:
                frame = facts if uses_fact_theme(cube, level) else terms
                level_codes[(name, level)] = _codes(keyword_members(cube, frame, level))
            else:
                level_codes[(name, level)] = _codes(fact_members(cube, facts, name, level, cube.config.spatial_scheme))
        return level_codes[(name, level)]

    sizes: Dict[CuboidCoord, int] = {}
    by_groups: Dict[Tuple[str, ...], List[CuboidCoord]] = {}
    for coord in coords:
        by_groups.setdefault(tuple(coord.get(name) for name in GROUP_COLUMNS), []).append(coord)

    for group_levels, members in by_groups.items():
        parts = [codes_for(name, level) for name, level in zip(GROUP_COLUMNS, group_levels)]
        fact_key, fact_card = _combine([p[0] for p in parts], [p[1] for p in parts])
        for coord in members:
            text_codes, text_card = codes_for(TEXTUAL, coord.get(TEXTUAL))
            if uses_fact_theme(cube, coord.get(TEXTUAL)):
                key, _ = _combine([fact_key[fact_rows], text_codes[fact_rows]], [fact_card, text_card])
            else:
                key, _ = _combine(
                    [fact_key[occurrence_fact[occurrence_rows]], text_codes[occurrence_rows]], [fact_card, text_card]
                )
            distinct = len(pd.unique(key))
            full = len(facts) if uses_fact_theme(cube, coord.get(TEXTUAL)) else len(terms)
            sizes[coord] = min(full, int(round(distinct * scale)))

    lattice.set_sizes(sizes)
    logger.debug(f"Estimated sizes of {len(sizes)} cuboids ({method})")
    return sizes
