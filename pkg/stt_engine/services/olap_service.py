import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import QueryValidationError
from ..hierarchies.temporal_hierarchy import SECONDS_PER_DAY
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
    CuboidCoord,
    SpatialScheme,
    to_utc,
)
from .lattice_service import area_column, aggregate_facts, finish_frames, keyword_fact_counts, roll_cuboid, smallest_source

if TYPE_CHECKING:
    from .cube_service import SttCube

logger = logging.getLogger(__name__)


def _column(hierarchy: str) -> str:
    return KEYWORD if hierarchy == TEXTUAL else hierarchy


def group_spans(cube: "SttCube", frame: pd.DataFrame, date_level: str, time_level: str) -> Tuple[np.ndarray, np.ndarray]:
    """Epoch-second hull [start, end) of the instants each row's date and time-of-day members cover."""
    date_spans = {
        member: tuple(int(t.timestamp()) for t in cube.date_hierarchy.span(member, date_level))
        for member in pd.unique(frame[DATE])
    }
    time_spans = {member: cube.time_of_day_hierarchy.span(member, time_level) for member in pd.unique(frame[TIME_OF_DAY])}
    date_start = frame[DATE].map(lambda m: date_spans[m][0]).to_numpy(np.int64)
    date_end = frame[DATE].map(lambda m: date_spans[m][1]).to_numpy(np.int64)
    time_start = frame[TIME_OF_DAY].map(lambda m: time_spans[m][0]).to_numpy(np.int64)
    time_end = frame[TIME_OF_DAY].map(lambda m: time_spans[m][1]).to_numpy(np.int64)
    return date_start + time_start, date_end - SECONDS_PER_DAY + time_end


# Predicates


class Predicate(ABC):
    """Boolean condition over view rows; rows carry group members, keyword and measures."""

    @abstractmethod
    def mask(self, view: "CubeView", frame: pd.DataFrame) -> pd.Series:
        """Boolean series aligned with ``frame``."""

    def references(self) -> Tuple[str, ...]:
        return ()

    def __and__(self, other: "Predicate") -> "Predicate":
        return And((self, other))

    def __or__(self, other: "Predicate") -> "Predicate":
        return Or((self, other))

    def __invert__(self) -> "Predicate":
        return Not(self)


@dataclass(frozen=True)
class Always(Predicate):
    def mask(self, view, frame):
        return pd.Series(True, index=frame.index)


@dataclass(frozen=True)
class TimeRange(Predicate):
    """Rows whose whole time span lies in [start, end)."""

    start: datetime
    end: datetime

    def mask(self, view, frame):
        starts, ends = group_spans(view.cube, frame, view.coord[DATE], view.coord[TIME_OF_DAY])
        lower, upper = int(to_utc(self.start).timestamp()), int(to_utc(self.end).timestamp())
        return pd.Series((starts >= lower) & (ends <= upper), index=frame.index)

    def references(self):
        return (DATE, TIME_OF_DAY)


@dataclass(frozen=True)
class MemberIn(Predicate):
    """Rows whose member of ``hierarchy`` (rolled to ``level`` when given) is one of ``members``."""

    hierarchy: str
    members: Tuple[str, ...]
    level: Optional[str] = None

    def mask(self, view, frame):
        column = frame[_column(self.hierarchy)]
        current = view.coord[self.hierarchy]
        if self.level is not None and self.level != current:
            column = view.cube.hierarchy(self.hierarchy, view.spatial_scheme).roll_series(column, current, self.level)
        return column.isin(set(self.members))

    def references(self):
        return (self.hierarchy,)


def KeywordIn(keywords: Sequence[str], level: Optional[str] = None) -> MemberIn:
    return MemberIn(TEXTUAL, tuple(keywords), level)


@dataclass(frozen=True)
class MeasureAtLeast(Predicate):
    """Rows whose fact_count, freq or density reaches ``threshold``."""

    measure: str
    threshold: float

    def mask(self, view, frame):
        if self.measure == "density":
            values = frame[FREQ] / frame[SURFACE_AREA]
        elif self.measure in (FACT_COUNT, FREQ):
            values = frame[self.measure]
        else:
            raise QueryValidationError(f"unknown measure {self.measure!r} in condition")
        return values >= self.threshold

    def references(self):
        return (TEXTUAL,) if self.measure != FACT_COUNT else ()


@dataclass(frozen=True)
class And(Predicate):
    parts: Tuple[Predicate, ...]

    def mask(self, view, frame):
        result = pd.Series(True, index=frame.index)
        for part in self.parts:
            result &= part.mask(view, frame)
        return result

    def references(self):
        return tuple(name for part in self.parts for name in part.references())


@dataclass(frozen=True)
class Or(Predicate):
    parts: Tuple[Predicate, ...]

    def mask(self, view, frame):
        result = pd.Series(False, index=frame.index)
        for part in self.parts:
            result |= part.mask(view, frame)
        return result

    def references(self):
        return tuple(name for part in self.parts for name in part.references())


@dataclass(frozen=True)
class Not(Predicate):
    part: Predicate

    def mask(self, view, frame):
        return ~self.part.mask(view, frame)

    def references(self):
        return self.part.references()


# Views


@dataclass
class CubeView:
    """A cube at one level per hierarchy, possibly sliced and diced.

    Sliced hierarchies keep a constant column so that later operators can
    still address the rows; they are no longer listed as dimensions.
    """

    cube: "SttCube"
    coord: CuboidCoord
    groups: pd.DataFrame
    cells: pd.DataFrame
    spatial_scheme: SpatialScheme
    sliced: Tuple[Tuple[str, str], ...] = ()
    textual_filtered: bool = False
    conditions: Tuple[Predicate, ...] = field(default_factory=tuple)

    @property
    def dimensions(self) -> Tuple[str, ...]:
        removed = {name for name, _ in self.sliced}
        return tuple(name for name in self.coord.names if name not in removed)

    def fact_count(self) -> int:
        return int(self.groups[FACT_COUNT].sum())

    def keyword_frequencies(self) -> pd.Series:
        return self.cells.groupby(KEYWORD)[FREQ].sum().sort_index()

    def cell_rows(self) -> pd.DataFrame:
        """Cells joined with their group's fact count and surface area."""
        return self.cells.merge(self.groups, on=list(GROUP_COLUMNS), how="left")


def _frames(cube: "SttCube", coord: CuboidCoord, scheme: SpatialScheme) -> Tuple[pd.DataFrame, pd.DataFrame]:
    if scheme != cube.config.spatial_scheme:
        cuboid = aggregate_facts(cube, coord, spatial_scheme=scheme)
    else:
        source = smallest_source(cube, coord)
        if source == coord and source in cube.cuboids:
            cuboid = cube.cuboids[source]
        elif source == cube.base_coord:
            cuboid = aggregate_facts(cube, coord)
        else:
            cuboid = roll_cuboid(cube, cube.cuboids[source], coord)
    return cuboid.groups.copy(), cuboid.cells.copy()


def view_of(cube: "SttCube", coord: Optional[CuboidCoord] = None, spatial_scheme: Optional[SpatialScheme] = None) -> CubeView:
    """Exact view at ``coord`` (the base coordinate when omitted) from the smallest untruncated source."""
    scheme = spatial_scheme or cube.config.spatial_scheme
    if coord is None:
        coord = cube.base_coord if scheme == cube.config.spatial_scheme else cube.base_coord.replace(
            SPATIAL, cube.spatial_base_level(scheme)
        )
    groups, cells = _frames(cube, coord, scheme)
    return CubeView(cube=cube, coord=coord, groups=groups, cells=cells, spatial_scheme=scheme)


def _check_level(view: CubeView, hierarchy: str, level: str) -> Tuple[int, int]:
    if hierarchy not in view.coord.names:
        raise QueryValidationError(f"unknown hierarchy {hierarchy!r}")
    levels = view.cube.hierarchy(hierarchy, view.spatial_scheme).levels
    if level not in levels:
        raise QueryValidationError(f"{level!r} is not a level of {hierarchy}")
    return levels.index(view.coord[hierarchy]), levels.index(level)


def _keep_groups_with_cells(groups: pd.DataFrame, cells: pd.DataFrame) -> pd.DataFrame:
    keys = list(GROUP_COLUMNS)
    present = cells[keys].drop_duplicates()
    return groups.merge(present, on=keys, how="inner")


def stt_slice(view: CubeView, hierarchy: str, member: str, level: Optional[str] = None) -> CubeView:
    """Fix one hierarchy to a member (rolling up to ``level`` first) and drop it from the dimensions."""
    if hierarchy in {name for name, _ in view.sliced}:
        raise QueryValidationError(f"{hierarchy} is already sliced")
    if level is not None and level != view.coord[hierarchy]:
        view = stt_rollup(view, hierarchy, level)
    column = _column(hierarchy)
    if hierarchy == TEXTUAL:
        cells = view.cells[view.cells[KEYWORD] == member]
        counts = keyword_fact_counts(view.cube, view.coord, spatial_scheme=view.spatial_scheme)
        counts = counts[counts[KEYWORD] == member].drop(columns=[KEYWORD])
        groups = _keep_groups_with_cells(view.groups.drop(columns=[FACT_COUNT]), cells).merge(
            counts, on=list(GROUP_COLUMNS), how="left"
        )
        groups = groups[view.groups.columns]
    else:
        groups = view.groups[view.groups[column] == member]
        cells = view.cells[view.cells[column] == member]
    if groups.empty:
        logger.warning(f"Slice on {hierarchy}={member!r} at {view.coord[hierarchy]} matched no cells")
    groups, cells = finish_frames(groups, cells)
    return replace(
        view,
        groups=groups,
        cells=cells,
        sliced=view.sliced + ((hierarchy, member),),
        textual_filtered=view.textual_filtered or hierarchy == TEXTUAL,
    )


def stt_dice(view: CubeView, condition: Predicate) -> CubeView:
    """Remove the cells failing ``condition``; groups left without cells go too."""
    rows = view.cell_rows()
    keep = condition.mask(view, rows).to_numpy(bool)
    cells = view.cells[keep]
    groups = _keep_groups_with_cells(view.groups, cells)
    groups, cells = finish_frames(groups, cells)
    logger.debug(f"Dice kept {len(cells)} of {len(view.cells)} cells")
    return replace(
        view,
        groups=groups,
        cells=cells,
        conditions=view.conditions + (condition,),
        textual_filtered=view.textual_filtered or TEXTUAL in condition.references(),
    )


def _regroup(view: CubeView, coord: CuboidCoord, groups: pd.DataFrame, cells: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
    keys = list(GROUP_COLUMNS)
    groups = groups.groupby(keys, sort=False)[FACT_COUNT].sum().reset_index()
    groups[SURFACE_AREA] = area_column(view.cube, groups[SPATIAL], coord[SPATIAL], view.spatial_scheme)
    groups[BOUNDARY] = 0
    cells = cells.groupby(keys + [KEYWORD], sort=False)[FREQ].sum().reset_index()
    return finish_frames(groups, cells)


def _crosses_fact_link(view: CubeView, hierarchy: str, start: int, end: int) -> bool:
    if hierarchy != TEXTUAL:
        return False
    dimension = next(d for d in view.cube.lattice.dimensions if d.name == TEXTUAL)
    return any(start <= step < end for step in dimension.fact_linked)


def stt_rollup(view: CubeView, hierarchy: str, level: str) -> CubeView:
    """Aggregate one hierarchy up to ``level``; several steps are applied as one composed roll."""
    current, target = _check_level(view, hierarchy, level)
    if target < current:
        raise QueryValidationError(f"cannot roll {hierarchy} up from {view.coord[hierarchy]} to finer {level}")
    if hierarchy in {name for name, _ in view.sliced}:
        raise QueryValidationError(f"{hierarchy} is sliced and cannot be rolled up")
    coord = view.coord.replace(hierarchy, level)
    if target == current:
        return view

    if _crosses_fact_link(view, hierarchy, current, target):
        if view.textual_filtered:
            raise QueryValidationError("a keyword-filtered view cannot be rolled across a fact-level textual link")
        groups, cells = _frames(view.cube, coord, view.spatial_scheme)
        present = view.groups[list(GROUP_COLUMNS)].drop_duplicates()
        groups = groups.merge(present, on=list(GROUP_COLUMNS), how="inner")
        cells = cells.merge(present, on=list(GROUP_COLUMNS), how="inner")
        groups, cells = finish_frames(groups, cells)
        return replace(view, coord=coord, groups=groups, cells=cells)

    roller = view.cube.hierarchy(hierarchy, view.spatial_scheme)
    column = _column(hierarchy)
    groups, cells = view.groups.copy(), view.cells.copy()
    if hierarchy != TEXTUAL:
        groups[column] = roller.roll_series(groups[column], view.coord[hierarchy], level)
    cells[column] = roller.roll_series(cells[column], view.coord[hierarchy], level)
    groups, cells = _regroup(view, coord, groups, cells)
    return replace(view, coord=coord, groups=groups, cells=cells)


def stt_drilldown(view: CubeView, hierarchy: str, level: str) -> CubeView:
    """Recompute one hierarchy at the finer ``level`` and keep the rows under the view's current rows."""
    current, target = _check_level(view, hierarchy, level)
    if target > current:
        raise QueryValidationError(f"cannot drill {hierarchy} down from {view.coord[hierarchy]} to coarser {level}")
    if target == current:
        return view
    coord = view.coord.replace(hierarchy, level)
    groups, cells = _frames(view.cube, coord, view.spatial_scheme)

    roller = view.cube.hierarchy(hierarchy, view.spatial_scheme)
    column = _column(hierarchy)
    keys = list(GROUP_COLUMNS)
    rolled_groups = groups[keys].copy()
    rolled_cells = cells[keys + [KEYWORD]].copy()
    if hierarchy != TEXTUAL:
        rolled_groups[column] = roller.roll_series(rolled_groups[column], level, view.coord[hierarchy])
    rolled_cells[column] = roller.roll_series(rolled_cells[column], level, view.coord[hierarchy])

    group_keep = rolled_groups.merge(view.groups[keys].assign(_keep=True), on=keys, how="left")["_keep"].notna()
    cell_keep = rolled_cells.merge(view.cells[keys + [KEYWORD]].assign(_keep=True), on=keys + [KEYWORD], how="left")
    groups = groups[group_keep.to_numpy()]
    cells = cells[cell_keep["_keep"].notna().to_numpy()]
    groups, cells = finish_frames(groups, cells)
    return replace(view, coord=coord, groups=groups, cells=cells)
