import logging
from datetime import datetime
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import QueryValidationError
from ..models import (
    ALL_LEVEL,
    BOUNDARY,
    DATE,
    FACT_COUNT,
    FREQ,
    GROUP_COLUMNS,
    KEYWORD,
    SPATIAL,
    TEXTUAL,
    TEXTUAL_LEVELS,
    TIME_OF_DAY,
    UNKNOWN_MEMBER,
    ApproxTopK,
    Cuboid,
    CuboidCoord,
    Measure,
    QueryPlan,
    QueryResult,
    QuerySpec,
    ResultRow,
    SpatialScheme,
)
from .lattice_service import aggregate_facts, keyword_fact_counts, roll_cuboid, smallest_source
from .measure_service import INTERVAL, LIST_ID, exact_ranking, merge_truncated, volatility_matrix
from .olap_service import group_spans

if TYPE_CHECKING:
    from .cube_service import SttCube

logger = logging.getLogger(__name__)

AREA = "area"
DATE_GRAINS = ("year", "quarter", "month", "day")
TIME_GRAINS = ("hour", "minute", "second")
TAXONOMY_LEVELS = ("city", "region", "country")


def _date_aligned(instant: datetime, level: str) -> bool:
    if (instant.hour, instant.minute, instant.second) != (0, 0, 0):
        return False
    if level == "day":
        return True
    if level == "month":
        return instant.day == 1
    if level == "quarter":
        return instant.day == 1 and instant.month in (1, 4, 7, 10)
    return (instant.month, instant.day) == (1, 1)


def _time_aligned(instant: datetime, level: str) -> bool:
    if level == "hour":
        return (instant.minute, instant.second) == (0, 0)
    if level == "minute":
        return instant.second == 0
    return True


def temporal_levels(spec: QuerySpec) -> Tuple[str, str]:
    """Coarsest (date, time-of-day) levels whose members never straddle an interval boundary."""
    if spec.start is None:
        return ALL_LEVEL, ALL_LEVEL
    bounds = spec.interval_bounds()
    for level in DATE_GRAINS:
        if all(_date_aligned(bound, level) for bound in bounds):
            return level, ALL_LEVEL
    for level in TIME_GRAINS:
        if all(_time_aligned(bound, level) for bound in bounds):
            return "day", level
    return "day", "second"


def spatial_scheme_of(cube: "SttCube", spec: QuerySpec) -> SpatialScheme:
    if spec.textual_scheme is not None and spec.textual_scheme != cube.config.textual_scheme:
        raise QueryValidationError(
            f"cube was built with the {cube.config.textual_scheme.value} textual scheme, query asks for {spec.textual_scheme.value}"
        )
    return spec.spatial_scheme or cube.config.spatial_scheme


def _check_members(cube: "SttCube", spec: QuerySpec, scheme: SpatialScheme) -> None:
    if spec.members is None:
        return
    if not spec.members:
        raise QueryValidationError("an area needs at least one member")
    hierarchy = cube.hierarchy(SPATIAL, scheme)
    for member in spec.members:
        if scheme == SpatialScheme.SEMANTIC and spec.spatial_level in TAXONOMY_LEVELS and member != UNKNOWN_MEMBER:
            known = cube.taxonomies.geo.get(member)
            if known is None or known.level != spec.spatial_level:
                raise QueryValidationError(f"unknown {spec.spatial_level} member {member!r}")
        try:
            hierarchy.surface_area(member, spec.spatial_level)
        except (KeyError, ValueError):
            raise QueryValidationError(f"unknown {spec.spatial_level} member {member!r}") from None


def query_coordinate(cube: "SttCube", spec: QuerySpec) -> CuboidCoord:
    """Lattice coordinate holding exactly the groups and keywords a query needs."""
    scheme = spatial_scheme_of(cube, spec)
    levels = cube.hierarchy(SPATIAL, scheme).levels
    if spec.spatial_level not in levels:
        raise QueryValidationError(f"{spec.spatial_level!r} is not a {scheme.value} spatial level")
    spatial = spec.spatial_level
    if spec.group_by_level is not None:
        if spec.group_by_level not in levels or levels.index(spec.group_by_level) > levels.index(spec.spatial_level):
            raise QueryValidationError(f"cannot group {spec.spatial_level} areas by {spec.group_by_level!r}")
        spatial = spec.group_by_level
    if spec.textual_level not in TEXTUAL_LEVELS:
        raise QueryValidationError(f"{spec.textual_level!r} is not a textual level")
    _check_members(cube, spec, scheme)

    date, time_of_day = temporal_levels(spec)
    keyword_level = ALL_LEVEL if spec.measure == Measure.FACT_COUNT and not spec.group_by_text else spec.textual_level
    return CuboidCoord.of(date=date, time_of_day=time_of_day, spatial=spatial, textual=keyword_level)


def _approximate_source(cube: "SttCube", spec: QuerySpec, target: CuboidCoord) -> Optional[CuboidCoord]:
    """Smallest truncated cuboid able to serve a top-k merge for ``spec``."""
    if not spec.measure.is_topk or spec.top_k is None or spec.keywords is not None or not spec.keyword_set.is_default:
        return None
    candidates = [
        (cuboid.row_count, coord.label, coord)
        for coord, cuboid in cube.cuboids.items()
        if cuboid.truncated
        and cuboid.top_k > spec.top_k
        and coord[TEXTUAL] == target[TEXTUAL]
        and cube.lattice.answers(coord, target)
    ]
    return min(candidates)[2] if candidates else None


def _residual_filters(spec: QuerySpec) -> List[str]:
    filters = []
    if spec.start is not None:
        filters.append(f"time in [{spec.start.isoformat()}, {spec.end.isoformat()}) split into {spec.intervals}")
    if spec.members is not None:
        filters.append(f"{spec.spatial_level} in {list(spec.members)}")
    if spec.keywords is not None:
        filters.append(f"{spec.textual_level} in {list(spec.keywords)}")
    if not spec.keyword_set.is_default:
        filters.append("hashtags only")
    return filters


def rewrite(cube: "SttCube", spec: QuerySpec) -> QueryPlan:
    """Plan a query over the smallest materialized cuboid that answers it."""
    target = query_coordinate(cube, spec)
    scheme = spatial_scheme_of(cube, spec)
    base = cube.base_coord
    from_base = scheme != cube.config.spatial_scheme or (spec.measure == Measure.FACT_COUNT and spec.group_by_text)
    approximate, source_top_k = False, None

    if from_base:
        source = base if scheme == cube.config.spatial_scheme else base.replace(SPATIAL, cube.spatial_base_level(scheme))
        source_rows = cube.base_rows()
    else:
        source = smallest_source(cube, target)
        source_rows = cube.base_rows() if source == base else cube.cuboids[source].row_count
        truncated = _approximate_source(cube, spec, target)
        if truncated is not None and cube.cuboids[truncated].row_count < source_rows:
            source, source_rows = truncated, cube.cuboids[truncated].row_count
            approximate, source_top_k = True, cube.cuboids[truncated].top_k

    plan = QueryPlan(
        target=target,
        source=source,
        source_rows=source_rows,
        approximate=approximate,
        source_top_k=source_top_k,
        residual_group_by={name: target[name] for name in target.names if source.get(name) != target[name]},
        residual_filters=_residual_filters(spec),
        top_k=spec.k if spec.measure.is_topk else None,
        from_base=from_base or source == base,
        guarantee="delta-prefix" if approximate else "exact",
    )
    logger.info(f"Planned {spec.measure.value} at {target} from {source} ({source_rows} rows, {plan.guarantee})")
    return plan


def _facts_in_range(cube: "SttCube", spec: QuerySpec) -> Optional[np.ndarray]:
    if spec.start is None:
        return None
    facts = cube.facts.facts_frame
    ts = facts["ts"].to_numpy(np.int64)
    inside = (ts >= int(spec.start.timestamp())) & (ts < int(spec.end.timestamp()))
    return facts["fact"].to_numpy(np.int64)[inside]


def _target_cuboid(cube: "SttCube", spec: QuerySpec, plan: QueryPlan, scheme: SpatialScheme) -> Cuboid:
    if plan.source == plan.target and plan.source in cube.cuboids:
        return cube.cuboids[plan.source]
    if plan.from_base:
        return aggregate_facts(cube, plan.target, _facts_in_range(cube, spec), scheme)
    return roll_cuboid(cube, cube.cuboids[plan.source], plan.target)


def merged_label(members: Sequence[str]) -> str:
    return "+".join(sorted(set(members)))


def _annotate(cube: "SttCube", spec: QuerySpec, frame: pd.DataFrame, coord: CuboidCoord, scheme: SpatialScheme) -> pd.DataFrame:
    """Rows inside the query's time range and areas, tagged with their interval and area."""
    frame = frame.reset_index(drop=True)
    if spec.start is not None:
        starts, ends = group_spans(cube, frame, coord[DATE], coord[TIME_OF_DAY])
        t0, t1 = int(spec.start.timestamp()), int(spec.end.timestamp())
        step = (t1 - t0) // spec.intervals
        inside = (starts >= t0) & (ends <= t1)
        frame = frame[inside].copy()
        frame[INTERVAL] = ((starts[inside] - t0) // step).astype(np.int64)
    else:
        frame = frame.copy()
        frame[INTERVAL] = 0

    hierarchy = cube.hierarchy(SPATIAL, scheme)
    if spec.members is not None:
        at_level = hierarchy.roll_series(frame[SPATIAL], coord[SPATIAL], spec.spatial_level)
        frame = frame[at_level.isin(set(spec.members)).to_numpy()].copy()
    if spec.members is not None and spec.group_by_level is None:
        frame[AREA] = merged_label(spec.members)
    else:
        frame[AREA] = hierarchy.roll_series(frame[SPATIAL], coord[SPATIAL], spec.group_by_level or spec.spatial_level)
    return frame


def _surfaces(cube: "SttCube", spec: QuerySpec, areas: Sequence[str], scheme: SpatialScheme) -> Dict[str, float]:
    hierarchy = cube.hierarchy(SPATIAL, scheme)
    if spec.members is not None and spec.group_by_level is None:
        total = sum(hierarchy.surface_area(member, spec.spatial_level) for member in sorted(set(spec.members)))
        return {merged_label(spec.members): total}
    level = spec.group_by_level or spec.spatial_level
    return {area: hierarchy.surface_area(area, level) for area in areas}


def _area_members(spec: QuerySpec, area: str) -> Tuple[str, ...]:
    if spec.members is not None and spec.group_by_level is None:
        return tuple(sorted(set(spec.members)))
    return (area,)


def _areas(spec: QuerySpec, frame: pd.DataFrame) -> List[str]:
    if spec.members is not None and spec.group_by_level is None:
        return [merged_label(spec.members)]
    return sorted(pd.unique(frame[AREA]))


def _keep_keywords(spec: QuerySpec, frame: pd.DataFrame) -> pd.DataFrame:
    if spec.keywords is not None:
        frame = frame[frame[KEYWORD].isin(set(spec.keywords))]
    if not spec.keyword_set.is_default:
        frame = frame[frame[KEYWORD].map(spec.keyword_set).astype(bool)]
    return frame


def _frequency_matrix(frame: pd.DataFrame, intervals: int) -> Tuple[List[str], np.ndarray]:
    if frame.empty:
        return [], np.zeros((0, intervals))
    table = frame.pivot_table(index=KEYWORD, columns=INTERVAL, values=FREQ, aggfunc="sum", fill_value=0)
    table = table.reindex(columns=range(intervals), fill_value=0)
    return [str(keyword) for keyword in table.index], table.to_numpy(float)


def _rows(frame: pd.DataFrame, value_column: str, spec: QuerySpec, surfaces: Optional[Dict[str, float]] = None) -> List[ResultRow]:
    rows = []
    for record in frame.to_dict("records"):
        count = int(record[value_column])
        value = count / surfaces[record[AREA]] if surfaces is not None else float(count)
        rows.append(
            ResultRow(
                area=record[AREA],
                keyword=record.get(KEYWORD),
                interval=int(record[INTERVAL]) if INTERVAL in record else None,
                value=value,
                frequency=count,
            )
        )
    return rows


def _exact(cube: "SttCube", spec: QuerySpec, plan: QueryPlan, scheme: SpatialScheme) -> QueryResult:
    keys = list(GROUP_COLUMNS)
    by_time = [INTERVAL] if spec.group_by_time else []

    if spec.measure == Measure.FACT_COUNT and spec.group_by_text:
        counts = keyword_fact_counts(cube, plan.target, _facts_in_range(cube, spec), scheme)
        counts = _keep_keywords(spec, _annotate(cube, spec, counts, plan.target, scheme))
        totals = counts.groupby([AREA, KEYWORD] + by_time)[FACT_COUNT].sum().reset_index()
        return QueryResult(plan=plan, rows=_rows(totals, FACT_COUNT, spec))

    cuboid = _target_cuboid(cube, spec, plan, scheme)
    groups = _annotate(cube, spec, cuboid.groups, plan.target, scheme)

    if spec.measure == Measure.FACT_COUNT:
        totals = groups.groupby([AREA] + by_time)[FACT_COUNT].sum()
        if spec.members is not None and spec.group_by_level is None and not spec.group_by_time:
            totals = totals.reindex(_areas(spec, groups), fill_value=0)
        return QueryResult(plan=plan, rows=_rows(totals.rename(FACT_COUNT).reset_index(), FACT_COUNT, spec))

    cells = cuboid.cells.merge(groups[keys + [AREA, INTERVAL]], on=keys, how="inner")
    cells = _keep_keywords(spec, cells)
    surfaces = _surfaces(cube, spec, _areas(spec, groups), scheme)

    if spec.measure in (Measure.KEYWORD_FREQUENCY, Measure.DENSITY):
        totals = cells.groupby([AREA, KEYWORD] + by_time)[FREQ].sum().reset_index()
        per_area = surfaces if spec.measure == Measure.DENSITY else None
        return QueryResult(plan=plan, rows=_rows(totals, FREQ, spec, per_area))

    intervals = spec.intervals if spec.measure.is_volatile else 1
    if not spec.measure.is_volatile:
        cells = cells.assign(**{INTERVAL: 0})
    by_area = {area: frame for area, frame in cells.groupby(AREA)}
    rows, rankings = [], []
    for area in _areas(spec, groups):
        keywords, freqs = _frequency_matrix(by_area.get(area, cells.iloc[0:0]), intervals)
        if spec.measure == Measure.VOLATILITY:
            scores = volatility_matrix(freqs, surfaces[area])
            totals = freqs.sum(axis=1)
            rows.extend(
                ResultRow(area=area, keyword=keyword, value=float(score), frequency=int(total))
                for keyword, score, total in zip(keywords, scores, totals)
            )
        else:
            rankings.append(
                exact_ranking(area, _area_members(spec, area), surfaces[area], keywords, freqs, spec.top_k, spec.measure)
            )
    return QueryResult(plan=plan, rows=rows, rankings=rankings)


def _approximate(cube: "SttCube", spec: QuerySpec, plan: QueryPlan, scheme: SpatialScheme) -> QueryResult:
    keys = list(GROUP_COLUMNS)
    source = cube.cuboids[plan.source]
    intervals = spec.intervals if spec.measure.is_volatile else 1

    groups = _annotate(cube, spec, source.groups, plan.source, scheme).reset_index(drop=True)
    if intervals == 1:
        groups[INTERVAL] = 0
    groups[LIST_ID] = np.arange(len(groups))
    entries = source.cells.merge(groups[keys + [LIST_ID, INTERVAL, AREA]], on=keys, how="inner")
    lists = groups[[LIST_ID, INTERVAL, BOUNDARY, AREA]].rename(columns={BOUNDARY: "boundary"})
    surfaces = _surfaces(cube, spec, _areas(spec, groups), scheme)

    entries_by_area = {area: frame for area, frame in entries.groupby(AREA)}
    lists_by_area = {area: frame for area, frame in lists.groupby(AREA)}
    rankings: List[ApproxTopK] = []
    for area in _areas(spec, groups):
        rankings.append(
            merge_truncated(
                entries_by_area.get(area, entries.iloc[0:0]),
                lists_by_area.get(area, lists.iloc[0:0]),
                area,
                _area_members(spec, area),
                surfaces[area],
                spec.top_k,
                intervals,
                spec.measure,
            )
        )
    return QueryResult(plan=plan, rankings=rankings)


def execute(cube: "SttCube", spec: QuerySpec, plan: Optional[QueryPlan] = None) -> QueryResult:
    """
    Evaluate a query

    Args:
        cube: the cube to query
        spec: measure, areas, keyword level, time range and k
        plan: a plan from ``rewrite``; planned here when omitted

    Returns:
        Result rows for scalar measures, one ranking per area for top-k measures
    """
    scheme = spatial_scheme_of(cube, spec)
    plan = plan or rewrite(cube, spec)
    result = _approximate(cube, spec, plan, scheme) if plan.approximate else _exact(cube, spec, plan, scheme)
    result.rows.sort(key=lambda row: (row.area, row.keyword or "", row.interval if row.interval is not None else -1))
    logger.debug(f"Query returned {len(result.rows)} rows and {len(result.rankings)} rankings")
    return result


# Measure shortcuts


def keyword_density(
    cube: "SttCube",
    members: Sequence[str],
    spatial_level: str = "city",
    textual_level: str = "term",
    start: Optional[datetime] = None,
    end: Optional[datetime] = None,
) -> List[ResultRow]:
    """Density of every keyword in the area made of ``members``."""
    spec = QuerySpec(
        measure=Measure.DENSITY,
        spatial_level=spatial_level,
        members=tuple(members),
        textual_level=textual_level,
        start=start,
        end=end,
    )
    return execute(cube, spec).rows


def keyword_volatility(
    cube: "SttCube",
    members: Sequence[str],
    keyword: str,
    start: datetime,
    end: datetime,
    intervals: int,
    spatial_level: str = "city",
    textual_level: str = "term",
) -> float:
    """Volatility of one keyword in the area made of ``members``; 0 when it never occurs."""
    spec = QuerySpec(
        measure=Measure.VOLATILITY,
        spatial_level=spatial_level,
        members=tuple(members),
        textual_level=textual_level,
        keywords=(keyword,),
        start=start,
        end=end,
        intervals=intervals,
    )
    rows = execute(cube, spec).rows
    return rows[0].value if rows else 0.0


def topk_dense(
    cube: "SttCube",
    members: Optional[Sequence[str]],
    k,
    spatial_level: str = "city",
    textual_level: str = "term",
    start: Optional[datetime] = None,
    end: Optional[datetime] = None,
) -> List[ApproxTopK]:
    """Densest keywords per area (one merged area when ``members`` is given)."""
    spec = QuerySpec(
        measure=Measure.TOPK_DENSE,
        spatial_level=spatial_level,
        members=tuple(members) if members is not None else None,
        textual_level=textual_level,
        start=start,
        end=end,
        k=k,
    )
    return execute(cube, spec).rankings


def topk_volatile(
    cube: "SttCube",
    members: Optional[Sequence[str]],
    k,
    start: datetime,
    end: datetime,
    intervals: int,
    spatial_level: str = "city",
    textual_level: str = "term",
) -> List[ApproxTopK]:
    """Most volatile keywords per area over ``intervals`` equal slices of [start, end)."""
    spec = QuerySpec(
        measure=Measure.TOPK_VOLATILE,
        spatial_level=spatial_level,
        members=tuple(members) if members is not None else None,
        textual_level=textual_level,
        start=start,
        end=end,
        intervals=intervals,
        k=k,
    )
    return execute(cube, spec).rankings
