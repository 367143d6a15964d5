import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import ConfigurationError
from ..models import (
    BOUNDARY,
    FACT_COUNT,
    FREQ,
    GROUP_COLUMNS,
    KEYWORD,
    SURFACE_AREA,
    Cuboid,
    CuboidCoord,
    MaterializationConfig,
    Strategy,
)
from .lattice_service import (
    Lattice,
    aggregate,
    aggregate_facts,
    benefit,
    cost_map,
    finish_frames,
    group_frame,
    roll_cuboid,
    smallest_source,
)

if TYPE_CHECKING:
    from .cube_service import SttCube

logger = logging.getLogger(__name__)

ROWS, CUBOIDS = "rows", "cuboids"


@dataclass(frozen=True)
class GreedyStep:
    pick: CuboidCoord
    benefit: int
    size: int


def truncate(cuboid: Cuboid, k: int) -> Cuboid:
    """Keep the k most frequent keywords per group and record the (k+1)-th frequency as its boundary."""
    if k < 1:
        raise ValueError("top-K truncation needs K >= 1")
    keys = list(GROUP_COLUMNS)
    ranked = cuboid.cells.sort_values(keys + [FREQ, KEYWORD], ascending=[True] * len(keys) + [False, True], kind="mergesort")
    rank = ranked.groupby(keys, sort=False).cumcount()
    kept = ranked[rank < k]
    boundary = ranked[rank == k].set_index(keys)[FREQ]

    groups = cuboid.groups.drop(columns=[BOUNDARY]).set_index(keys)
    groups[BOUNDARY] = boundary.reindex(groups.index).fillna(0)
    groups, cells = finish_frames(groups.reset_index(), kept)
    return Cuboid(coord=cuboid.coord, groups=groups, cells=cells, top_k=k)


def build_cuboid(cube: "SttCube", coord: CuboidCoord, top_k: Optional[int] = None) -> Cuboid:
    """Aggregate ``coord`` from the smallest untruncated source and truncate it when K is finite."""
    source = smallest_source(cube, coord)
    cuboid = aggregate(cube, coord, source)
    logger.debug(f"Aggregated {coord} from {source}: {cuboid.row_count} rows")
    return truncate(cuboid, top_k) if top_k is not None else cuboid


def _finer_first(lattice: Lattice, coords: Sequence[CuboidCoord]) -> List[CuboidCoord]:
    return sorted(coords, key=lambda c: (sum(lattice.index_of(c)), c.label))


def materialize_coords(cube: "SttCube", coords: Sequence[CuboidCoord], top_k: Optional[int] = None) -> List[Cuboid]:
    """Build and store the given cuboids, finer ones first so coarser ones can reuse them."""
    built = []
    for coord in _finer_first(cube.lattice, [c for c in coords if c != cube.base_coord]):
        cuboid = build_cuboid(cube, coord, top_k)
        cube.store(cuboid)
        built.append(cuboid)
        logger.info(f"Materialized {coord} ({cuboid.row_count} rows{'' if top_k is None else f', K={top_k}'})")
    return built


def average_row_width(cube: "SttCube") -> float:
    """Measured bytes per base row of the columnar representation."""
    facts, terms = cube.facts.facts_frame, cube.facts.terms_frame
    if not len(terms):
        return 1.0
    fact_bytes = facts[["day", "second", "location"]].memory_usage(deep=True, index=False).sum() / max(len(facts), 1)
    term_bytes = terms.memory_usage(deep=True, index=False).sum() / len(terms)
    return float(fact_bytes + term_bytes)


def resolve_budget(cube: "SttCube", cfg: MaterializationConfig) -> Tuple[str, float]:
    """Budget unit and limit; byte budgets are converted to rows."""
    if cfg.budget_cuboids is not None:
        return CUBOIDS, float(cfg.budget_cuboids)
    if cfg.budget_rows is not None:
        return ROWS, float(cfg.budget_rows)
    if cfg.budget_bytes is not None:
        return ROWS, cfg.budget_bytes / average_row_width(cube)
    return ROWS, cube.base_rows() * (1.0 + cfg.budget_ratio)


def greedy_select(
    lattice: Lattice,
    budget: float,
    unit: str = ROWS,
    strict: bool = False,
) -> List[GreedyStep]:
    """
    Pick cuboids by maximal benefit until the budget is exceeded

    The loop body runs before the budget test, so the last pick may overshoot
    the budget; with ``strict`` only candidates that still fit are considered.
    Ties in benefit go to the smaller cuboid, then to the smaller label.
    Picked nodes are flagged materialized on ``lattice``.
    """
    if unit not in (ROWS, CUBOIDS):
        raise ConfigurationError(f"unsupported budget unit {unit!r}")
    descendants = {coord: lattice.descendants(coord) for coord in lattice.nodes}
    steps: List[GreedyStep] = []
    total = float(lattice.total_rows() if unit == ROWS else 0)

    while True:
        candidates = [node for node in lattice if not node.materialized]
        if strict:
            candidates = [n for n in candidates if total + (n.row_count if unit == ROWS else 1) <= budget]
        if not candidates:
            break
        costs = cost_map(lattice)
        scored = [(benefit(lattice, n.coord, costs, descendants[n.coord]), n) for n in candidates]
        gain, best = min(scored, key=lambda item: (-item[0], item[1].row_count, item[1].coord.label))
        if steps and gain <= 0:
            break
        lattice.set_materialized(best.coord)
        total += best.row_count if unit == ROWS else 1
        steps.append(GreedyStep(pick=best.coord, benefit=int(gain), size=int(best.row_count)))
        logger.debug(f"Greedy pick {best.coord}: benefit {gain}, size {best.row_count}")
        if (unit == ROWS and total > budget) or (unit == CUBOIDS and total >= budget):
            break
    return steps


def greedy_materialize(
    cube: "SttCube",
    budget: Optional[float] = None,
    top_k: Optional[int] = None,
    strict: bool = False,
    unit: str = ROWS,
) -> List[GreedyStep]:
    """Plan on full cuboid sizes, then store the picks (truncated to K when given)."""
    cube.ensure_sizes()
    if budget is None:
        unit, budget = resolve_budget(cube, MaterializationConfig(strategy=Strategy.GREEDY))
    steps = greedy_select(cube.lattice, budget, unit, strict)
    # planning flags are replaced by the stored cuboids below
    cube.lattice.reset()
    materialize_coords(cube, [step.pick for step in steps], top_k)
    return steps


def apply_strategy(cube: "SttCube", cfg: MaterializationConfig) -> List[GreedyStep]:
    """Replace the materialized set with the one the strategy prescribes."""
    cube.clear_materialized()
    steps: List[GreedyStep] = []
    if cfg.strategy == Strategy.FM:
        materialize_coords(cube, list(cube.lattice.nodes))
    elif cfg.strategy != Strategy.NM:
        unit, budget = resolve_budget(cube, cfg)
        top_k = cfg.top_k if cfg.strategy in (Strategy.PAM, Strategy.GREEDY) else None
        steps = greedy_materialize(cube, budget, top_k, cfg.strict_budget, unit)
    cube.config = cube.config.model_copy(update={"materialization": cfg})
    base, extra = cube.storage_rows()
    logger.info(f"Applied {cfg.strategy.value}: {len(cube.cuboids)} cuboids, {extra} rows on top of {base} base rows")
    return steps


def _merge_exact(current: Cuboid, delta: Cuboid) -> Cuboid:
    keys = list(GROUP_COLUMNS)
    groups = pd.concat([current.groups, delta.groups], ignore_index=True)
    groups = groups.groupby(keys, sort=False).agg({FACT_COUNT: "sum", SURFACE_AREA: "first", BOUNDARY: "max"}).reset_index()
    cells = pd.concat([current.cells, delta.cells], ignore_index=True)
    cells = cells.groupby(keys + [KEYWORD], sort=False)[FREQ].sum().reset_index()
    groups, cells = finish_frames(groups, cells)
    return Cuboid(coord=current.coord, groups=groups, cells=cells)


def _restricted(cube: "SttCube", coord: CuboidCoord, source: CuboidCoord, dirty: pd.DataFrame) -> Cuboid:
    """Cells of ``coord`` for the dirty group keys only."""
    keys = list(GROUP_COLUMNS)
    if source == cube.base_coord:
        members = group_frame(cube, cube.facts.facts_frame, coord).rename_axis("fact").reset_index()
        touched = members.merge(dirty, on=keys, how="inner")["fact"].to_numpy()
        return aggregate_facts(cube, coord, np.sort(touched))
    full = roll_cuboid(cube, cube.cuboids[source], coord)
    groups = full.groups.merge(dirty, on=keys, how="inner")
    cells = full.cells.merge(dirty, on=keys, how="inner")
    groups, cells = finish_frames(groups, cells)
    return Cuboid(coord=coord, groups=groups, cells=cells)


def _replace_groups(current: Cuboid, fresh: Cuboid, dirty: pd.DataFrame) -> Cuboid:
    keys = list(GROUP_COLUMNS)

    def keep(frame: pd.DataFrame) -> pd.DataFrame:
        marked = frame.merge(dirty.assign(_dirty=True), on=keys, how="left")
        return marked[marked["_dirty"].isna()].drop(columns=["_dirty"])

    groups = pd.concat([keep(current.groups), fresh.groups], ignore_index=True)
    cells = pd.concat([keep(current.cells), fresh.cells], ignore_index=True)
    groups, cells = finish_frames(groups, cells)
    return Cuboid(coord=current.coord, groups=groups, cells=cells, top_k=current.top_k)


def refresh_materialized(cube: "SttCube", new_ids: np.ndarray) -> None:
    """Fold newly appended facts into every materialized cuboid.

    Untruncated cuboids add the aggregate of the new facts; truncated ones
    recompute just the groups the new facts touch from an untruncated source.
    """
    coords = _finer_first(cube.lattice, list(cube.cuboids))
    exact = [c for c in coords if not cube.cuboids[c].truncated]
    truncated = [c for c in coords if cube.cuboids[c].truncated]
    for coord in exact:
        delta = aggregate_facts(cube, coord, new_ids)
        cube.store(_merge_exact(cube.cuboids[coord], delta))
    for coord in truncated:
        current = cube.cuboids[coord]
        dirty = aggregate_facts(cube, coord, new_ids).groups[list(GROUP_COLUMNS)]
        source = smallest_source(cube, coord)
        fresh = truncate(_restricted(cube, coord, source, dirty), current.top_k)
        cube.store(_replace_groups(current, fresh, dirty))
    logger.info(f"Refreshed {len(exact)} exact and {len(truncated)} truncated cuboids")


def rebuild_materialized(cube: "SttCube") -> None:
    """Recompute every materialized cuboid from scratch, keeping each one's K."""
    plan: Dict[CuboidCoord, Optional[int]] = {coord: cuboid.top_k for coord, cuboid in cube.cuboids.items()}
    cube.clear_materialized()
    for coord in _finer_first(cube.lattice, [c for c, k in plan.items() if k is None]):
        cube.store(build_cuboid(cube, coord))
    for coord in _finer_first(cube.lattice, [c for c, k in plan.items() if k is not None]):
        cube.store(build_cuboid(cube, coord, plan[coord]))
