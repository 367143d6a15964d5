import hashlib
import logging
from datetime import datetime, timedelta, timezone
from time import perf_counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from ..errors import BenchmarkError
from ..models import (
    ALL_K,
    UNKNOWN_MEMBER,
    AccuracyRow,
    BenchConfig,
    BenchReport,
    BenefitPoint,
    CubeConfig,
    KSweepRow,
    LatencyRow,
    LinearFit,
    MaterializationConfig,
    Measure,
    QueryResult,
    QuerySpec,
    SpatialScheme,
    StorageRow,
    Strategy,
    TextualScheme,
)
from .cube_service import FactStore, SttCube, construct, load_taxonomies
from .ingest_service import parse_records, read_records, to_jsonl
from .materialize_service import CUBOIDS, apply_strategy, greedy_select
from .query_service import execute, rewrite
from .synth_service import SynthConfig, generate_records

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400

# Query templates: id, keyword level, area level, group-by level, all keywords
TEMPLATES: Tuple[Tuple[str, str, str, Optional[str], bool], ...] = (
    ("Q1", "term", "city", None, False),
    ("Q2", "topic", "city", None, False),
    ("Q3", "concept", "country", None, False),
    ("Q4", "term", "region", None, False),
    ("Q5", "concept", "region", None, False),
    ("Q6", "theme", "region", None, False),
    ("Q7", "term", "country", None, False),
    ("Q8", "term", "country", "region", False),
    ("Q9", "topic", "country", "region", True),
)
GRID_LEVEL_OF = {"city": 1, "region": 2, "country": 3}
MEASURE_TAGS = {Measure.TOPK_DENSE: "dense", Measure.TOPK_VOLATILE: "volatile"}


class SuiteQuery(BaseModel):
    query_id: str
    template: str
    specs: List[QuerySpec]

    @property
    def all_keywords(self) -> bool:
        return any(spec.k == ALL_K for spec in self.specs)


# Suite generation


def _spatial_levels(cube: SttCube, level: str) -> str:
    if cube.config.spatial_scheme == SpatialScheme.SEMANTIC:
        return level
    grid_levels = cube.grid_hierarchy.levels
    return grid_levels[min(GRID_LEVEL_OF[level], len(grid_levels) - 2)]


def _candidates(cube: SttCube, level: str) -> List[str]:
    members = sorted(set(cube.members.ids(cube.member_key(), level)) - {UNKNOWN_MEMBER})
    return members or [UNKNOWN_MEMBER]


def _day_range(cube: SttCube) -> Tuple[int, int]:
    ts = cube.facts.facts_frame["ts"].to_numpy(np.int64)
    if not len(ts):
        return 0, 1
    first = int(ts.min()) // SECONDS_PER_DAY
    return first, int(ts.max()) // SECONDS_PER_DAY + 1


def generate_suite(
    cube: SttCube,
    seed: int = 7,
    k: int = 10,
    span_days: int = 7,
    repetitions: int = 1,
    measures: Sequence[Measure] = (Measure.TOPK_DENSE, Measure.TOPK_VOLATILE),
) -> List[SuiteQuery]:
    """
    Instantiate the Q1-Q9 templates with uniformly sampled areas and time spans

    Args:
        cube: cube whose members are sampled
        seed: random seed; the same seed gives the same suite
        k: ranking length (Q9 always asks for every keyword)
        span_days: length of the volatile time span in days, split into daily intervals
        repetitions: parameter draws per template
        measures: top-k measures to instantiate every template with

    Returns:
        One SuiteQuery per (template, measure); term-level templates are skipped
        when facts link to a single theme
    """
    rng = np.random.default_rng(seed)
    first_day, last_day = _day_range(cube)
    term_queries = cube.config.textual_scheme == TextualScheme.REPLICATION
    suite: List[SuiteQuery] = []

    for template, textual_level, area_level, group_level, all_keywords in TEMPLATES:
        if textual_level == "term" and not term_queries:
            continue
        spatial_level = _spatial_levels(cube, area_level)
        group_by = _spatial_levels(cube, group_level) if group_level else None
        members = _candidates(cube, spatial_level)
        for measure in measures:
            specs = []
            for _ in range(repetitions):
                member = members[int(rng.integers(0, len(members)))]
                start_day = first_day + int(rng.integers(0, max(1, last_day - first_day - span_days + 1)))
                start = datetime.fromtimestamp(start_day * SECONDS_PER_DAY, tz=timezone.utc)
                volatile = measure == Measure.TOPK_VOLATILE
                specs.append(
                    QuerySpec(
                        measure=measure,
                        spatial_level=spatial_level,
                        members=(member,),
                        group_by_level=group_by,
                        textual_level=textual_level,
                        start=start if volatile else None,
                        end=start + timedelta(days=span_days) if volatile else None,
                        intervals=span_days if volatile else 1,
                        k=ALL_K if all_keywords else k,
                    )
                )
            suite.append(SuiteQuery(query_id=f"{template}-{MEASURE_TAGS[measure]}", template=template, specs=specs))
    logger.info(f"Generated a suite of {len(suite)} queries x {repetitions} draws")
    return suite


# Timing


def timed_query(cube: SttCube, spec: QuerySpec) -> Tuple[float, QueryResult]:
    """Milliseconds spent planning and executing one query, and its result."""
    started = perf_counter()
    result = execute(cube, spec, rewrite(cube, spec))
    return (perf_counter() - started) * 1000.0, result


def _digest(hashes: Sequence[str]) -> str:
    return hashlib.sha256("|".join(hashes).encode("utf-8")).hexdigest()


def storage_row(strategy: Strategy, cube: SttCube) -> StorageRow:
    base, extra = cube.storage_rows()
    return StorageRow(strategy=strategy, cuboids=len(cube.cuboids), base_rows=base, extra_rows=extra, total_rows=base + extra)


def check_storage_order(rows: Sequence[StorageRow]) -> None:
    order = [Strategy.NM, Strategy.PAM, Strategy.PEM, Strategy.FM]
    extra = {row.strategy: row.extra_rows for row in rows}
    present = [strategy for strategy in order if strategy in extra]
    for finer, coarser in zip(present, present[1:]):
        if extra[finer] > extra[coarser]:
            raise BenchmarkError(
                f"{finer.value} stores {extra[finer]} extra rows, more than {coarser.value} ({extra[coarser]})"
            )


def run_suite(cubes: Dict[Strategy, SttCube], suite: Sequence[SuiteQuery]) -> List[LatencyRow]:
    """
    Time every query instance on every strategy's cube and check exact answers agree

    Raises:
        BenchmarkError: two strategies return different exact results for the same query
    """
    rows: List[LatencyRow] = []
    for query in suite:
        latencies: Dict[Strategy, List[float]] = {strategy: [] for strategy in cubes}
        hashes: Dict[Strategy, List[str]] = {strategy: [] for strategy in cubes}
        approximate = {strategy: False for strategy in cubes}
        for position, spec in enumerate(query.specs):
            exact: Dict[Strategy, str] = {}
            for strategy, cube in cubes.items():
                elapsed, result = timed_query(cube, spec)
                latencies[strategy].append(elapsed)
                digest = result.result_hash()
                hashes[strategy].append(digest)
                if result.plan.approximate:
                    approximate[strategy] = True
                else:
                    exact[strategy] = digest
            if len(set(exact.values())) > 1:
                detail = ", ".join(f"{s.value}={h[:12]}" for s, h in exact.items())
                raise BenchmarkError(f"{query.query_id} draw {position} differs across strategies: {detail}")

        for strategy in cubes:
            values = np.asarray(latencies[strategy], dtype=float)
            rows.append(
                LatencyRow(
                    query_id=query.query_id,
                    strategy=strategy,
                    n=len(values),
                    mean_ms=float(values.mean()),
                    stddev_ms=float(values.std()),
                    median_ms=float(np.median(values)),
                    approximate=approximate[strategy],
                    result_hash=_digest(hashes[strategy]),
                )
            )
        logger.debug(f"Timed {query.query_id} on {len(cubes)} strategies")
    return rows


# Accuracy


def _matching_positions(approximate: List[str], exact: List[str], k: int) -> Tuple[int, int]:
    expected = exact[:k]
    found = approximate[: len(expected)]
    return sum(a == e for a, e in zip(found, expected)), len(expected)


def accuracy_eval(pam: SttCube, nm: SttCube, suite: Sequence[SuiteQuery]) -> List[AccuracyRow]:
    """Fraction of top-k positions where the PAM ranking matches the NM ranking, per query."""
    stored_k = pam.config.materialization.top_k
    rows: List[AccuracyRow] = []
    for query in suite:
        if query.all_keywords:
            continue
        scores, deltas, within = [], [], True
        for spec in query.specs:
            approximate = execute(pam, spec).rankings
            exact = {ranking.area: ranking for ranking in execute(nm, spec).rankings}
            for ranking in approximate:
                truth = exact.get(ranking.area)
                if truth is None:
                    continue
                matched, total = _matching_positions(
                    [item.keyword for item in ranking.ranking], [item.keyword for item in truth.ranking], spec.top_k
                )
                scores.append(matched / total if total else 1.0)
                deltas.append(ranking.delta)
                within = within and spec.top_k <= ranking.delta
        k = query.specs[0].top_k if query.specs else 0
        rows.append(
            AccuracyRow(
                query_id=query.query_id,
                k=k,
                accuracy=float(np.mean(scores)) if scores else 1.0,
                min_delta=min(deltas) if deltas else 0,
                within_delta=within,
                boundary=stored_k is not None and k == stored_k,
            )
        )
    return rows


# Planning curves


def benefit_curve(cube: SttCube, points: int) -> List[BenefitPoint]:
    """Greedy picks in order with their benefit, ignoring any storage budget."""
    cube.ensure_sizes()
    lattice = cube.lattice.copy()
    steps = greedy_select(lattice, points, CUBOIDS)
    curve: List[BenefitPoint] = []
    cumulative, rows = 0, 0
    for count, step in enumerate(steps, start=1):
        cumulative += step.benefit
        rows += step.size
        curve.append(BenefitPoint(cuboids=count, coord=step.pick.label, benefit=step.benefit, cumulative_benefit=cumulative, rows=rows))
    return curve


def sample_k(count: int, seed: int, upper: int = 1000) -> List[int]:
    """Long-tailed k values in [1, upper]."""
    rng = np.random.default_rng(seed)
    draws = rng.gamma(shape=1.5, scale=upper / 10.0, size=count)
    return [int(value) for value in np.clip(np.ceil(draws), 1, upper)]


def k_sweep(base: SttCube, suite: Sequence[SuiteQuery], cfg: BenchConfig) -> List[KSweepRow]:
    """Latency of top-k queries with sampled k against PAM cubes storing each K of the sweep."""
    queries = [query for query in suite if not query.all_keywords and query.specs]
    if not queries:
        return []
    ks = sample_k(cfg.k_samples, cfg.seed)
    rows: List[KSweepRow] = []
    for stored in cfg.k_sweep:
        cube = base.fork(MaterializationConfig(strategy=Strategy.PAM, top_k=stored, budget_ratio=cfg.budget_ratio, strict_budget=cfg.strict_budget))
        apply_strategy(cube, cube.config.materialization)
        latencies, approximate = [], 0
        for position, k in enumerate(ks):
            spec = queries[position % len(queries)].specs[0].model_copy(update={"k": k})
            elapsed, result = timed_query(cube, spec)
            latencies.append(elapsed)
            approximate += int(result.plan.approximate)
        values = np.asarray(latencies, dtype=float)
        quartiles = np.percentile(values, [0, 25, 50, 75, 100])
        rows.append(
            KSweepRow(
                top_k=stored,
                queries=len(values),
                approximate_fraction=approximate / len(values),
                min_ms=float(quartiles[0]),
                p25_ms=float(quartiles[1]),
                median_ms=float(quartiles[2]),
                p75_ms=float(quartiles[3]),
                max_ms=float(quartiles[4]),
                storage_rows=cube.storage_rows()[1],
            )
        )
        logger.info(f"K sweep: K={stored} median {quartiles[2]:.2f} ms, {approximate}/{len(values)} approximate")
    return rows


# Cost model


def fit_linear(rows: Sequence[int], latencies_ms: Sequence[float]) -> LinearFit:
    """Least-squares line through (rows, latency); a constant or single-size input is degenerate."""
    x = np.asarray(rows, dtype=float)
    y = np.asarray(latencies_ms, dtype=float)
    if len(np.unique(x)) < 2:
        return LinearFit(rows=list(rows), latencies_ms=list(latencies_ms), slope=0.0, intercept=float(y.mean()) if len(y) else 0.0, r_squared=0.0, degenerate=True)
    slope, intercept = np.polyfit(x, y, 1)
    total = float(((y - y.mean()) ** 2).sum())
    if total == 0.0:
        return LinearFit(rows=list(rows), latencies_ms=list(latencies_ms), slope=float(slope), intercept=float(intercept), r_squared=0.0, degenerate=True)
    residual = float(((y - (slope * x + intercept)) ** 2).sum())
    return LinearFit(
        rows=list(rows), latencies_ms=list(latencies_ms), slope=float(slope), intercept=float(intercept), r_squared=1.0 - residual / total
    )


def subcube(cube: SttCube, facts: int) -> SttCube:
    """An unmaterialized cube over the first ``facts`` facts."""
    store = FactStore()
    store.append(cube.facts.rows[:facts])
    config = cube.config.model_copy(update={"materialization": MaterializationConfig(strategy=Strategy.NM)})
    other = SttCube(config, cube.taxonomies, members=cube.members, facts=store)
    other.semantic_hierarchy = cube.semantic_hierarchy
    return other


def cost_model_microbench(cube: SttCube, sizes: Sequence[int], repetitions: int = 3) -> LinearFit:
    """
    Base-scan latency against base row count over several data sizes

    Raises:
        ValueError: fewer than three sizes
    """
    if len(sizes) < 3:
        raise ValueError("the cost model fit needs at least three sizes")
    level = _spatial_levels(cube, "country")
    spec = QuerySpec(measure=Measure.TOPK_DENSE, spatial_level=level, textual_level="term", k=10)
    rows, latencies = [], []
    for size in sorted(sizes):
        sample = subcube(cube, size)
        timings = [timed_query(sample, spec)[0] for _ in range(repetitions)]
        rows.append(sample.base_rows())
        latencies.append(float(np.median(timings)))
        logger.debug(f"Base scan over {rows[-1]} rows: {latencies[-1]:.2f} ms")
    fit = fit_linear(rows, latencies)
    logger.info(f"Cost model fit over {len(rows)} sizes: R^2 = {fit.r_squared:.4f}")
    return fit


# Orchestration


def strategy_config(strategy: Strategy, cfg: BenchConfig) -> MaterializationConfig:
    return MaterializationConfig(
        strategy=strategy,
        budget_ratio=cfg.budget_ratio,
        strict_budget=cfg.strict_budget,
        top_k=cfg.top_k if strategy in (Strategy.PAM, Strategy.GREEDY) else None,
    )


def strategy_cubes(base: SttCube, cfg: BenchConfig) -> Dict[Strategy, SttCube]:
    """One cube per strategy over the facts of ``base``."""
    cubes: Dict[Strategy, SttCube] = {}
    for strategy in cfg.strategies:
        cube = base.fork(strategy_config(strategy, cfg))
        apply_strategy(cube, cube.config.materialization)
        cubes[strategy] = cube
    return cubes


def load_bench_objects(cfg: BenchConfig):
    if cfg.data_path:
        return read_records(cfg.data_path)
    synth = SynthConfig(objects=cfg.objects, seed=cfg.seed, span_days=cfg.data_days, filler_words=cfg.filler_words)
    return parse_records(to_jsonl(generate_records(synth)))


def run_benchmark(cfg: BenchConfig, base: Optional[SttCube] = None) -> BenchReport:
    """
    Build one cube per strategy and measure latency, storage, accuracy and planning curves

    Args:
        cfg: benchmark settings
        base: an unmaterialized cube to benchmark; built from ``cfg`` when omitted

    Returns:
        The benchmark report
    """
    if base is None:
        config = CubeConfig(spatial_scheme=cfg.spatial_scheme, textual_scheme=cfg.textual_scheme)
        base = construct(load_bench_objects(cfg), load_taxonomies(), config)
    base.ensure_sizes()

    cubes = strategy_cubes(base, cfg)
    storage = [storage_row(strategy, cube) for strategy, cube in cubes.items()]
    check_storage_order(storage)

    suite = generate_suite(base, cfg.seed, cfg.k, cfg.span_days, cfg.repetitions)
    report = BenchReport(latency=run_suite(cubes, suite), storage=storage)
    if Strategy.PAM in cubes and Strategy.NM in cubes:
        report.accuracy = accuracy_eval(cubes[Strategy.PAM], cubes[Strategy.NM], suite)
    report.benefit_curve = benefit_curve(base, cfg.benefit_curve_points)
    if cfg.k_sweep:
        report.k_sweep = k_sweep(base, suite, cfg)
    if cfg.microbench_sizes:
        report.linearity = cost_model_microbench(base, cfg.microbench_sizes)
    logger.info(f"Benchmark finished: {len(suite)} queries on {len(cubes)} strategies")
    return report
