import argparse
import logging
import sys
from datetime import datetime
from typing import List, Optional, Sequence, TextIO, Tuple

import pandas as pd

from . import config
from .errors import SttCubeError
from .models import (
    ALL_K,
    BenchConfig,
    CubeConfig,
    KeywordSet,
    MaterializationConfig,
    Measure,
    QueryResult,
    QuerySpec,
    SpatialScheme,
    Strategy,
    TextualScheme,
)
from .services.bench_service import run_benchmark
from .services.cube_service import construct, load_taxonomies, update
from .services.ingest_service import read_records
from .services.materialize_service import apply_strategy
from .services.query_service import execute, rewrite
from .services.report_service import emit_report
from .services.storage_service import load_cube, save_cube
from .services.synth_service import SynthConfig, write_records

logger = logging.getLogger(__name__)


def _csv(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _instant(value: str) -> datetime:
    try:
        return pd.Timestamp(value).to_pydatetime()
    except (ValueError, TypeError):
        raise argparse.ArgumentTypeError(f"cannot parse time {value!r}") from None


def _k(value: str):
    return ALL_K if value.upper() == ALL_K else int(value)


def _schemes(args: argparse.Namespace) -> Tuple[Optional[SpatialScheme], Optional[TextualScheme]]:
    """Schemes from ``--scheme spatial,textual`` or the separate flags."""
    spatial = SpatialScheme(args.spatial_scheme) if args.spatial_scheme else None
    textual = TextualScheme(args.textual_scheme) if args.textual_scheme else None
    if args.scheme:
        for part in _csv(args.scheme):
            if part in SpatialScheme._value2member_map_:
                spatial = SpatialScheme(part)
            elif part in TextualScheme._value2member_map_:
                textual = TextualScheme(part)
            else:
                raise SttCubeError(f"unknown scheme {part!r}")
    return spatial, textual


def _materialization(args: argparse.Namespace) -> MaterializationConfig:
    return MaterializationConfig(
        strategy=Strategy(args.strategy),
        budget_rows=args.budget_rows,
        budget_cuboids=args.budget_cuboids,
        budget_bytes=args.budget_bytes,
        top_k=args.top_k,
        strict_budget=args.strict_budget,
    )


def _add_scheme_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scheme", help="spatial and/or textual scheme, e.g. grid,majority")
    parser.add_argument("--spatial-scheme", choices=[s.value for s in SpatialScheme])
    parser.add_argument("--textual-scheme", choices=[s.value for s in TextualScheme])


def _add_budget_flags(parser: argparse.ArgumentParser, strategy_default: Optional[str]) -> None:
    parser.add_argument("--strategy", choices=[s.value for s in Strategy], default=strategy_default)
    parser.add_argument("--budget-rows", type=int)
    parser.add_argument("--budget-cuboids", type=int)
    parser.add_argument("--budget-bytes", type=int)
    parser.add_argument("--top-k", type=int, help="K kept per group by pam/greedy")
    parser.add_argument("--strict-budget", action="store_true")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sttcube", description="Spatio-textual-temporal OLAP cubes")
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    verbs = parser.add_subparsers(dest="verb", required=True)

    build = verbs.add_parser("build", help="construct a cube directory from a record file")
    build.add_argument("--data", required=True)
    build.add_argument("--cube", required=True, help="cube directory to write")
    build.add_argument("--geo-taxonomy")
    build.add_argument("--text-taxonomy")
    build.add_argument("--importance")
    _add_scheme_flags(build)
    _add_budget_flags(build, Strategy.PEM.value)

    upd = verbs.add_parser("update", help="append a record file to a cube")
    upd.add_argument("--cube", required=True)
    upd.add_argument("--data", required=True)
    upd.add_argument("--full-rebuild", action="store_true")

    mat = verbs.add_parser("materialize", help="re-plan the materialized cuboids of a cube")
    mat.add_argument("--cube", required=True)
    _add_budget_flags(mat, None)

    query = verbs.add_parser("query", help="evaluate a measure")
    query.add_argument("--cube", required=True)
    query.add_argument("--measure", required=True, choices=[m.value.replace("_", "-") for m in Measure])
    query.add_argument("--spatial-level", default="all")
    query.add_argument("--members", type=_csv)
    query.add_argument("--group-by", help="spatial level to group areas by")
    query.add_argument("--textual-level", default="term")
    query.add_argument("--keywords", type=_csv)
    query.add_argument("--from", dest="start", type=_instant)
    query.add_argument("--to", dest="end", type=_instant)
    query.add_argument("--intervals", type=int, default=1)
    query.add_argument("--k", type=_k, default=10)
    query.add_argument("--group-by-time", action="store_true")
    query.add_argument("--group-by-text", action="store_true")
    query.add_argument("--hashtags-only", action="store_true")
    query.add_argument("--strategy", choices=[s.value for s in Strategy], help="re-plan in memory before querying")
    query.add_argument("--top-k", type=int, help="K for --strategy pam")
    _add_scheme_flags(query)

    lattice = verbs.add_parser("lattice", help="print the lattice dump")
    lattice.add_argument("--cube", required=True)
    lattice.add_argument("--out")

    bench = verbs.add_parser("bench", help="run the benchmark suite and write CSV reports")
    bench.add_argument("--data")
    bench.add_argument("--objects", type=int, default=100_000)
    bench.add_argument("--strategies", type=_csv, default=["nm", "pem", "pam", "fm"])
    bench.add_argument("--reps", type=int, default=10)
    bench.add_argument("--seed", type=int, default=7)
    bench.add_argument("--k", type=int, default=10)
    bench.add_argument("--top-k", type=int, default=config.TOP_K)
    bench.add_argument("--k-sweep", type=lambda v: [int(x) for x in _csv(v)], default=None)
    bench.add_argument("--k-samples", type=int, default=100)
    bench.add_argument("--microbench", type=lambda v: [int(x) for x in _csv(v)], default=[])
    bench.add_argument("--budget-ratio", type=float, help="extra rows allowed on top of the base, as a fraction of it")
    bench.add_argument("--out", required=True)
    _add_scheme_flags(bench)

    synth = verbs.add_parser("synth", help="write a synthetic record file")
    synth.add_argument("--objects", type=int, default=100_000)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--span-days", type=int, default=31)
    synth.add_argument("--out", required=True)
    return parser


# Output


def write_result(result: QueryResult, spec: QuerySpec, out: TextIO) -> None:
    """Rankings as a comment line with epsilon and delta followed by rank, keyword, score, guaranteed."""
    grouped = spec.group_by_level is not None or len(result.rankings) > 1
    for ranking in result.rankings:
        area = f"area={ranking.area}\t" if grouped else ""
        out.write(f"# {area}epsilon={ranking.epsilon:g}\tdelta={ranking.delta}\n")
        for rank, item in enumerate(ranking.ranking, start=1):
            out.write(f"{rank}\t{item.keyword}\t{item.score:.10g}\t{int(item.guaranteed)}\n")
    if result.rows:
        out.write("# area\tkeyword\tinterval\tvalue\n")
        for row in result.rows:
            keyword = row.keyword if row.keyword is not None else ""
            interval = row.interval if row.interval is not None else ""
            out.write(f"{row.area}\t{keyword}\t{interval}\t{row.value:.10g}\n")


# Verbs


def _build(args: argparse.Namespace, out: TextIO) -> None:
    spatial, textual = _schemes(args)
    cube_config = CubeConfig(
        spatial_scheme=spatial or SpatialScheme.SEMANTIC,
        textual_scheme=textual or TextualScheme.REPLICATION,
        materialization=_materialization(args),
    )
    taxonomies = load_taxonomies(args.geo_taxonomy, args.text_taxonomy, args.importance)
    cube = construct(read_records(args.data), taxonomies, cube_config)
    save_cube(cube, args.cube)
    base, extra = cube.storage_rows()
    out.write(f"facts={cube.fact_count}\trejected={cube.rejected}\tcuboids={len(cube.cuboids)}\tbase_rows={base}\textra_rows={extra}\n")


def _update(args: argparse.Namespace, out: TextIO) -> None:
    cube = load_cube(args.cube)
    before = cube.fact_count
    update(cube, read_records(args.data), full_rebuild=args.full_rebuild)
    save_cube(cube, args.cube)
    out.write(f"added={cube.fact_count - before}\tfacts={cube.fact_count}\trejected={cube.rejected}\n")


def _materialize(args: argparse.Namespace, out: TextIO) -> None:
    cube = load_cube(args.cube)
    if args.strategy is None:
        args.strategy = cube.config.materialization.strategy.value
    apply_strategy(cube, _materialization(args))
    save_cube(cube, args.cube)
    for coord in sorted(cube.cuboids):
        cuboid = cube.cuboids[coord]
        out.write(f"{coord.label}\t{cuboid.row_count}\t{cuboid.top_k if cuboid.top_k is not None else ''}\n")


def _query(args: argparse.Namespace, out: TextIO) -> None:
    cube = load_cube(args.cube)
    spatial, textual = _schemes(args)
    if args.strategy is not None:
        apply_strategy(cube, MaterializationConfig(strategy=Strategy(args.strategy), top_k=args.top_k))
    spec = QuerySpec(
        measure=Measure(args.measure.replace("-", "_")),
        spatial_level=args.spatial_level,
        members=tuple(args.members) if args.members else None,
        group_by_level=args.group_by,
        textual_level=args.textual_level,
        keywords=tuple(args.keywords) if args.keywords else None,
        start=args.start,
        end=args.end,
        intervals=args.intervals,
        k=args.k,
        group_by_time=args.group_by_time,
        group_by_text=args.group_by_text,
        spatial_scheme=spatial,
        textual_scheme=textual,
        keyword_set=KeywordSet(hashtags_only=args.hashtags_only),
    )
    plan = rewrite(cube, spec)
    write_result(execute(cube, spec, plan), spec, out)


def _lattice(args: argparse.Namespace, out: TextIO) -> None:
    cube = load_cube(args.cube)
    cube.ensure_sizes()
    if args.out:
        cube.lattice.write_dump(args.out)
    else:
        cube.lattice.dump().to_csv(out, sep="\t", index=False)


def _bench(args: argparse.Namespace, out: TextIO) -> None:
    spatial, textual = _schemes(args)
    fields = dict(
        data_path=args.data,
        objects=args.objects,
        seed=args.seed,
        strategies=[Strategy(s) for s in args.strategies],
        repetitions=args.reps,
        k=args.k,
        top_k=args.top_k,
        k_samples=args.k_samples,
        microbench_sizes=args.microbench,
        spatial_scheme=spatial or SpatialScheme.SEMANTIC,
        textual_scheme=textual or TextualScheme.REPLICATION,
    )
    if args.k_sweep is not None:
        fields["k_sweep"] = args.k_sweep
    if args.budget_ratio is not None:
        fields["budget_ratio"] = args.budget_ratio
    report = run_benchmark(BenchConfig(**fields))
    for path in emit_report(report, args.out):
        out.write(f"{path}\n")


def _synth(args: argparse.Namespace, out: TextIO) -> None:
    path = write_records(SynthConfig(objects=args.objects, seed=args.seed, span_days=args.span_days), args.out)
    out.write(f"{path}\n")


VERBS = {
    "build": _build,
    "update": _update,
    "materialize": _materialize,
    "query": _query,
    "lattice": _lattice,
    "bench": _bench,
    "synth": _synth,
}


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=config.LOG_FORMAT)
    try:
        VERBS[args.verb](args, out or sys.stdout)
    except (SttCubeError, ValueError, OSError) as e:
        logger.error(f"{args.verb} failed: {str(e)}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
