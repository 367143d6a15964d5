import numpy as np
import pytest

from stt_engine.models import BenchConfig, CubeConfig, Strategy
from stt_engine.services.bench_service import (
    accuracy_eval,
    check_storage_order,
    cost_model_microbench,
    generate_suite,
    load_bench_objects,
    run_suite,
    storage_row,
    strategy_cubes,
)
from stt_engine.services.cube_service import construct
from stt_engine.services.query_service import rewrite

pytestmark = pytest.mark.slow

CFG = BenchConfig(strategies=[Strategy.NM, Strategy.PAM, Strategy.PEM], repetitions=5)


@pytest.fixture(scope="module")
def bench_cube(taxonomies):
    cube = construct(load_bench_objects(CFG), taxonomies, CubeConfig())
    cube.ensure_sizes()
    return cube


@pytest.fixture(scope="module")
def cubes(bench_cube):
    return strategy_cubes(bench_cube, CFG)


@pytest.fixture(scope="module")
def suite(bench_cube):
    return generate_suite(bench_cube, CFG.seed, CFG.k, CFG.span_days, CFG.repetitions)


def test_pem_keeps_city_terms(cubes, suite):
    pem = cubes[Strategy.PEM]
    assert len(pem.cuboids) >= 3
    q1 = next(query for query in suite if query.query_id == "Q1-dense")
    assert all(not rewrite(pem, spec).from_base for spec in q1.specs)


def test_storage_stays_within_a_quarter_of_the_base(cubes):
    rows = [storage_row(strategy, cube) for strategy, cube in cubes.items()]
    check_storage_order(rows)
    for row in rows:
        assert row.extra_rows < 0.25 * row.base_rows


def test_base_scans_are_much_slower(cubes, suite):
    q1 = [query for query in suite if query.query_id == "Q1-dense"]
    rows = run_suite({Strategy.NM: cubes[Strategy.NM], Strategy.PEM: cubes[Strategy.PEM]}, q1)
    median = {row.strategy: row.median_ms for row in rows}
    assert median[Strategy.NM] >= 5 * median[Strategy.PEM]


def test_approximate_rankings_are_accurate(cubes, suite):
    rows = accuracy_eval(cubes[Strategy.PAM], cubes[Strategy.NM], suite)
    assert rows
    assert np.mean([row.accuracy for row in rows]) >= 0.9


def test_base_scan_latency_grows_linearly(bench_cube):
    fit = cost_model_microbench(bench_cube, [6_000, 12_000, 24_000, 48_000, 96_000], repetitions=5)
    assert not fit.degenerate
    assert fit.r_squared >= 0.95
