import pandas as pd
import pytest

from stt_engine.errors import BenchmarkError
from stt_engine.models import (
    BenchConfig,
    BenchReport,
    LatencyRow,
    LinearFit,
    MaterializationConfig,
    Measure,
    SpatialScheme,
    StorageRow,
    Strategy,
    SttObject,
    TextualScheme,
)
from stt_engine.services.bench_service import (
    accuracy_eval,
    benefit_curve,
    cost_model_microbench,
    fit_linear,
    generate_suite,
    load_bench_objects,
    run_benchmark,
    run_suite,
    sample_k,
)
from stt_engine.services.materialize_service import apply_strategy
from stt_engine.services.report_service import emit_report
from stt_engine.services.synth_service import SynthConfig, generate_records

from conftest import build_cube, synth_objects


class TestSuite:
    def test_templates_and_ids(self, small_cube):
        suite = generate_suite(small_cube, seed=1, k=5)
        assert len(suite) == 18
        assert suite[0].query_id == "Q1-dense"
        assert suite[1].query_id == "Q1-volatile"
        q9 = next(query for query in suite if query.query_id == "Q9-dense")
        assert q9.all_keywords
        assert q9.specs[0].k == "ALL"
        assert q9.specs[0].group_by_level == "region"

    def test_same_seed_same_suite(self, small_cube):
        first = generate_suite(small_cube, seed=4, repetitions=3)
        second = generate_suite(small_cube, seed=4, repetitions=3)
        assert [q.model_dump() for q in first] == [q.model_dump() for q in second]

    def test_volatile_specs_split_into_days(self, small_cube):
        for query in generate_suite(small_cube, seed=2, span_days=3, measures=(Measure.TOPK_VOLATILE,)):
            spec = query.specs[0]
            assert spec.intervals == 3
            assert (spec.end - spec.start).days == 3
            assert spec.start.hour == 0

    def test_majority_skips_term_templates(self, majority_cube):
        suite = generate_suite(majority_cube)
        assert len(suite) == 10
        assert {query.template for query in suite} == {"Q2", "Q3", "Q5", "Q6", "Q9"}

    def test_grid_levels(self, small_objects, taxonomies):
        cube = build_cube(small_objects, taxonomies, spatial=SpatialScheme.GRID)
        suite = generate_suite(cube)
        assert {query.specs[0].spatial_level for query in suite} == {"cell1", "cell2", "cell3"}


class TestRunSuite:
    @pytest.fixture
    def cubes(self, small_cube):
        pem = small_cube.fork()
        apply_strategy(pem, MaterializationConfig(strategy=Strategy.PEM))
        return {Strategy.NM: small_cube, Strategy.PEM: pem}

    def test_exact_strategies_agree(self, cubes, small_cube):
        suite = generate_suite(small_cube, seed=3, repetitions=2)
        rows = run_suite(cubes, suite)
        assert len(rows) == 2 * len(suite)
        assert all(row.n == 2 and row.mean_ms >= 0 for row in rows)
        by_query = {}
        for row in rows:
            by_query.setdefault(row.query_id, set()).add(row.result_hash)
        assert all(len(hashes) == 1 for hashes in by_query.values())

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [11, 12, 13])
    @pytest.mark.parametrize(
        "spatial,textual",
        [
            (SpatialScheme.SEMANTIC, TextualScheme.REPLICATION),
            (SpatialScheme.GRID, TextualScheme.REPLICATION),
            (SpatialScheme.SEMANTIC, TextualScheme.MAJORITY),
        ],
    )
    def test_partial_materialization_matches_base_scans(self, taxonomies, seed, spatial, textual):
        nm = build_cube(synth_objects(300, seed=seed, taxonomies=taxonomies), taxonomies, spatial=spatial, textual=textual)
        pem = nm.fork()
        apply_strategy(pem, MaterializationConfig(strategy=Strategy.PEM, budget_cuboids=6))
        assert pem.cuboids
        rows = run_suite({Strategy.NM: nm, Strategy.PEM: pem}, generate_suite(nm, seed=seed, repetitions=2))
        assert rows

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "spatial,textual",
        [
            (SpatialScheme.SEMANTIC, TextualScheme.REPLICATION),
            (SpatialScheme.GRID, TextualScheme.REPLICATION),
            (SpatialScheme.SEMANTIC, TextualScheme.MAJORITY),
        ],
    )
    def test_full_materialization_matches_base_scans(self, taxonomies, spatial, textual):
        nm = build_cube(synth_objects(150, seed=17, taxonomies=taxonomies), taxonomies, spatial=spatial, textual=textual)
        fm = nm.fork()
        apply_strategy(fm, MaterializationConfig(strategy=Strategy.FM))
        assert len(fm.cuboids) == len(fm.lattice) - 1
        assert run_suite({Strategy.NM: nm, Strategy.FM: fm}, generate_suite(nm, seed=17))

    def test_disagreement_is_reported(self, small_cube, posts_cube):
        suite = generate_suite(small_cube, seed=3)
        with pytest.raises(BenchmarkError):
            run_suite({Strategy.NM: small_cube, Strategy.PEM: posts_cube}, suite)

    def test_accuracy_within_guaranteed_prefix(self, small_cube):
        pam = small_cube.fork()
        apply_strategy(pam, MaterializationConfig(strategy=Strategy.PAM, top_k=6))
        suite = generate_suite(small_cube, seed=5, k=3, repetitions=2)
        rows = accuracy_eval(pam, small_cube, suite)
        assert {row.query_id for row in rows} == {query.query_id for query in suite if not query.all_keywords}
        for row in rows:
            assert 0.0 <= row.accuracy <= 1.0
            if row.within_delta:
                assert row.accuracy == 1.0


class TestPlanningCurves:
    def test_benefit_curve(self, small_cube):
        curve = benefit_curve(small_cube, 4)
        assert [point.cuboids for point in curve] == [1, 2, 3, 4]
        assert all(a.benefit >= b.benefit for a, b in zip(curve, curve[1:]))
        assert curve[-1].cumulative_benefit == sum(point.benefit for point in curve)
        assert small_cube.cuboids == {}
        assert len(small_cube.lattice.materialized()) == 1

    def test_benefit_plateaus_after_three_cuboids(self, profile_cube):
        curve = benefit_curve(profile_cube, 10)
        assert [point.coord for point in curve] == ["day|all|city|term", "day|all|location|theme", "day|all|region|term"]
        assert curve[-1].cumulative_benefit == 116_400_000
        assert curve[0].benefit > 0.8 * curve[-1].cumulative_benefit
        assert curve[-1].rows == 140_000

    def test_sample_k_is_bounded(self):
        ks = sample_k(200, seed=1, upper=50)
        assert len(ks) == 200
        assert min(ks) >= 1 and max(ks) <= 50
        assert sample_k(200, seed=1, upper=50) == ks


class TestCostModel:
    def test_exact_line(self):
        fit = fit_linear([1, 2, 3], [2.0, 4.0, 6.0])
        assert fit.slope == pytest.approx(2.0)
        assert fit.intercept == pytest.approx(0.0, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)
        assert not fit.degenerate

    @pytest.mark.parametrize("rows,latencies", [([5, 5, 5], [1.0, 2.0, 3.0]), ([1, 2, 3], [4.0, 4.0, 4.0])])
    def test_degenerate_inputs(self, rows, latencies):
        assert fit_linear(rows, latencies).degenerate

    def test_microbench_needs_three_sizes(self, small_cube):
        with pytest.raises(ValueError):
            cost_model_microbench(small_cube, [10, 20])

    def test_microbench_scans_growing_bases(self, small_cube):
        fit = cost_model_microbench(small_cube, [300, 100, 200], repetitions=1)
        assert fit.rows == sorted(fit.rows)
        assert len(fit.latencies_ms) == 3


class TestReport:
    def test_files_and_order(self, tmp_path):
        storage = [
            StorageRow(strategy=s, cuboids=c, base_rows=10, extra_rows=e, total_rows=10 + e)
            for s, c, e in [(Strategy.PEM, 3, 9), (Strategy.NM, 0, 0), (Strategy.PAM, 3, 4)]
        ]
        latency = [LatencyRow(query_id="Q1-dense", strategy=Strategy.NM, n=1, mean_ms=1.0, stddev_ms=0.0, median_ms=1.0)]
        report = BenchReport(storage=storage, latency=latency, linearity=LinearFit(rows=[1, 2], latencies_ms=[1.0, 2.0], slope=1.0, intercept=0.0, r_squared=1.0))
        written = emit_report(report, tmp_path / "out")
        assert sorted(p.name for p in written) == sorted(
            ["latency.csv", "storage.csv", "accuracy.csv", "benefit_curve.csv", "k_sweep.csv", "linearity.csv", "README.md"]
        )
        assert pd.read_csv(tmp_path / "out" / "storage.csv")["strategy"].tolist() == ["nm", "pam", "pem"]
        assert "R^2 = 1.0000" in (tmp_path / "out" / "README.md").read_text()

    def test_empty_report_has_headers(self, tmp_path):
        emit_report(BenchReport(), tmp_path)
        assert list(pd.read_csv(tmp_path / "latency.csv").columns) == list(LatencyRow.model_fields)
        assert not (tmp_path / "linearity.csv").exists()


class TestSynth:
    def test_deterministic(self, taxonomies):
        cfg = SynthConfig(objects=50, seed=11, filler_words=20)
        assert generate_records(cfg, taxonomies) == generate_records(cfg, taxonomies)
        assert generate_records(cfg, taxonomies) != generate_records(cfg.model_copy(update={"seed": 12}), taxonomies)

    def test_record_shape(self, taxonomies):
        records = generate_records(SynthConfig(objects=30, seed=2, filler_words=10), taxonomies)
        assert len(records) == 30
        assert all({"lat", "lon", "text", "ts"} <= set(record) for record in records)

    def test_bench_records_cover_one_week(self):
        objects = [obj for obj in load_bench_objects(BenchConfig(objects=300)) if isinstance(obj, SttObject)]
        stamps = [obj.timestamp for obj in objects]
        assert (max(stamps) - min(stamps)).days < 7
        assert BenchConfig().strict_budget


@pytest.mark.slow
def test_run_benchmark(small_cube, tmp_path):
    cfg = BenchConfig(
        strategies=[Strategy.NM, Strategy.PAM, Strategy.PEM],
        repetitions=1,
        top_k=5,
        k_sweep=[5, 20],
        k_samples=4,
        benefit_curve_points=3,
        microbench_sizes=[100, 200, 300],
    )
    report = run_benchmark(cfg, base=small_cube)
    assert [row.strategy for row in report.storage] == [Strategy.NM, Strategy.PAM, Strategy.PEM]
    assert len(report.benefit_curve) == 3
    assert [row.top_k for row in report.k_sweep] == [5, 20]
    assert report.linearity is not None
    assert emit_report(report, tmp_path)
