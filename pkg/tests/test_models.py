from datetime import datetime, timedelta, timezone

import pytest
from pydantic import ValidationError

from stt_engine import config
from stt_engine.models import (
    Cardinality,
    CuboidCoord,
    GeoPoint,
    GridConfig,
    MaterializationConfig,
    Measure,
    Member,
    MemberStore,
    QuerySpec,
    RejectReason,
    SpatialScheme,
    SttObject,
    StopwordList,
    Strategy,
    TextualScheme,
    build_schema,
    validate,
)

TS = datetime(2019, 10, 20, 11, 12, 13)


def test_posts_object_is_accepted():
    record = SttObject(location=GeoPoint(lat=57.016254, lon=9.991203), terms=("apple", "fruit", "#love"), timestamp=TS)
    assert validate(record).accepted
    assert record.timestamp.tzinfo == timezone.utc
    assert record.location.member_id() == "57.016254,9.991203"


@pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, -180.5), (float("nan"), 0.0)])
def test_bad_coordinates_are_rejected(lat, lon):
    result = validate(SttObject(location=GeoPoint(lat=lat, lon=lon), terms=("apple",), timestamp=TS))
    assert not result.accepted
    assert result.reason == RejectReason.BAD_COORDINATE


def test_empty_text_is_rejected():
    result = validate(SttObject(location=GeoPoint(lat=0.0, lon=0.0), terms=(), timestamp=TS))
    assert result.reason == RejectReason.EMPTY_TEXT


def test_aware_timestamps_convert_to_utc():
    cet = timezone(timedelta(hours=2))
    record = SttObject(location=GeoPoint(lat=0.0, lon=0.0), terms=("a",), timestamp=datetime(2019, 10, 20, 13, 12, 13, 500, tzinfo=cet))
    assert record.timestamp == datetime(2019, 10, 20, 11, 12, 13, tzinfo=timezone.utc)


def test_stopwords_must_be_lowercase():
    with pytest.raises(ValidationError):
        StopwordList(words=frozenset({"The"}))


def test_grid_cell_areas_grow_by_factor_squared():
    grid = GridConfig()
    assert grid.levels == ("cell0", "cell1", "cell2", "cell3", "all")
    assert grid.cell_area_km2(0) == 1.0
    assert grid.cell_area_km2(1) == 9.0
    assert grid.cell_area_km2(3) == 729.0


def test_schema_level_structure():
    replication = build_schema()
    assert replication.level_counts() == {"date": 5, "time_of_day": 4, "spatial": 5, "textual": 5}
    assert replication.hierarchy("textual").steps[0].cardinality == Cardinality.N_N
    assert not any(step.fact_linked for step in replication.hierarchy("textual").steps)

    majority = build_schema(textual_scheme=TextualScheme.MAJORITY)
    steps = majority.hierarchy("textual").steps
    assert steps[0].fact_linked and steps[0].cardinality == Cardinality.N_ONE

    grid = build_schema(spatial_scheme=SpatialScheme.GRID)
    assert grid.hierarchy("spatial").levels == GridConfig().levels


def test_cuboid_coord_orders_hierarchies():
    coord = CuboidCoord.of(textual="term", spatial="city", date="day", time_of_day="all")
    assert coord.names == ("date", "time_of_day", "spatial", "textual")
    assert coord.label == "day|all|city|term"
    assert coord.file_stem == "day-all-city-term"
    assert coord.replace("spatial", "region")["spatial"] == "region"
    with pytest.raises(KeyError):
        coord.replace("colour", "red")


def test_member_store_deduplicates():
    store = MemberStore()
    member = Member(id="aalborg", level="city", name="Aalborg", parent="north-jutland", surface_area=139.0)
    assert store.add("semantic", member)
    assert not store.add("semantic", member)
    assert store.ids("semantic", "city") == ["aalborg"]
    assert MemberStore.from_frames({"semantic": store.to_frame("semantic")}) == store


class TestQuerySpec:
    def test_volatility_needs_a_range(self):
        with pytest.raises(ValidationError):
            QuerySpec(measure=Measure.VOLATILITY, keywords=("apple",))

    def test_range_must_split_evenly(self):
        start = datetime(2019, 10, 1, tzinfo=timezone.utc)
        with pytest.raises(ValidationError):
            QuerySpec(measure=Measure.TOPK_VOLATILE, start=start, end=start + timedelta(seconds=10), intervals=3)

    def test_range_must_be_non_empty(self):
        start = datetime(2019, 10, 1, tzinfo=timezone.utc)
        with pytest.raises(ValidationError):
            QuerySpec(measure=Measure.DENSITY, start=start, end=start)

    def test_k_is_positive_or_all(self):
        assert QuerySpec(measure=Measure.TOPK_DENSE, k="ALL").top_k is None
        with pytest.raises(ValidationError):
            QuerySpec(measure=Measure.TOPK_DENSE, k=0)

    def test_interval_bounds(self):
        start = datetime(2019, 10, 1)
        spec = QuerySpec(measure=Measure.TOPK_VOLATILE, start=start, end=start + timedelta(days=3), intervals=3)
        bounds = spec.interval_bounds()
        assert len(bounds) == 4
        assert bounds[1] - bounds[0] == timedelta(days=1)


class TestMaterializationConfig:
    def test_pam_defaults_k(self):
        assert MaterializationConfig(strategy=Strategy.PAM).top_k == config.TOP_K

    def test_pem_rejects_k(self):
        with pytest.raises(ValidationError):
            MaterializationConfig(strategy=Strategy.PEM, top_k=5)

    def test_one_budget_unit(self):
        with pytest.raises(ValidationError):
            MaterializationConfig(budget_rows=10, budget_cuboids=2)
