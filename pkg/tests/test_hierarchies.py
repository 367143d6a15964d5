from datetime import datetime, timezone

import numpy as np
import pandas as pd
import pytest

from stt_engine.errors import TaxonomyError
from stt_engine.hierarchies import (
    DateHierarchy,
    SemanticSpatialHierarchy,
    SpatialTaxonomy,
    TextTaxonomy,
    TextualHierarchy,
    TimeOfDayHierarchy,
    assign_parents,
    build_temporal,
    load_importance,
    spatial_parents,
    textual_parent_custom,
    textual_parent_majority,
    textual_parents_replication,
)
from stt_engine.models import ALL_MEMBER, UNKNOWN_MEMBER, GridConfig, TextualScheme

HEADER = "member_id\tlevel\tname\tparent_id\trep_lat\trep_lon\tsurface_area_km2\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestTemporal:
    def test_posts_timestamp(self):
        members = build_temporal(datetime(2019, 10, 20, 11, 12, 13))
        assert members.date == {"day": "2019-10-20", "month": "2019-10", "quarter": "2019-Q4", "year": "2019", "all": "All"}
        assert members.time_of_day == {"second": "11:12:13", "minute": "11:12", "hour": "11", "all": "All"}

    @pytest.mark.parametrize(
        "ts,quarter",
        [(datetime(2019, 1, 1), "2019-Q1"), (datetime(2019, 6, 30, 23, 59, 59), "2019-Q2"), (datetime(2019, 7, 1), "2019-Q3")],
    )
    def test_quarters(self, ts, quarter):
        assert build_temporal(ts).date["quarter"] == quarter

    def test_month_of_day_matches_month_of_instant(self):
        rng = np.random.default_rng(1)
        hierarchy = DateHierarchy()
        for seconds in rng.integers(0, 40 * 365 * 86_400, size=50):
            ts = datetime.fromtimestamp(int(seconds), tz=timezone.utc)
            members = build_temporal(ts)
            assert hierarchy.roll(members.date["day"], "day", "month") == members.date["month"]
            assert hierarchy.roll(members.date["day"], "day", "quarter") == members.date["quarter"]

    def test_vectorised_roll_matches_step_roll(self):
        hierarchy = DateHierarchy()
        days = pd.Series(["2019-10-20", "2019-02-03", "2020-12-31"])
        for level in ("month", "quarter", "year", "all"):
            expected = [hierarchy.roll(day, "day", level) for day in days]
            assert hierarchy.roll_series(days, "day", level).tolist() == expected

    def test_date_spans(self):
        hierarchy = DateHierarchy()
        start, end = hierarchy.span("2019-Q4", "quarter")
        assert start == datetime(2019, 10, 1, tzinfo=timezone.utc)
        assert end == datetime(2020, 1, 1, tzinfo=timezone.utc)

    def test_time_of_day(self):
        hierarchy = TimeOfDayHierarchy()
        assert hierarchy.chain("11:12:13", "second") == ["11:12:13", "11:12", "11", ALL_MEMBER]
        assert hierarchy.span("11", "hour") == (39_600, 43_200)

    def test_cannot_roll_down(self):
        with pytest.raises(ValueError):
            DateHierarchy().roll("2019", "year", "day")


class TestSpatial:
    def test_city_chain(self, taxonomies):
        assert spatial_parents("aalborg", taxonomies.geo) == ("aalborg", "north-jutland", "denmark", ALL_MEMBER)

    def test_unknown_chain(self, taxonomies):
        assert spatial_parents(UNKNOWN_MEMBER, taxonomies.geo) == (UNKNOWN_MEMBER,) * 3 + (ALL_MEMBER,)

    def test_semantic_hierarchy(self, taxonomies):
        hierarchy = SemanticSpatialHierarchy(taxonomies.geo, GridConfig())
        hierarchy.link_location("57.016254,9.991203", "aalborg")
        assert hierarchy.roll("57.016254,9.991203", "location", "country") == "denmark"
        assert hierarchy.roll("aalborg", "city", "all") == ALL_MEMBER
        assert hierarchy.surface_area("aalborg", "city") == 139.0
        assert hierarchy.surface_area("north-jutland", "region") == 7933.0

    def test_areas_derive_from_children(self, two_city_taxonomies):
        assert two_city_taxonomies.geo.area_of("r3") == 110.0
        assert two_city_taxonomies.geo.area_of("land") == 110.0

    def test_dangling_parent(self, tmp_path):
        path = write(tmp_path, "geo.tsv", HEADER + "x\tcity\tX\tnowhere\t1\t1\t5\n")
        with pytest.raises(TaxonomyError):
            SpatialTaxonomy.load(path)

    def test_city_needs_area(self, tmp_path):
        text = HEADER + "c\tcountry\tC\t\t0\t0\t10\nr\tregion\tR\tc\t0\t0\t10\nx\tcity\tX\tr\t1\t1\t\n"
        with pytest.raises(TaxonomyError):
            SpatialTaxonomy.load(write(tmp_path, "geo.tsv", text))


class TestTextual:
    def test_taxonomy_levels(self, taxonomies):
        text = taxonomies.text
        assert text.ancestor("apple", "theme") == "fruits"
        assert text.ancestor("apple", "topic") == "produce"
        assert text.ancestor("apple", "concept") == "food"
        assert text.ancestor("#love", "concept") == "#love"
        assert TextualHierarchy(text).roll("carrot", "term", "topic") == "produce"

    def test_replication(self, taxonomies):
        assert textual_parents_replication(["apple", "fruit", "#love"], taxonomies.text, "theme") == {"fruits", "#love"}
        assert textual_parents_replication([], taxonomies.text, "theme") == set()
        assert textual_parents_replication(["zzz", "yyy"], taxonomies.text, "topic") == {"zzz", "yyy"}

    def test_majority(self, taxonomies):
        assert textual_parent_majority(["apple", "fruit", "#love"], taxonomies.text) == "fruits"
        assert textual_parent_majority(["potato"], taxonomies.text) == "vegetables"
        assert textual_parent_majority(["apple", "fruit", "#love"], taxonomies.text, "topic") == "produce"

    def test_majority_tie_goes_to_smaller_id(self):
        tax = TextTaxonomy(parents={"x": "b", "y": "a"})
        assert textual_parent_majority(["x", "y"], tax) == "a"

    def test_majority_needs_terms(self, taxonomies):
        with pytest.raises(ValueError):
            textual_parent_majority([], taxonomies.text)

    def test_custom(self, taxonomies):
        terms = ["apple", "fruit", "#love"]
        assert textual_parent_custom(terms, taxonomies.text, {"fruits": 0.9, "#love": 0.1}) == "fruits"
        assert textual_parent_custom(terms, taxonomies.text, {}) == "#love"
        flipped = textual_parent_custom(terms, taxonomies.text, {"#love": 1.0})
        assert flipped == "#love" != textual_parent_majority(terms, taxonomies.text)

    def test_majority_parent_is_a_replication_parent(self, taxonomies):
        rng = np.random.default_rng(5)
        vocabulary = ["apple", "potato", "salad", "coffee", "rain", "#love", "song", "unlisted"]
        for _ in range(100):
            terms = list(rng.choice(vocabulary, size=int(rng.integers(1, 6))))
            assert textual_parent_majority(terms, taxonomies.text) in textual_parents_replication(terms, taxonomies.text, "theme")

    def test_assign_parents_shapes(self, taxonomies):
        facts = {"f1": ["apple", "#love"], "f2": ["potato"]}
        replication = assign_parents(facts, taxonomies.text, TextualScheme.REPLICATION)
        assert replication.mapping["f1"] == frozenset({"fruits", "#love"})
        majority = assign_parents(facts, taxonomies.text, TextualScheme.MAJORITY)
        assert majority.mapping == {"f1": "#love", "f2": "vegetables"}

    def test_conflicting_parents(self, tmp_path):
        path = write(tmp_path, "text.tsv", "apple\tfruits\napple\tvegetables\n")
        with pytest.raises(TaxonomyError):
            TextTaxonomy.load(path)

    def test_cycle(self, tmp_path):
        with pytest.raises(TaxonomyError):
            TextTaxonomy.load(write(tmp_path, "text.tsv", "a\tb\nb\ta\n"))

    def test_importance_scores(self, tmp_path):
        assert load_importance(write(tmp_path, "imp.tsv", "member_id\tscore\nfruits\t0.9\n")) == {"fruits": 0.9}
        with pytest.raises(TaxonomyError):
            load_importance(write(tmp_path, "bad.tsv", "fruits\thigh\n"))
