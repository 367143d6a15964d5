from datetime import datetime, timezone

import pytest

from stt_engine.errors import QueryValidationError
from stt_engine.models import CuboidCoord
from stt_engine.services.lattice_service import aggregate_facts
from stt_engine.services.olap_service import (
    Always,
    KeywordIn,
    MeasureAtLeast,
    MemberIn,
    Predicate,
    TimeRange,
    stt_dice,
    stt_drilldown,
    stt_rollup,
    stt_slice,
    view_of,
)

DAY_HOUR_CITY = CuboidCoord.of(date="day", time_of_day="hour", spatial="city", textual="term")
CITY = CuboidCoord.of(date="all", time_of_day="all", spatial="city", textual="term")


def same_frames(view, cuboid) -> bool:
    return view.groups.equals(cuboid.groups) and view.cells.equals(cuboid.cells)


class TestRollup:
    def test_composed_rollup_equals_direct(self, small_cube):
        view = view_of(small_cube, DAY_HOUR_CITY)
        stepwise = stt_rollup(stt_rollup(view, "date", "month"), "date", "year")
        direct = stt_rollup(view, "date", "year")
        assert stepwise.coord == direct.coord
        assert stepwise.groups.equals(direct.groups) and stepwise.cells.equals(direct.cells)
        assert same_frames(direct, aggregate_facts(small_cube, direct.coord))

    @pytest.mark.parametrize("hierarchy,level", [("spatial", "country"), ("textual", "topic"), ("time_of_day", "all")])
    def test_rollup_matches_aggregation(self, small_cube, hierarchy, level):
        rolled = stt_rollup(view_of(small_cube, DAY_HOUR_CITY), hierarchy, level)
        assert same_frames(rolled, aggregate_facts(small_cube, DAY_HOUR_CITY.replace(hierarchy, level)))

    def test_majority_rollup_recomputes_across_the_fact_link(self, majority_cube):
        rolled = stt_rollup(view_of(majority_cube, CITY), "textual", "theme")
        assert same_frames(rolled, aggregate_facts(majority_cube, CITY.replace("textual", "theme")))

    def test_keyword_filtered_majority_view_cannot_cross_the_fact_link(self, majority_cube):
        view = stt_dice(view_of(majority_cube, CITY), KeywordIn(["apple", "potato"]))
        with pytest.raises(QueryValidationError):
            stt_rollup(view, "textual", "theme")

    def test_invalid_rollups(self, posts_cube):
        view = view_of(posts_cube, CITY)
        with pytest.raises(QueryValidationError):
            stt_rollup(view, "spatial", "location")
        with pytest.raises(QueryValidationError):
            stt_rollup(view, "spatial", "continent")
        with pytest.raises(QueryValidationError):
            stt_rollup(stt_slice(view, "spatial", "aalborg"), "spatial", "region")


class TestSliceAndDice:
    def test_spatial_slice(self, posts_cube):
        view = stt_slice(view_of(posts_cube, CITY), "spatial", "aalborg")
        assert view.dimensions == ("date", "time_of_day", "textual")
        assert view.fact_count() == 2
        assert set(view.cells["keyword"]) == {"apple", "fruit", "#love", "potato", "salad", "#fresh"}

    def test_slice_after_rolling_to_a_level(self, posts_cube):
        view = stt_slice(view_of(posts_cube, CITY), "spatial", "denmark", level="country")
        assert view.coord["spatial"] == "country"
        assert view.fact_count() == 4

    def test_keyword_slice_counts_facts_with_the_keyword(self, posts_cube):
        view = stt_slice(view_of(posts_cube, CITY), "textual", "potato")
        assert view.textual_filtered
        assert dict(zip(view.groups["spatial"], view.groups["fact_count"])) == {"aalborg": 1, "aarhus": 1}

    def test_time_slice(self, posts_cube):
        view = view_of(posts_cube, CuboidCoord.of(date="day", time_of_day="all", spatial="city", textual="term"))
        sliced = stt_slice(view, "date", "2019-10-20")
        assert sliced.fact_count() == 2
        assert sum(stt_slice(view, "date", day).fact_count() for day in ("2019-10-20", "2019-10-24")) == view.fact_count()

    def test_dice_on_fact_count(self, posts_cube):
        view = view_of(posts_cube, CuboidCoord.of(date="day", time_of_day="all", spatial="location", textual="term"))
        assert stt_dice(view, MeasureAtLeast("fact_count", 2)).cells.empty

    def test_slice_twice(self, posts_cube):
        view = stt_slice(view_of(posts_cube, CITY), "spatial", "aalborg")
        with pytest.raises(QueryValidationError):
            stt_slice(view, "spatial", "aarhus")

    def test_dice_on_measure(self, posts_cube):
        country = stt_rollup(view_of(posts_cube, CITY), "spatial", "country")
        diced = stt_dice(country, MeasureAtLeast("freq", 2))
        assert diced.keyword_frequencies().to_dict() == {"potato": 2}
        assert diced.textual_filtered

    def test_dice_with_composed_conditions(self, posts_cube):
        view = view_of(posts_cube, CuboidCoord.of(date="day", time_of_day="all", spatial="city", textual="term"))
        early = TimeRange(datetime(2019, 10, 20, tzinfo=timezone.utc), datetime(2019, 10, 21, tzinfo=timezone.utc))
        diced = stt_dice(view, early & ~MemberIn("spatial", ("aarhus",)))
        assert diced.keyword_frequencies().to_dict() == {"#love": 1, "apple": 1, "fruit": 1}
        assert not diced.textual_filtered
        assert stt_dice(view, Always()).cells.equals(view.cells)

    def test_dice_member_at_coarser_level(self, posts_cube):
        view = stt_dice(view_of(posts_cube, CITY), MemberIn("spatial", ("central-jutland",), level="region"))
        assert set(view.groups["spatial"]) == {"aarhus"}

    def test_unknown_measure(self, posts_cube):
        with pytest.raises(QueryValidationError):
            stt_dice(view_of(posts_cube, CITY), MeasureAtLeast("popularity", 1))

    def test_condition_needs_a_mask(self):
        class Unfinished(Predicate):
            pass

        with pytest.raises(TypeError):
            Unfinished()


class TestDrilldown:
    def test_drilldown_of_full_view(self, posts_cube):
        country = view_of(posts_cube, CITY.replace("spatial", "country"))
        drilled = stt_drilldown(country, "spatial", "city")
        assert same_frames(drilled, aggregate_facts(posts_cube, CITY))

    def test_drilldown_keeps_diced_rows(self, posts_cube):
        country = stt_dice(view_of(posts_cube, CITY.replace("spatial", "country")), KeywordIn(["potato"]))
        drilled = stt_drilldown(country, "spatial", "city")
        assert sorted(zip(drilled.cells["spatial"], drilled.cells["keyword"])) == [("aalborg", "potato"), ("aarhus", "potato")]

    def test_cannot_drill_up(self, posts_cube):
        with pytest.raises(QueryValidationError):
            stt_drilldown(view_of(posts_cube, CITY), "spatial", "country")
