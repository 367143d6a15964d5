import pandas as pd
import pytest

from stt_engine.models import CuboidCoord, SpatialScheme, TextualScheme, build_schema
from stt_engine.services.lattice_service import (
    LATTICE_COLUMNS,
    Lattice,
    LatticeDimension,
    aggregate,
    aggregate_facts,
    benefit,
    cost,
    enumerate_lattice,
    estimate_sizes,
    smallest_source,
)
from stt_engine.services.materialize_service import CUBOIDS, greedy_select, materialize_coords

M = 1_000_000


@pytest.fixture
def three_dim():
    """Day/location/term lattice with sizes of a worked greedy example."""
    lattice = Lattice.from_levels({"D": ("day", "all"), "L": ("loc", "all"), "T": ("term", "all")})
    sizes = {
        (0, 0, 0): 100 * M,
        (0, 0, 1): 15 * M,
        (0, 1, 0): 4 * M,
        (1, 0, 0): 96 * M,
        (0, 1, 1): 37,
        (1, 0, 1): 14 * M,
        (1, 1, 0): 2 * M,
        (1, 1, 1): 1,
    }
    lattice.set_sizes({lattice.coord_of(index): rows for index, rows in sizes.items()})
    return lattice


class TestEnumeration:
    @pytest.mark.parametrize("spatial", list(SpatialScheme))
    @pytest.mark.parametrize("textual", list(TextualScheme))
    def test_every_level_combination(self, spatial, textual):
        lattice = enumerate_lattice(build_schema(spatial, textual))
        assert len(lattice) == 500
        assert lattice.node(lattice.base).materialized
        assert sum(node.materialized for node in lattice) == 1

    def test_base_answers_everything(self):
        lattice = enumerate_lattice(build_schema())
        assert len(lattice.descendants(lattice.base)) == 500
        top = CuboidCoord.of(date="all", time_of_day="all", spatial="all", textual="all")
        assert lattice.descendants(top) == [top]

    def test_edges_roll_one_level(self):
        lattice = Lattice.from_levels({"D": ("day", "all"), "T": ("term", "theme", "all")})
        assert len(lattice) == 6
        assert len(lattice.edges()) == 7

    def test_unknown_coord(self):
        lattice = enumerate_lattice(build_schema())
        with pytest.raises(KeyError):
            lattice.node(CuboidCoord.of(date="week", time_of_day="all", spatial="all", textual="all"))


class TestAnswers:
    @pytest.fixture
    def linked(self):
        return Lattice([LatticeDimension("D", ("day", "all")), LatticeDimension("T", ("term", "theme", "all"), fact_linked=(0,))])

    def test_coarser_cannot_answer_finer(self, linked):
        assert not linked.answers(linked.coord_of((1, 0)), linked.coord_of((0, 0)))

    def test_fact_link_only_crossed_from_the_base(self, linked):
        assert not linked.answers(linked.coord_of((1, 0)), linked.coord_of((1, 1)))
        assert linked.answers(linked.base, linked.coord_of((1, 1)))
        assert linked.answers(linked.coord_of((0, 1)), linked.coord_of((1, 2)))

    def test_materialized_state(self, linked):
        coord = linked.coord_of((1, 1))
        linked.set_materialized(coord, stored_rows=3, top_k=2)
        assert linked.node(coord).truncated
        linked.reset()
        assert [node.coord for node in linked.materialized()] == [linked.base]


class TestBenefit:
    def test_initial_benefits(self, three_dim):
        dt, lt = three_dim.coord_of((0, 1, 0)), three_dim.coord_of((1, 0, 0))
        assert benefit(three_dim, dt) == 384 * M
        assert benefit(three_dim, lt) == 16 * M
        assert cost(three_dim, dt) == 100 * M

    def test_first_pick(self, three_dim):
        (step,) = greedy_select(three_dim, 1, unit=CUBOIDS)
        assert step.pick == three_dim.coord_of((0, 1, 0))
        assert step.benefit == 384 * M
        assert cost(three_dim, three_dim.coord_of((1, 1, 1))) == 4 * M

    def test_second_pick_accounts_for_the_first(self, three_dim):
        steps = greedy_select(three_dim, 2, unit=CUBOIDS)
        assert [s.pick for s in steps] == [three_dim.coord_of((0, 1, 0)), three_dim.coord_of((0, 0, 1))]
        assert [s.benefit for s in steps] == [384 * M, 170 * M]


class TestAggregation:
    CITY_TERM = CuboidCoord.of(date="day", time_of_day="hour", spatial="city", textual="term")
    TARGETS = [
        CuboidCoord.of(date="month", time_of_day="all", spatial="region", textual="theme"),
        CuboidCoord.of(date="all", time_of_day="hour", spatial="country", textual="term"),
        CuboidCoord.of(date="year", time_of_day="all", spatial="all", textual="all"),
    ]

    @pytest.mark.parametrize("target", TARGETS, ids=lambda c: c.label)
    def test_rollup_matches_base(self, small_cube, target):
        materialize_coords(small_cube, [self.CITY_TERM])
        from_parent = aggregate(small_cube, target, self.CITY_TERM)
        assert from_parent.same_contents(aggregate_facts(small_cube, target))

    def test_majority_rollup_above_the_theme(self, majority_cube):
        source = CuboidCoord.of(date="day", time_of_day="all", spatial="city", textual="theme")
        target = CuboidCoord.of(date="month", time_of_day="all", spatial="region", textual="topic")
        materialize_coords(majority_cube, [source])
        assert aggregate(majority_cube, target, source).same_contents(aggregate_facts(majority_cube, target))

    def test_unanswerable_source(self, small_cube):
        coarse = CuboidCoord.of(date="all", time_of_day="all", spatial="all", textual="all")
        with pytest.raises(ValueError):
            aggregate(small_cube, self.CITY_TERM, coarse)

    def test_smallest_source(self, small_cube):
        target = CuboidCoord.of(date="all", time_of_day="all", spatial="country", textual="term")
        assert smallest_source(small_cube, target) == small_cube.base_coord
        materialize_coords(small_cube, [self.CITY_TERM])
        assert smallest_source(small_cube, target) == self.CITY_TERM
        materialize_coords(small_cube, [target.replace("time_of_day", "all").replace("spatial", "region")], top_k=1)
        assert smallest_source(small_cube, target) == self.CITY_TERM

    @pytest.mark.parametrize("target", TARGETS + [CITY_TERM], ids=lambda c: c.label)
    def test_exact_size_estimates(self, small_cube, target):
        assert estimate_sizes(small_cube, [target])[target] == aggregate_facts(small_cube, target).row_count


def test_dump(small_cube, tmp_path):
    small_cube.ensure_sizes()
    frame = small_cube.lattice.dump()
    assert list(frame.columns) == LATTICE_COLUMNS
    assert len(frame) == 500
    assert frame.iloc[0]["coord"] == small_cube.base_coord.label
    assert frame["materialized"].sum() == 1
    path = tmp_path / "lattice.tsv"
    small_cube.lattice.write_dump(path)
    assert len(pd.read_csv(path, sep="\t")) == 500
