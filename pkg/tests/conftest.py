from pathlib import Path
from typing import Dict, List

import pytest

from stt_engine.models import CubeConfig, CuboidCoord, MaterializationConfig, SpatialScheme, Strategy, TextualScheme
from stt_engine.services.cube_service import SttCube, Taxonomies, construct, load_taxonomies
from stt_engine.services.ingest_service import parse_records, to_jsonl
from stt_engine.services.synth_service import SynthConfig, generate_records

FIXTURES = Path(__file__).parent / "fixtures"

# Sample dataset: four geo-tagged posts from Aalborg and Aarhus
POSTS = [
    {"lat": 57.016254, "lon": 9.991203, "text": "Apple, fruit, #love", "ts": "2019-10-20T11:12:13"},
    {"lat": 56.187421, "lon": 10.171410, "text": "Potato, #NewYear", "ts": "2019-10-24T11:18:23"},
    {"lat": 56.151078, "lon": 10.204762, "text": "Banana, Season", "ts": "2019-10-20T11:35:56"},
    {"lat": 57.016254, "lon": 9.991203, "text": "Potato, Salad, #Fresh", "ts": "2019-10-24T16:12:14"},
]

# Two regions with full keyword distributions; r1 covers 10 km2 and r2 100 km2
TWO_CITY_COUNTS: Dict[str, Dict[str, int]] = {
    "r1": {"apple": 5, "orange": 5, "potato": 4, "strawberry": 3, "carrot": 2},
    "r2": {"carrot": 40, "apple": 30, "banana": 20, "strawberry": 19, "orange": 11},
}
TWO_CITY_POINTS = {"r1": (10.0, 10.0), "r2": (10.0, 12.0)}


def two_city_records() -> List[dict]:
    records = []
    for region, counts in TWO_CITY_COUNTS.items():
        lat, lon = TWO_CITY_POINTS[region]
        for keyword, count in counts.items():
            for i in range(count):
                records.append({"lat": lat, "lon": lon, "text": keyword, "ts": f"2019-10-20T10:{i // 60:02d}:{i % 60:02d}"})
    return records


def synth_objects(objects: int, seed: int, span_days: int = 10, taxonomies: Taxonomies = None):
    cfg = SynthConfig(objects=objects, seed=seed, span_days=span_days, filler_words=60, far_fraction=0.02)
    return parse_records(to_jsonl(generate_records(cfg, taxonomies)))


@pytest.fixture(scope="session")
def taxonomies() -> Taxonomies:
    return load_taxonomies()


@pytest.fixture(scope="session")
def two_city_taxonomies() -> Taxonomies:
    return load_taxonomies(FIXTURES / "two_city_geo.tsv")


@pytest.fixture
def posts_objects():
    return parse_records(to_jsonl(POSTS))


@pytest.fixture
def posts_cube(taxonomies, posts_objects) -> SttCube:
    return construct(posts_objects, taxonomies, CubeConfig())


@pytest.fixture
def two_city_cube(two_city_taxonomies) -> SttCube:
    return construct(parse_records(to_jsonl(two_city_records())), two_city_taxonomies, CubeConfig())


@pytest.fixture(scope="session")
def small_objects(taxonomies):
    return synth_objects(400, seed=3, taxonomies=taxonomies)


def build_cube(objects, taxonomies, spatial=SpatialScheme.SEMANTIC, textual=TextualScheme.REPLICATION, strategy=Strategy.NM, **materialization):
    config = CubeConfig(
        spatial_scheme=spatial,
        textual_scheme=textual,
        materialization=MaterializationConfig(strategy=strategy, **materialization),
    )
    return construct(objects, taxonomies, config)


@pytest.fixture
def small_cube(small_objects, taxonomies) -> SttCube:
    return build_cube(small_objects, taxonomies)


@pytest.fixture
def majority_cube(small_objects, taxonomies) -> SttCube:
    return build_cube(small_objects, taxonomies, textual=TextualScheme.MAJORITY)


# Planning profile: three compact day-level cuboids; every other node is as large as the base
PROFILE_BASE_ROWS = 1_000_000
DAY_CITY_TERM = CuboidCoord.of(date="day", time_of_day="all", spatial="city", textual="term")
DAY_LOCATION_THEME = CuboidCoord.of(date="day", time_of_day="all", spatial="location", textual="theme")
DAY_REGION_TERM = CuboidCoord.of(date="day", time_of_day="all", spatial="region", textual="term")
PROFILE_ROWS = {DAY_CITY_TERM: 50_000, DAY_LOCATION_THEME: 80_000, DAY_REGION_TERM: 10_000}


@pytest.fixture
def profile_cube(posts_cube) -> SttCube:
    sizes = {coord: PROFILE_BASE_ROWS for coord in posts_cube.lattice.nodes}
    sizes.update(PROFILE_ROWS)
    posts_cube.lattice.set_sizes(sizes)
    return posts_cube
