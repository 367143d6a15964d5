import json

import pytest

from stt_engine.errors import SchemaMismatchError, StorageError
from stt_engine.models import MaterializationConfig, Measure, QuerySpec, Strategy, TextualScheme
from stt_engine.services.cube_service import update
from stt_engine.services.ingest_service import parse_records, to_jsonl
from stt_engine.services.materialize_service import apply_strategy
from stt_engine.services.query_service import execute
from stt_engine.services.storage_service import FORMAT_VERSION, decode_facts, encode_fact, load_cube, save_cube

from conftest import POSTS, build_cube

SPECS = [
    QuerySpec(measure=Measure.TOPK_DENSE, spatial_level="region", k=3),
    QuerySpec(measure=Measure.FACT_COUNT, spatial_level="country", group_by_level="city"),
    QuerySpec(measure=Measure.TOPK_FREQUENT, spatial_level="all", textual_level="theme", k="ALL"),
]


@pytest.fixture
def pam_cube(small_cube):
    apply_strategy(small_cube, MaterializationConfig(strategy=Strategy.PAM, top_k=5, budget_cuboids=6))
    return small_cube


def test_round_trip(pam_cube, tmp_path):
    path = save_cube(pam_cube, tmp_path / "cube")
    loaded = load_cube(path)
    assert loaded.fact_count == pam_cube.fact_count
    assert (loaded.rejected, loaded.unknown_locations) == (pam_cube.rejected, pam_cube.unknown_locations)
    assert loaded.members == pam_cube.members
    assert loaded.config == pam_cube.config
    assert set(loaded.cuboids) == set(pam_cube.cuboids)
    assert all(loaded.cuboids[coord].same_contents(cuboid) for coord, cuboid in pam_cube.cuboids.items())
    for spec in SPECS:
        assert execute(loaded, spec).result_hash() == execute(pam_cube, spec).result_hash()


def test_lattice_sizes_survive(pam_cube, tmp_path):
    pam_cube.ensure_sizes()
    loaded = load_cube(save_cube(pam_cube, tmp_path / "cube"))
    assert loaded.lattice.dump().equals(pam_cube.lattice.dump())


def test_loaded_cube_accepts_updates(posts_cube, tmp_path):
    loaded = load_cube(save_cube(posts_cube, tmp_path / "cube"))
    update(loaded, parse_records(to_jsonl(POSTS[:2])))
    assert loaded.fact_count == 6
    assert loaded.members.ids("semantic", "location") == posts_cube.members.ids("semantic", "location")


def test_majority_themes_survive(small_objects, taxonomies, tmp_path):
    cube = build_cube(small_objects[:50], taxonomies, textual=TextualScheme.MAJORITY)
    loaded = load_cube(save_cube(cube, tmp_path / "cube"))
    assert [row.theme for row in loaded.facts.rows] == [row.theme for row in cube.facts.rows]


def test_save_replaces_previous_contents(posts_cube, small_cube, tmp_path):
    save_cube(small_cube, tmp_path / "cube")
    save_cube(posts_cube, tmp_path / "cube")
    assert load_cube(tmp_path / "cube").fact_count == 4
    assert [p.name for p in tmp_path.iterdir()] == ["cube"]


def test_fact_encoding(posts_cube):
    data = b"".join(encode_fact(row) for row in posts_cube.facts.rows)
    assert list(decode_facts(data)) == posts_cube.facts.rows
    with pytest.raises(StorageError):
        list(decode_facts(data[:2]))


class TestBrokenDirectories:
    @pytest.fixture
    def saved(self, posts_cube, tmp_path):
        return save_cube(posts_cube, tmp_path / "cube")

    def test_version_mismatch(self, saved):
        manifest = json.loads((saved / "schema.json").read_text())
        manifest["format_version"] = FORMAT_VERSION + 1
        (saved / "schema.json").write_text(json.dumps(manifest))
        with pytest.raises(SchemaMismatchError):
            load_cube(saved)

    def test_missing_manifest(self, saved):
        (saved / "schema.json").unlink()
        with pytest.raises(StorageError):
            load_cube(saved)

    def test_fact_count_mismatch(self, saved):
        manifest = json.loads((saved / "schema.json").read_text())
        manifest["facts"] = 5
        (saved / "schema.json").write_text(json.dumps(manifest))
        with pytest.raises(StorageError):
            load_cube(saved)

    def test_truncated_facts(self, saved):
        data = (saved / "facts.bin").read_bytes()
        (saved / "facts.bin").write_bytes(data[:-3])
        with pytest.raises(StorageError):
            load_cube(saved)
