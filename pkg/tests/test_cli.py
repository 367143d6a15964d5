from io import StringIO

import pytest

from stt_engine.cli import main
from stt_engine.services.ingest_service import to_jsonl
from stt_engine.services.storage_service import load_cube

from conftest import POSTS


def run(*argv):
    out = StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


@pytest.fixture
def cube_dir(tmp_path):
    data = tmp_path / "posts.jsonl"
    data.write_bytes(to_jsonl(POSTS))
    code, output = run("build", "--data", str(data), "--cube", str(tmp_path / "cube"), "--strategy", "nm")
    assert code == 0
    assert output.startswith("facts=4\trejected=0\tcuboids=0")
    return tmp_path / "cube"


def test_query_counts(cube_dir):
    code, output = run(
        "query", "--cube", str(cube_dir), "--measure", "fact-count", "--spatial-level", "city", "--members", "aarhus", "--group-by-text"
    )
    assert code == 0
    lines = output.splitlines()
    assert lines[0] == "# area\tkeyword\tinterval\tvalue"
    assert "aarhus\tbanana\t\t1" in lines
    assert len(lines) == 5


def test_query_top_k(cube_dir):
    code, output = run("query", "--cube", str(cube_dir), "--measure", "topk-dense", "--spatial-level", "country", "--k", "2")
    assert code == 0
    lines = output.splitlines()
    assert lines[0] == "# epsilon=0\tdelta=2"
    assert lines[1].startswith("1\tpotato\t")
    assert lines[1].endswith("\t1")


def test_lattice_dump(cube_dir):
    code, output = run("lattice", "--cube", str(cube_dir))
    assert code == 0
    lines = output.splitlines()
    assert lines[0] == "coord\trow_count\tstored_rows\tmaterialized\ttop_k"
    assert len(lines) == 501


def test_update_and_materialize(cube_dir, tmp_path):
    more = tmp_path / "more.jsonl"
    more.write_bytes(to_jsonl(POSTS[2:]))
    code, output = run("update", "--cube", str(cube_dir), "--data", str(more))
    assert (code, output) == (0, "added=2\tfacts=6\trejected=0\n")

    code, output = run("materialize", "--cube", str(cube_dir), "--strategy", "pam", "--top-k", "2", "--budget-cuboids", "3")
    assert code == 0
    cube = load_cube(cube_dir)
    assert len(output.splitlines()) == len(cube.cuboids) <= 3
    assert all(cuboid.top_k == 2 for cuboid in cube.cuboids.values())


def test_missing_cube(tmp_path):
    code, _ = run("query", "--cube", str(tmp_path / "nope"), "--measure", "density")
    assert code == 2


def test_unknown_scheme(cube_dir):
    code, _ = run("query", "--cube", str(cube_dir), "--measure", "density", "--scheme", "hexagons")
    assert code == 2


def test_synth(tmp_path):
    code, output = run("synth", "--objects", "25", "--seed", "1", "--out", str(tmp_path / "synth.jsonl"))
    assert code == 0
    assert output.strip() == str(tmp_path / "synth.jsonl")
    assert len((tmp_path / "synth.jsonl").read_text().splitlines()) == 25
