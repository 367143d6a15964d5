import pytest
from fastapi.testclient import TestClient

import main
from stt_engine.services.cube_service import CubeService

from conftest import POSTS


@pytest.fixture
def client(monkeypatch, tmp_path):
    monkeypatch.setattr(main, "cube_service", CubeService(tmp_path))
    return TestClient(main.app)


@pytest.fixture
def built(client):
    response = client.post("/cubes", json={"name": "posts", "records": POSTS, "config": {"materialization": {"strategy": "nm"}}})
    assert response.status_code == 200
    return response.json()


def test_root_lists_cubes(client, built):
    assert client.get("/").json()["cubes"] == ["posts"]


def test_build(built):
    assert (built["facts"], built["rejected"], built["cuboids"]) == (4, 0, 0)


def test_build_needs_records(client):
    assert client.post("/cubes", json={"name": "empty"}).status_code == 400


def test_build_rejects_bad_names(client):
    assert client.post("/cubes", json={"name": ".hidden", "records": POSTS}).status_code == 400


def test_query(client, built):
    body = {"measure": "fact_count", "spatial_level": "city", "members": ["aarhus"], "group_by_text": True}
    payload = client.post("/cubes/posts/query", json=body).json()
    assert {row["keyword"]: row["value"] for row in payload["rows"]} == {"#newyear": 1, "banana": 1, "potato": 1, "season": 1}
    assert payload["plan"]["guarantee"] == "exact"


def test_top_k(client, built):
    body = {"measure": "topk_dense", "spatial_level": "country", "k": 1}
    (ranking,) = client.post("/cubes/posts/query", json=body).json()["rankings"]
    assert ranking["area"] == "denmark"
    assert [item["keyword"] for item in ranking["ranking"]] == ["potato"]


def test_invalid_query(client, built):
    response = client.post("/cubes/posts/query", json={"measure": "density", "spatial_level": "province"})
    assert response.status_code == 400


def test_unknown_cube(client):
    assert client.post("/cubes/nope/query", json={"measure": "density"}).status_code == 404
    assert client.get("/cubes/nope/lattice").status_code == 404


def test_update_then_materialize(client, built):
    response = client.post("/cubes/posts/update", json={"records": POSTS[:2]})
    assert response.json()["facts"] == 6
    response = client.post("/cubes/posts/materialize", json={"materialization": {"strategy": "pem", "budget_cuboids": 2}})
    assert response.status_code == 200
    assert len(response.json()["cuboids"]) <= 2


def test_lattice(client, built):
    nodes = client.get("/cubes/posts/lattice").json()["nodes"]
    assert len(nodes) == 500
    assert nodes[0]["materialized"] == 1


def test_persisted_cube_is_found_by_name(client, tmp_path):
    client.post("/cubes", json={"name": "kept", "records": POSTS, "persist": True})
    assert (tmp_path / "kept" / "schema.json").exists()
    main.cube_service.drop("kept")
    assert client.get("/cubes/kept/lattice").status_code == 200
