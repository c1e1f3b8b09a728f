"""HTTP inference surface over a built library."""

import base64

import numpy as np
import pytest
from numpy.random import default_rng

pytest.importorskip("fastapi")
from fastapi.testclient import TestClient

from cirgest import llm, retrieval, service
from cirgest.dataset import extract_features
from cirgest.llm import ProviderConfig


@pytest.fixture()
def client(letters_fixture):
    app = service.create_app(
        {"letters": letters_fixture["lib"]},
        image_root=str(letters_fixture["root"]),
        provider=ProviderConfig(name="mock:nearest"),
        config_hash="deadbeef",
    )
    return TestClient(app)


def _query_b64(seed=0):
    rng = default_rng(seed)
    raster = rng.integers(0, 256, size=(64, 90), dtype=np.uint8)
    return raster, base64.b64encode(llm.png_bytes(raster)).decode("ascii")


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["config_hash"] == "deadbeef"
    assert body["categories"] == ["letters"]


def test_features_endpoint(client):
    raster, b64 = _query_b64()
    resp = client.post("/features", json={"image_b64": b64})
    assert resp.status_code == 200
    vector = resp.json()["vector"]
    assert len(vector) == 4096
    assert np.allclose(vector, extract_features(raster))


def test_features_rejects_bad_payload(client):
    resp = client.post("/features", json={"image_b64": "!!!not-base64!!!"})
    assert resp.status_code == 400
    resp = client.post(
        "/features",
        json={"image_b64": base64.b64encode(b"not a png").decode("ascii")},
    )
    assert resp.status_code == 400


def test_retrieve_endpoint(client, letters_fixture):
    raster, b64 = _query_b64(1)
    resp = client.post("/retrieve", json={"image_b64": b64, "category": "letters"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["category"] == "letters"
    assert len(body["results"]) == 5
    expect = retrieval.retrieve_per_class(extract_features(raster), letters_fixture["lib"])
    got_ids = [r["sample_id"] for r in body["results"]]
    assert got_ids == [r.sample_id for r in expect]
    dists = [r["distance"] for r in body["results"]]
    assert dists == sorted(dists)


def test_classify_endpoint(client, letters_fixture):
    raster, b64 = _query_b64(2)
    resp = client.post("/classify", json={"image_b64": b64, "category": "letters"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    # mock nearest answers with the top retrieval hit
    expect = retrieval.retrieve_per_class(extract_features(raster), letters_fixture["lib"])
    assert body["predicted_label"] == expect[0].gesture_label


def test_unknown_category_is_400(client):
    _, b64 = _query_b64(3)
    resp = client.post("/retrieve", json={"image_b64": b64, "category": "fruit"})
    assert resp.status_code == 400


def test_unloaded_category_is_404(client):
    _, b64 = _query_b64(4)
    resp = client.post("/retrieve", json={"image_b64": b64, "category": "digits"})
    assert resp.status_code == 404
