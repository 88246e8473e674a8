# tests/test_api.py

import numpy as np
import pytest
from fastapi.testclient import TestClient

from agents.predictor_agent import predict
from agents.trainer_agent import train
from app.main import app
from services.population_io import write_population


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture
def trained(tmp_path, tiny_population, tiny_config, default_weights):
    state = train(
        tiny_population.subset(np.arange(9)), tiny_config, default_weights,
        test_subjects=tiny_population.subjects[9:], out_dir=tmp_path / "run",
    )
    write_population(tiny_population, tmp_path / "data")
    return state, tmp_path / "run" / "model.ckpt", tmp_path / "data"


def test_health(client):
    res = client.get("/api/health")
    assert res.status_code == 200
    assert res.json() == {"status": "ok"}


def test_synth(client, tmp_path):
    res = client.post("/api/synth", json={"out_dir": str(tmp_path / "d"), "n": 8, "r": 4, "m": 2, "seed": 1})
    assert res.status_code == 200
    body = res.json()
    assert body["f"] == 6
    assert body["domains"] == ["S", "T1", "T2"]
    assert (tmp_path / "d" / "population.csv").exists()


def test_synth_rejects_bad_payload(client, tmp_path):
    res = client.post("/api/synth", json={"out_dir": str(tmp_path), "n": 1, "m": 1})
    assert res.status_code == 422


def test_predict(client, trained, tiny_population):
    state, ckpt, _ = trained
    source = tiny_population.source.features[9:]
    res = client.post("/api/predict", json={"checkpoint": str(ckpt), "source": source.tolist()})
    assert res.status_code == 200
    body = res.json()
    assert body["domains"] == ["T1", "T2"]
    np.testing.assert_allclose(np.array(body["predictions"][0]), predict(state, source)[0])


def test_predict_wrong_length_is_bad_request(client, trained):
    _, ckpt, _ = trained
    res = client.post("/api/predict", json={"checkpoint": str(ckpt), "source": [[0.1, 0.2]]})
    assert res.status_code == 400
    assert res.json()["error"] == "DimensionError"


def test_evaluate(client, trained):
    _, ckpt, data = trained
    res = client.post("/api/evaluate", json={"checkpoint": str(ckpt), "data_dir": str(data)})
    assert res.status_code == 200
    body = res.json()
    assert body["metadata"]["n_test"] == 3
    assert [d["domain"] for d in body["domains"]] == ["T1", "T2"]


def test_missing_checkpoint_is_bad_request(client, tmp_path):
    res = client.post("/api/evaluate", json={"checkpoint": str(tmp_path / "x.ckpt"), "data_dir": str(tmp_path)})
    assert res.status_code == 400
