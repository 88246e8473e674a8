# tests/test_population_io.py

import logging

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.errors import DimensionError, IncompletePairingError, InputValidationError
from models.graph_models import BrainGraph, FeatureVector
from services.population_io import (
    devectorize,
    devectorize_batch,
    infer_layout,
    load_population,
    population_frame,
    read_source_rows,
    vectorize,
    write_feature_rows,
    write_population,
)


def _random_graph(rng, r):
    upper = np.triu(rng.uniform(0, 1, size=(r, r)), k=1)
    return BrainGraph(weights=upper + upper.T)


def _write_rows(path, rows, f=3):
    cols = ["subject_id", "domain", *[f"v_{k}" for k in range(f)]]
    pd.DataFrame(rows, columns=cols).to_csv(path, index=False)
    return path


FIXTURE_ROWS = [
    ("b", "S", 0.1, 0.2, 0.3),
    ("b", "T1", 0.4, 0.5, 0.6),
    ("b", "T2", 0.7, 0.8, 0.9),
    ("a", "S", 0.0, 0.1, 0.2),
    ("a", "T1", 0.3, 0.4, 0.5),
    ("a", "T2", 0.6, 0.7, 0.8),
]


# ---------- ベクトル化 ----------


def test_vectorize_row_major_upper_triangle():
    w = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    np.testing.assert_array_equal(vectorize(BrainGraph(weights=w)).values, [1, 2, 3])
    assert vectorize(BrainGraph(weights=np.ones((4, 4)) - np.eye(4))).f == 6


def test_invalid_graphs_are_rejected():
    with pytest.raises(ValidationError):
        BrainGraph(weights=np.array([[0, 1], [2, 0]], dtype=float))
    with pytest.raises(ValidationError):
        BrainGraph(weights=np.array([[0, -1], [-1, 0]], dtype=float))


def test_devectorize_and_clamp_count():
    g, clamped = devectorize(np.array([0.2, 0.3, 0.4]), 3)
    assert g.weights[0, 1] == g.weights[1, 0] == 0.2
    assert np.all(np.diag(g.weights) == 0)
    assert clamped == 0

    empty, _ = devectorize(np.zeros(3), 3)
    assert not empty.weights.any()

    g, clamped = devectorize(np.array([-0.5, 0.3, 0.4]), 3)
    assert clamped == 1
    assert g.weights[0, 1] == 0.0


def test_devectorize_length_mismatch():
    with pytest.raises(DimensionError):
        devectorize(np.zeros(4), 3)


def test_round_trip_on_random_graphs(rng):
    for _ in range(100):
        r = int(rng.integers(3, 9))
        g = _random_graph(rng, r)
        back, clamped = devectorize(vectorize(g), r)
        assert clamped == 0
        np.testing.assert_array_equal(back.weights, g.weights)


def test_devectorize_batch_shapes(rng):
    x = rng.uniform(0, 1, size=(5, 10))
    adj, clamped = devectorize_batch(x, 5)
    assert adj.shape == (5, 5, 5)
    assert clamped == 0
    for k in range(5):
        np.testing.assert_array_equal(vectorize(BrainGraph(weights=adj[k])).values, x[k])


# ---------- 読み込み ----------


def test_load_population_fixture(tmp_path):
    path = _write_rows(tmp_path / "population.csv", FIXTURE_ROWS)
    pop = load_population(path, r=3, m=2)
    assert (pop.n, pop.m, pop.f) == (2, 2, 3)
    assert pop.subjects == ("a", "b")
    np.testing.assert_allclose(pop.targets[1].features[1], [0.7, 0.8, 0.9])


def test_shuffled_rows_give_identical_population(tmp_path):
    sorted_pop = load_population(_write_rows(tmp_path / "a.csv", FIXTURE_ROWS), r=3, m=2)
    shuffled = [FIXTURE_ROWS[k] for k in (4, 0, 5, 2, 3, 1)]
    shuffled_pop = load_population(_write_rows(tmp_path / "b.csv", shuffled), r=3, m=2)
    for a, b in zip(sorted_pop.domains, shuffled_pop.domains):
        np.testing.assert_array_equal(a.features, b.features)
    assert sorted_pop.subjects == shuffled_pop.subjects


def test_missing_target_is_incomplete_pairing(tmp_path):
    rows = [row for row in FIXTURE_ROWS if row[:2] != ("b", "T2")]
    with pytest.raises(IncompletePairingError) as info:
        load_population(_write_rows(tmp_path / "p.csv", rows), r=3, m=2)
    assert info.value.subject_ids == ["b"]
    assert info.value.missing == {"b": ["T2"]}


def test_wrong_feature_length_and_bad_value(tmp_path):
    with pytest.raises(InputValidationError):
        load_population(_write_rows(tmp_path / "p.csv", FIXTURE_ROWS), r=4, m=2)

    rows = list(FIXTURE_ROWS)
    rows[2] = ("b", "T2", 0.7, "x", 0.9)
    with pytest.raises(InputValidationError) as info:
        load_population(_write_rows(tmp_path / "q.csv", rows), r=3, m=2)
    assert "4 行目" in str(info.value)


def test_out_of_range_values_warn(tmp_path, caplog):
    rows = list(FIXTURE_ROWS)
    rows[0] = ("b", "S", 1.5, 0.2, 0.3)
    with caplog.at_level(logging.WARNING):
        load_population(_write_rows(tmp_path / "p.csv", rows), r=3, m=2)
    assert "values outside [0,1]" in caplog.text


def test_write_then_load_directory(tmp_path, tiny_population):
    write_population(tiny_population, tmp_path)
    assert infer_layout(tmp_path) == (4, 2)
    back = load_population(tmp_path, r=4, m=2)
    assert back.subjects == tiny_population.subjects
    for a, b in zip(back.domains, tiny_population.domains):
        np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(back.labels, tiny_population.labels)


def test_feature_rows_reload_bit_exact(tmp_path):
    path = tmp_path / "rows.csv"
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, f = int(rng.integers(1, 6)), int(rng.integers(1, 12))
        x = rng.uniform(0, 1, size=(n, f))
        subjects = [f"s{i:02d}" for i in range(n)]
        write_feature_rows(x, subjects, "S", path)
        ids, back = read_source_rows(path)
        assert ids == subjects
        np.testing.assert_array_equal(back, x)


def test_population_frame_order(tiny_population):
    frame = population_frame(tiny_population)
    assert list(frame["domain"][:3]) == ["S", "T1", "T2"]
    assert frame["subject_id"].is_monotonic_increasing


def test_read_source_rows_keeps_only_source(tmp_path):
    path = _write_rows(tmp_path / "p.csv", FIXTURE_ROWS)
    subjects, values = read_source_rows(path)
    assert subjects == ["a", "b"]
    np.testing.assert_allclose(values, [[0.0, 0.1, 0.2], [0.1, 0.2, 0.3]])


def test_feature_vector_rejects_non_triangular_length():
    with pytest.raises(ValidationError):
        FeatureVector(values=np.zeros(4))
