# tests/test_metrics.py

import numpy as np
import pytest

from app.errors import DimensionError, InputValidationError, UndefinedCorrelationError
from services.centrality import centrality_matrix
from services.metrics import mae_centrality, pcc


def test_pcc_known_values():
    assert pcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pcc(np.array([[1.0, 2.0], [3.0, 5.0]]), np.array([[1.0, 2.0], [3.0, 5.0]])) == pytest.approx(1.0)


def test_pcc_is_symmetric_and_bounded(rng):
    for _ in range(100):
        a = rng.normal(size=10)
        b = rng.normal(size=10)
        value = pcc(a, b)
        assert -1.0 <= value <= 1.0
        assert value == pytest.approx(pcc(b, a))


def test_pcc_undefined_for_constant_input():
    with pytest.raises(UndefinedCorrelationError):
        pcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_pcc_shape_errors():
    with pytest.raises(DimensionError):
        pcc([1, 2, 3], [1, 2])
    with pytest.raises(InputValidationError):
        pcc([1.0], [2.0])


def test_mae_centrality_zero_for_identical(rng):
    x = rng.uniform(0.1, 1.0, size=(4, 6))
    for metric in ("BC", "CC", "EC"):
        assert mae_centrality(x, x.copy(), 4, metric) == 0.0


def test_mae_centrality_doubling_weights_shifts_closeness(rng):
    x = rng.uniform(0.1, 0.5, size=(3, 6))
    expected = np.mean(np.abs(centrality_matrix(x, 4, "CC").values))
    assert mae_centrality(x, 2.0 * x, 4, "CC") == pytest.approx(expected)
    # 固有ベクトルは重みの定数倍で変わらない
    assert mae_centrality(x, 2.0 * x, 4, "EC") == pytest.approx(0.0, abs=1e-8)


def test_mae_centrality_shape_mismatch():
    with pytest.raises(DimensionError):
        mae_centrality(np.zeros((2, 6)), np.zeros((3, 6)), 4, "EC")


def test_pcc_hand_value_and_affine_invariance(rng):
    assert pcc([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9819805060619657, abs=1e-12)
    for _ in range(100):
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        alpha, beta = rng.uniform(0.1, 5.0), rng.normal()
        assert pcc(alpha * a + beta, b) == pytest.approx(pcc(a, b), abs=1e-12)


def test_mae_centrality_matches_loop_reference(rng):
    truth = rng.uniform(0.1, 1.0, size=(5, 10))
    pred = rng.uniform(0.1, 1.0, size=(5, 10))
    for metric in ("BC", "CC", "EC"):
        ct = centrality_matrix(truth, 5, metric).values
        cp = centrality_matrix(pred, 5, metric).values
        total = 0.0
        for s in range(5):
            for v in range(5):
                total += abs(ct[s, v] - cp[s, v])
        assert mae_centrality(truth, pred, 5, metric) == pytest.approx(total / 25, abs=1e-12)
    assert mae_centrality(truth, pred, 5, "EC") <= 2.0
