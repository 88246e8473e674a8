# services/metrics.py

from __future__ import annotations

import logging

import numpy as np
from scipy.stats import pearsonr

from app.errors import DimensionError, InputValidationError, UndefinedCorrelationError
from models.centrality_models import CentralityMetric
from services.centrality import centrality_matrix

logger = logging.getLogger(__name__)


def pcc(a: np.ndarray, b: np.ndarray) -> float:
    """平坦化した 2 ベクトルのピアソン相関。"""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise DimensionError("pcc", (1, x.size), (1, y.size))
    if x.size < 2:
        raise InputValidationError(f"PCC には長さ 2 以上が必要です length={x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("分散がゼロのため PCC が定義できません", operation="pcc")
    value = float(pearsonr(x, y)[0])
    return float(np.clip(value, -1.0, 1.0))


def mae_centrality(
    truth: np.ndarray,
    pred: np.ndarray,
    r: int,
    metric: CentralityMetric,
    workers: int = 1,
) -> float:
    """n x r の中心性行列同士の平均絶対誤差。"""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise DimensionError("mae_centrality", t.shape, p.shape)
    ct = centrality_matrix(t, r, metric, workers=workers)
    cp = centrality_matrix(p, r, metric, workers=workers)
    if cp.clamped_edges:
        logger.info("[metrics] clamped negative predicted edges=%d metric=%s", cp.clamped_edges, metric)
    return float(np.mean(np.abs(ct.values - cp.values)))
