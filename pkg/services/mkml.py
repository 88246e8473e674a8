# services/mkml.py

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.cluster import kmeans_plusplus

from app.errors import ConvergenceError, DegenerateInputError, InputValidationError
from models.similarity_models import ClusterAssignment, KernelBank, SimilarityMatrix

logger = logging.getLogger(__name__)

# ============================================================
# 既定値
# ============================================================

MKML_ITERATIONS: int = 5
MKML_NEIGHBORS: int = 20
KMEANS_MAX_ITER: int = 300
KMEANS_REL_TOL: float = 1e-6


# ============================================================
# 多カーネル類似度
# ============================================================


def gaussian_kernels(features: np.ndarray, bank: KernelBank) -> np.ndarray:
    """k x n x n のガウスカーネル。バンド幅は μ_κ * (平均ペア間距離)。"""
    x = np.asarray(features, dtype=np.float64)
    dist = pdist(x, metric="euclidean")
    sigma_bar = float(dist.mean())
    if sigma_bar == 0.0:
        raise DegenerateInputError("すべての行が同一のため類似度のスケールが決まりません (σ̄=0)")
    sq = squareform(dist) ** 2
    mu = np.asarray(bank.bandwidths, dtype=np.float64)[:, None, None]
    return np.exp(-sq[None, :, :] / (2.0 * (mu * sigma_bar) ** 2))


def _knn_target(combined: np.ndarray, neighbors: int) -> np.ndarray:
    """各行を上位 neighbors 近傍に疎化し、対称化して D^-1/2 P D^-1/2 で正規化する。"""
    n = combined.shape[0]
    keep = min(neighbors, n - 1)
    s = combined.copy()
    np.fill_diagonal(s, 0.0)
    order = np.argsort(-s, axis=1, kind="stable")[:, :keep]
    p = np.zeros_like(s)
    rows = np.repeat(np.arange(n), keep)
    p[rows, order.reshape(-1)] = s[rows, order.reshape(-1)]
    p = (p + p.T) / 2.0
    deg = p.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[:, None] * p * inv[None, :]


def refine_weights(kernels: np.ndarray, weights: np.ndarray, neighbors: int) -> np.ndarray:
    """
    1 ラウンド分の重み更新。
    重み ∝ 各カーネルと疎化済み統合類似度のコサイン整合度（単体へ正規化）。
    """
    combined = np.tensordot(weights, kernels, axes=1)
    target = _knn_target(combined, neighbors)
    t_norm = np.linalg.norm(target)
    if t_norm == 0.0:
        return weights
    off = kernels.copy()
    idx = np.arange(off.shape[1])
    off[:, idx, idx] = 0.0
    k_norm = np.linalg.norm(off.reshape(off.shape[0], -1), axis=1)
    inner = (off * target[None]).sum(axis=(1, 2))
    align = np.where(k_norm > 0, inner / (np.where(k_norm > 0, k_norm, 1.0) * t_norm), 0.0)
    align = np.maximum(align, 0.0)
    total = align.sum()
    if total == 0.0:
        return weights
    return align / total


def learn_similarity(
    features: np.ndarray,
    bank: Optional[KernelBank] = None,
    iterations: int = MKML_ITERATIONS,
    neighbors: int = MKML_NEIGHBORS,
) -> SimilarityMatrix:
    """
    MKML の簡略版で n x n のサンプル類似度を学習する。
    戻り値は Σ w_κ K_κ を厳密に対称化し、対角を 1 にしたもの。
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputValidationError(f"類似度学習には 2 被験者以上が必要です shape={x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputValidationError("特徴量に非有限値があります")
    bank = bank or KernelBank()

    kernels = gaussian_kernels(x, bank)
    weights = np.asarray(bank.weights, dtype=np.float64)
    for it in range(iterations):
        weights = refine_weights(kernels, weights, neighbors)
        logger.debug("[mkml] round=%d weights=%s", it, np.round(weights, 4).tolist())

    s = np.tensordot(weights, kernels, axes=1)
    s = (s + s.T) / 2.0
    s = np.clip(s, 0.0, 1.0)
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(values=s, kernel_weights=tuple(float(w) for w in weights))


# ============================================================
# スペクトル埋め込み
# ============================================================


def embed(sim: SimilarityMatrix, dim: int) -> np.ndarray:
    """
    正規化ラプラシアン I - D^-1/2 S D^-1/2 の固有値の小さい順 dim 本の固有ベクトルを並べ、
    行ごとに単位長へ正規化する（ゼロ行はそのまま）。
    各固有ベクトルは最初の非ゼロ成分が正になるよう符号を揃える。
    """
    s = sim.values
    n = s.shape[0]
    if not (1 <= dim < n):
        raise InputValidationError(f"埋め込み次元は 1 <= dim < n が必要です dim={dim} n={n}")
    inv = 1.0 / np.sqrt(s.sum(axis=1))
    lap = np.eye(n) - inv[:, None] * s * inv[None, :]
    lap = (lap + lap.T) / 2.0
    try:
        _, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("embed", iterations=n) from exc

    u = vecs[:, :dim].copy()
    for j in range(dim):
        nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
    norms = np.linalg.norm(u, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, u / safe[:, None], 0.0)


# ============================================================
# k-means
# ============================================================


def _assign(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def _repair_empty(x: np.ndarray, labels: np.ndarray, centers: np.ndarray, c: int) -> np.ndarray:
    """空クラスタには最大クラスタの中心から最も遠い点を移す。"""
    labels = labels.copy()
    while True:
        sizes = np.bincount(labels, minlength=c)
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return labels
        largest = int(np.argmax(sizes))
        members = np.flatnonzero(labels == largest)
        dist = ((x[members] - centers[largest]) ** 2).sum(axis=1)
        far = members[int(np.argmax(dist))]
        labels[far] = empty[0]
        centers[empty[0]] = x[far]
        logger.debug("[mkml] kmeans repaired empty cluster=%d from=%d point=%d", empty[0], largest, far)


def kmeans_cluster(embedding: np.ndarray, c: int, seed: int) -> ClusterAssignment:
    """k-means++ 初期化と Lloyd 反復（相対変化 < 1e-6 か 300 回で停止）。"""
    x = np.asarray(embedding, dtype=np.float64)
    if x.ndim != 2:
        raise InputValidationError(f"埋め込みは 2 次元である必要があります shape={x.shape}")
    n = x.shape[0]
    if c < 1 or c > n:
        raise InputValidationError(f"クラスタ数が不正です c={c} n={n}")

    centers, _ = kmeans_plusplus(x, n_clusters=c, random_state=seed)
    centers = np.array(centers, dtype=np.float64)
    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        labels = _repair_empty(x, _assign(x, centers), centers, c)
        centers = np.stack([x[labels == j].mean(axis=0) for j in range(c)])
        inertia = float(((x - centers[labels]) ** 2).sum())
        history.append(inertia)
        if len(history) >= 2:
            prev = history[-2]
            if prev == 0.0 or abs(prev - inertia) / prev < KMEANS_REL_TOL:
                break

    return ClusterAssignment(labels=labels, c=c, centroids=centers, inertia_history=tuple(history))


def cluster_source_embeddings(
    z: np.ndarray,
    c: int,
    seed: int,
    bank: Optional[KernelBank] = None,
    iterations: int = MKML_ITERATIONS,
    neighbors: int = MKML_NEIGHBORS,
) -> ClusterAssignment:
    """ソース埋め込み Z を MKML 類似度 → スペクトル埋め込み (dim=c) → k-means でクラスタリングする。"""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or not np.all(np.isfinite(z)):
        raise InputValidationError(f"埋め込み Z が不正です shape={z.shape}")
    n = z.shape[0]
    if c > n:
        raise InputValidationError(f"クラスタ数が被験者数を超えています c={c} n={n}")
    if n == c:
        return ClusterAssignment(labels=np.arange(n), c=c, centroids=z.copy(), inertia_history=(0.0,))

    sim = learn_similarity(z, bank, iterations=iterations, neighbors=neighbors)
    emb = embed(sim, dim=c)
    assignment = kmeans_cluster(emb, c, seed)
    logger.info("[mkml] clustered n=%d c=%d sizes=%s", n, c, list(assignment.sizes()))
    return assignment
