# services/centrality.py

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Dict, Tuple

import networkx as nx
import numpy as np

from app.errors import ConvergenceError, DegenerateInputError, InputValidationError
from models.centrality_models import CentralityMatrix, CentralityMetric
from models.graph_models import BrainGraph
from services import autodiff as ad
from services.autodiff import Tensor
from services.population_io import devectorize_batch, triu_indices

logger = logging.getLogger(__name__)

EC_MAX_ITER: int = 1000
EC_TOL: float = 1e-10
EC_UNROLL_STEPS: int = 50


# ============================================================
# networkx グラフへの変換
# ============================================================


def to_networkx(weights: np.ndarray) -> nx.Graph:
    """w > 0 の辺だけを持つ無向グラフ。属性 weight=w, distance=1/w。"""
    w = np.asarray(weights, dtype=np.float64)
    r = w.shape[0]
    graph = nx.Graph()
    graph.add_nodes_from(range(r))
    rows, cols = triu_indices(r)
    for a, b in zip(rows.tolist(), cols.tolist()):
        value = w[a, b]
        if value > 0:
            graph.add_edge(a, b, weight=value, distance=1.0 / value)
    return graph


# ============================================================
# 単一グラフの中心性
# ============================================================


def _closeness(weights: np.ndarray) -> Tuple[np.ndarray, int]:
    """CC(v) = (r-1) / Σ d(v,u)。全ノードに到達できないノードは 0（件数も返す）。"""
    graph = to_networkx(weights)
    r = graph.number_of_nodes()
    scores = np.zeros(r)
    disconnected = 0
    for v in range(r):
        lengths = nx.single_source_dijkstra_path_length(graph, v, weight="distance")
        if len(lengths) < r:
            disconnected += 1
            continue
        total = float(np.sum([lengths[u] for u in range(r) if u != v]))
        scores[v] = (r - 1) / total
    return scores, disconnected


def closeness(g: BrainGraph) -> np.ndarray:
    scores, disconnected = _closeness(g.weights)
    if disconnected:
        logger.warning("[centrality] closeness disconnected nodes=%d set to 0", disconnected)
    return scores


def _betweenness(weights: np.ndarray) -> np.ndarray:
    r = weights.shape[0]
    if r < 3:
        raise InputValidationError(f"betweenness は r >= 3 が必要です r={r}")
    graph = to_networkx(weights)
    # 無向グラフの正規化は 1/((r-1)(r-2)) を各方向に掛けるので 2/((r-1)(r-2)) と同じ
    bc = nx.betweenness_centrality(graph, normalized=True, weight="distance")
    return np.array([bc[v] for v in range(r)])


def betweenness(g: BrainGraph) -> np.ndarray:
    """重み付き Brandes（距離 = 1/w）。"""
    return _betweenness(g.weights)


def _eigenvector(weights: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    a = np.asarray(weights, dtype=np.float64)
    if not np.any(a):
        raise DegenerateInputError("隣接行列がゼロのため固有ベクトル中心性が定義できません")
    r = a.shape[0]
    shifted = a + np.eye(r)
    x = np.full(r, 1.0 / np.sqrt(r))
    residual = np.inf
    for _ in range(max_iter):
        y = shifted @ x
        y /= np.linalg.norm(y)
        residual = float(np.abs(y - x).max())
        x = y
        if residual < tol:
            return x
    raise ConvergenceError("eigenvector", iterations=max_iter, residual=residual)


def eigenvector(g: BrainGraph, max_iter: int = EC_MAX_ITER, tol: float = EC_TOL) -> np.ndarray:
    """
    A + I のべき乗法（一様ベクトルから開始）。固有ベクトルは A と同じで、
    二部グラフでも支配固有値が唯一になる。出力は単位ノルム・非負。
    """
    return _eigenvector(g.weights, max_iter, tol)


# ============================================================
# 集団全体の中心性行列
# ============================================================

# 隣接行列 -> (スコア, 非連結ノード数)
_PER_GRAPH: Dict[str, Callable[[np.ndarray], Tuple[np.ndarray, int]]] = {
    "CC": _closeness,
    "BC": lambda w: (_betweenness(w), 0),
    "EC": lambda w: (_eigenvector(w, EC_MAX_ITER, EC_TOL), 0),
}


def centrality_matrix(
    features: np.ndarray,
    r: int,
    metric: CentralityMetric,
    workers: int = 1,
) -> CentralityMatrix:
    """各行を devectorize（負値は 0 にクランプ）してから中心性を計算する。"""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    graphs, clamped = devectorize_batch(x, r)

    try:
        one = _PER_GRAPH[metric]
    except KeyError:
        raise InputValidationError(f"未知の中心性です metric={metric}") from None

    disconnected = 0
    if workers > 1 and len(graphs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, graphs))
    else:
        results = [one(w) for w in graphs]

    values = np.zeros((len(graphs), r))
    for k, (scores, lost) in enumerate(results):
        values[k] = scores
        disconnected += lost
    if disconnected:
        logger.warning(
            "[centrality] closeness disconnected nodes=%d subjects=%d set to 0", disconnected, len(graphs)
        )
    return CentralityMatrix(values=values, metric=metric, clamped_edges=clamped, disconnected_nodes=disconnected)


# ============================================================
# 微分可能な中心性（トポロジー損失用）
# ============================================================


@lru_cache(maxsize=32)
def _edge_position(r: int) -> np.ndarray:
    """r x r -> 特徴量インデックス（対角は -1）。"""
    rows, cols = triu_indices(r)
    pos = np.full((r, r), -1, dtype=np.int64)
    pos[rows, cols] = np.arange(rows.size)
    pos[cols, rows] = np.arange(rows.size)
    pos.setflags(write=False)
    return pos


def _adjacency_index(n: int, r: int) -> np.ndarray:
    """n x r^2 の gather 用インデックス（各行が被験者 s の隣接行列を行優先で指す）。"""
    f = r * (r - 1) // 2
    pos = _edge_position(r).reshape(1, -1)
    offsets = (np.arange(n) * f).reshape(-1, 1)
    return np.where(pos >= 0, pos + offsets, -1)


def differentiable_ec(features: Tensor, r: int, unroll_steps: int = EC_UNROLL_STEPS) -> Tensor:
    """
    EC をテープ上で unroll_steps 回のべき乗反復として計算する（n x r）。
    負の特徴量は relu で 0 に落とす（devectorize のクランプと同じ）。
    """
    n = features.rows
    if features.cols != r * (r - 1) // 2:
        raise InputValidationError(f"特徴量長 {features.cols} が r={r} と一致しません")
    adj = ad.relu(ad.gather(features, _adjacency_index(n, r)))
    shifted = adj + np.eye(r).reshape(1, -1)
    x = Tensor(np.full((n, r), 1.0 / np.sqrt(r)))
    for _ in range(unroll_steps):
        y = ad.batched_matvec(shifted, x, r, r)
        norm = ad.sqrt(ad.row_sum(ad.square(y)))
        x = y / norm
    return x


def _shortest_path_counts(weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    1 被験者分。最短路木（同距離なら最小インデックスの前任ノード）で
    各 (起点 v, 辺 k) の使用回数 r x f と、起点ごとの連結フラグ r を返す。
    """
    r = weights.shape[0]
    f = r * (r - 1) // 2
    pos = _edge_position(r)
    graph = to_networkx(weights)
    counts = np.zeros((r, f))
    connected = np.zeros(r)
    for v in range(r):
        preds, dist = nx.dijkstra_predecessor_and_distance(graph, v, weight="distance")
        if len(dist) < r:
            continue
        connected[v] = 1.0
        for u in range(r):
            cur = u
            while cur != v:
                prev = min(preds[cur])
                counts[v, pos[prev, cur]] += 1.0
                cur = prev
    return counts, connected


def differentiable_cc(features: Tensor, r: int) -> Tensor:
    """
    CC をテープ上で計算する（n x r）。
    最短路の辺集合は切り離した値で固定し、距離 Σ 1/w だけをテープ上で組み直す。
    連結でないノードは値 0・勾配 0。
    """
    n = features.rows
    f = r * (r - 1) // 2
    if features.cols != f:
        raise InputValidationError(f"特徴量長 {features.cols} が r={r} と一致しません")
    graphs, _ = devectorize_batch(features.data, r)
    counts = np.zeros((n, r * f))
    connected = np.zeros((n, r))
    for s in range(n):
        c, ok = _shortest_path_counts(graphs[s])
        counts[s] = c.reshape(-1)
        connected[s] = ok
    if np.any(connected == 0):
        logger.warning("[centrality] differentiable_cc disconnected nodes=%d set to 0", int((connected == 0).sum()))

    mask = (features.data > 0).astype(np.float64)
    inv = ad.reciprocal(features * mask + (1.0 - mask))
    totals = ad.batched_matvec(Tensor(counts), inv, r, f)
    safe = totals * connected + (1.0 - connected)
    return ad.reciprocal(safe) * ((r - 1) * connected)


def constant_centrality(features: Tensor, r: int, metric: CentralityMetric) -> Tensor:
    """順伝播のみ（勾配なし）の中心性。BC はこの経路を使う。"""
    return Tensor(centrality_matrix(features.data, r, metric).values)


_DIFFERENTIABLE: Dict[str, Callable[..., Tensor]] = {
    "EC": lambda x, r, steps: differentiable_ec(x, r, steps),
    "CC": lambda x, r, steps: differentiable_cc(x, r),
    "BC": lambda x, r, steps: constant_centrality(x, r, "BC"),
}


def differentiable_centrality(
    features: Tensor,
    r: int,
    metric: CentralityMetric,
    unroll_steps: int = EC_UNROLL_STEPS,
) -> Tensor:
    """損失用の中心性。EC は unroll、CC は固定経路、BC は順伝播のみ。"""
    try:
        fn = _DIFFERENTIABLE[metric]
    except KeyError:
        raise InputValidationError(f"未知の中心性です metric={metric}") from None
    return fn(features, r, unroll_steps)
