# services/synthetic.py

from __future__ import annotations

import logging
import math
from typing import Tuple

import numpy as np
from scipy.special import expit

from app.errors import InputValidationError
from models.graph_models import DomainDataset, MultiDomainPopulation

logger = logging.getLogger(__name__)

# ============================================================
# 生成パラメータ
# ============================================================

# 混合成分の標準偏差（特徴量 1 次元あたり）
COMPONENT_STD: float = 0.03
# モード平均の振れ幅（base ± MODE_OFFSET）
MODE_OFFSET: float = 0.15
# 平均間距離の下限は SEPARATION * COMPONENT_STD * sqrt(f)
SEPARATION: float = 4.0
# ターゲット写像の非対角成分の強さ
COUPLING: float = 0.5
# シグモイドの傾き
GAIN: float = 4.0
MAX_MEAN_DRAWS: int = 1000


def _mode_means(rng: np.random.Generator, n_modes: int, f: int) -> np.ndarray:
    """どの 2 つの平均も 4σ√f 以上離れるまで引き直す。"""
    min_dist = SEPARATION * COMPONENT_STD * math.sqrt(f)
    base = rng.uniform(0.25, 0.75, size=f)
    for _ in range(MAX_MEAN_DRAWS):
        signs = rng.choice(np.array([-1.0, 1.0]), size=(n_modes, f))
        means = base + MODE_OFFSET * signs
        if n_modes == 1:
            return means
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        off = dist[~np.eye(n_modes, dtype=bool)]
        if off.min() >= min_dist:
            return means
    raise InputValidationError(f"モード平均を十分に離せません n_modes={n_modes} f={f}")


def _target_map(rng: np.random.Generator, f: int) -> Tuple[np.ndarray, np.ndarray]:
    """モード x ドメインごとの写像 (A, b)。A = diag(U[0.5,1.5]) + γ/√f·R。"""
    a = np.diag(rng.uniform(0.5, 1.5, size=f)) + COUPLING / math.sqrt(f) * rng.standard_normal((f, f))
    b = rng.uniform(-0.25, 0.25, size=f)
    return a, b


def _rescale(x: np.ndarray) -> np.ndarray:
    """ドメイン全体で [0,1] に min-max スケーリングする。"""
    low, high = x.min(), x.max()
    if high <= low:
        return np.zeros_like(x)
    return (x - low) / (high - low)


def synthesize_population(
    seed: int,
    n: int,
    r: int,
    m: int,
    n_modes: int = 1,
    noise_level: float = 0.0,
) -> MultiDomainPopulation:
    """
    合成の多ドメイン脳グラフ集団を作る。

    ソースは n_modes 成分のガウス混合、ターゲット T_i はモードごとに固定された
    滑らかな写像 sigmoid(GAIN * (A (x - 0.5) + b)) にノイズを加えたもの。
    すべてのドメインは [0,1] にスケーリングされ、正解モードは labels に残る。
    """
    if n_modes < 1 or m < 1:
        raise InputValidationError(f"n_modes と m は 1 以上が必要です n_modes={n_modes} m={m}")
    if n < 2 * n_modes:
        raise InputValidationError(f"被験者数が足りません n={n} (2*n_modes={2 * n_modes} 以上が必要)")
    if r < 3:
        raise InputValidationError(f"r は 3 以上が必要です r={r}")
    if noise_level < 0 or not math.isfinite(noise_level):
        raise InputValidationError(f"noise_level が不正です noise_level={noise_level}")

    f = r * (r - 1) // 2
    rng = np.random.default_rng(seed)

    means = _mode_means(rng, n_modes, f)
    labels = rng.permutation(np.arange(n) % n_modes)
    source = means[labels] + COMPONENT_STD * rng.standard_normal((n, f))

    maps = [[_target_map(rng, f) for _ in range(n_modes)] for _ in range(m)]
    targets = []
    for i in range(m):
        t = np.empty((n, f))
        for k in range(n_modes):
            a, b = maps[i][k]
            rows = labels == k
            t[rows] = expit(GAIN * ((source[rows] - 0.5) @ a.T + b))
        t = t + noise_level * rng.standard_normal((n, f))
        targets.append(_rescale(t))

    width = max(4, len(str(n - 1)))
    subjects = tuple(f"sub{k:0{width}d}" for k in range(n))

    logger.info(
        "[synthetic] generated seed=%d n=%d r=%d m=%d modes=%d noise=%s",
        seed, n, r, m, n_modes, noise_level,
    )
    return MultiDomainPopulation(
        r=r,
        m=m,
        subjects=subjects,
        source=DomainDataset(domain_id="S", features=_rescale(source)),
        targets=tuple(DomainDataset(domain_id=f"T{i + 1}", features=t) for i, t in enumerate(targets)),
        labels=labels,
    )


def split_train_test(
    pop: MultiDomainPopulation,
    fraction: float,
    seed: int,
) -> Tuple[MultiDomainPopulation, MultiDomainPopulation]:
    """被験者をシード付きで train / test に分ける（各側は被験者 ID 順）。"""
    if not (0 < fraction < 1):
        raise InputValidationError(f"fraction は (0, 1) の範囲が必要です fraction={fraction}")
    n_train = int(round(fraction * pop.n))
    if n_train <= 0 or n_train >= pop.n:
        raise InputValidationError(f"分割が退化しています n={pop.n} fraction={fraction} n_train={n_train}")
    perm = np.random.default_rng(seed).permutation(pop.n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    logger.info("[synthetic] split n_train=%d n_test=%d seed=%d", train_idx.size, test_idx.size, seed)
    return pop.subset(train_idx), pop.subset(test_idx)
