# services/losses.py

from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from app.errors import ContractError, DimensionError
from models.centrality_models import CentralityMetric
from services import autodiff as ad
from services.autodiff import Tensor, as_tensor
from services.centrality import EC_UNROLL_STEPS, differentiable_centrality
from services.gcn import Discriminator, Encoder, Generator

logger = logging.getLogger(__name__)

PROB_FLOOR: float = 1e-7
GP_DIRECTIONS: int = 4
GP_STEP: float = 1e-3


def _require_batches(op: str, *groups: Sequence[Tensor]) -> None:
    for group in groups:
        if not group:
            raise ContractError(f"空のバッチ列が渡されました op={op}")
        for t in group:
            if t.rows == 0:
                raise ContractError(f"空のクラスタバッチが渡されました op={op}")


def _mae(a: Tensor, b: Tensor, op: str) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)
    return ad.mean(ad.absolute(a - b))


def _take(x: Tensor, rows: Optional[np.ndarray]) -> Tensor:
    return x if rows is None else ad.take_rows(x, rows)


# ============================================================
# 識別器側の項
# ============================================================


def adversarial_loss(
    d: Discriminator,
    source: Tensor,
    fakes: Sequence[Tensor],
    a_source: np.ndarray,
    a_targets: Sequence[np.ndarray],
) -> Tensor:
    """L_adv = -E[D(F_S)] + (1/m) Σ_i E[D(F̂_Ti)]。"""
    _require_batches("adversarial_loss", [source], fakes)
    m = len(fakes)
    real = ad.mean(d.critic_score(source, a_source))
    fake_terms = [ad.mean(d.critic_score(fake, a)) for fake, a in zip(fakes, a_targets)]
    total = fake_terms[0]
    for term in fake_terms[1:]:
        total = total + term
    return total * (1.0 / m) - real


def domain_classification_loss(
    d: Discriminator,
    fakes: Sequence[Tensor],
    reals: Sequence[Tensor],
    a_targets: Sequence[np.ndarray],
) -> Tensor:
    """
    L_gdc = Σ_i E[(D_C(F'') - y)^2]。偽物は 0、本物は 1。
    期待値は偽物と本物を縦に並べたバッチ全体の平均。
    """
    _require_batches("domain_classification_loss", fakes, reals)
    terms = []
    for fake, real, a in zip(fakes, reals, a_targets):
        _, p_fake = d(fake, a)
        _, p_real = d(as_tensor(real), a)
        probs = ad.concat_rows([p_fake, p_real])
        labels = np.vstack([np.zeros((p_fake.rows, 1)), np.ones((p_real.rows, 1))])
        terms.append(ad.mean(ad.square(probs - labels)))
    return sum_terms(terms)


def unit_directions(rng: np.random.Generator, count: int, f: int) -> np.ndarray:
    u = rng.standard_normal((count, f))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gradient_penalty(
    critic_fn: Callable[[Tensor], Tensor],
    source: Tensor,
    stacked_fakes: Tensor,
    sigma: float,
    rng: Optional[np.random.Generator] = None,
    n_directions: int = GP_DIRECTIONS,
    h: float = GP_STEP,
    directions: Optional[np.ndarray] = None,
    alpha: Optional[np.ndarray] = None,
) -> Tensor:
    """
    一次近似の勾配ペナルティ (max{0, E‖∇D(F̃)‖ - σ})^2。

    F̃ = α F_S + (1-α) F̃_m（α は行ごと）。F_S は m 回縦に繰り返して F̃_m に合わせる。
    ‖∇D‖ は固定した単位方向 u について |D(F̃+hu) - D(F̃-hu)| / 2h の最大値で見積もる。
    """
    _require_batches("gradient_penalty", [source], [stacked_fakes])
    if stacked_fakes.rows % source.rows != 0 or stacked_fakes.cols != source.cols:
        raise DimensionError("gradient_penalty", source.shape, stacked_fakes.shape)
    repeats = stacked_fakes.rows // source.rows
    rows, f = stacked_fakes.shape

    if alpha is None:
        if rng is None:
            raise ContractError("alpha も rng も指定されていません")
        alpha = rng.uniform(0.0, 1.0, size=(rows, 1))
    if directions is None:
        if rng is None:
            raise ContractError("directions も rng も指定されていません")
        directions = unit_directions(rng, n_directions, f)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(rows, 1)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, f)

    tiled = ad.concat_rows([source] * repeats)
    interp = tiled * alpha + stacked_fakes * (1.0 - alpha)

    estimate: Optional[Tensor] = None
    for u in directions:
        step = (h * u).reshape(1, f)
        diff = critic_fn(interp + step) - critic_fn(interp - step)
        slope = ad.absolute(diff) * (1.0 / (2.0 * h))
        estimate = slope if estimate is None else ad.maximum(estimate, slope)

    return ad.square(ad.max_with_zero(ad.mean(estimate) - sigma))


# ============================================================
# 生成器側の項
# ============================================================


def wasserstein_generator_loss(
    d: Discriminator,
    fakes: Sequence[Tensor],
    a_targets: Sequence[np.ndarray],
) -> Tensor:
    """-(1/m) Σ_i E[D(F̂_Ti)]。"""
    _require_batches("wasserstein_generator_loss", fakes)
    terms = [ad.mean(d.critic_score(fake, a)) for fake, a in zip(fakes, a_targets)]
    return sum_terms(terms) * (-1.0 / len(fakes))


def local_topology_loss(
    metric: CentralityMetric,
    reals: Sequence[Tensor],
    fakes: Sequence[Tensor],
    r: int,
    rows: Optional[np.ndarray] = None,
    unroll_steps: int = EC_UNROLL_STEPS,
) -> Tensor:
    """
    L_loc = Σ_i MAE(X_Ti, X̂_Ti)。rows を渡すとその被験者だけで計算する。
    本物側も同じ経路で計算するので F̂ = F なら厳密に 0。
    """
    _require_batches("local_topology_loss", reals, fakes)
    terms = []
    for real, fake in zip(reals, fakes):
        real_t = _take(as_tensor(real), rows)
        fake_t = _take(fake, rows)
        with ad.no_grad():
            x_real = differentiable_centrality(real_t.detach(), r, metric, unroll_steps)
        x_fake = differentiable_centrality(fake_t, r, metric, unroll_steps)
        terms.append(_mae(x_real, x_fake, "local_topology_loss"))
    return sum_terms(terms)


def global_topology_loss(reals: Sequence[Tensor], fakes: Sequence[Tensor]) -> Tensor:
    """L_glb = Σ_i MAE(F_Ti, F̂_Ti)。"""
    _require_batches("global_topology_loss", reals, fakes)
    if len(reals) != len(fakes):
        raise DimensionError("global_topology_loss", (len(reals), 1), (len(fakes), 1))
    return sum_terms([_mae(as_tensor(real), fake, "global_topology_loss") for real, fake in zip(reals, fakes)])


def reconstruct_source(
    encoder: Encoder,
    decoder: Generator,
    fakes: Sequence[Tensor],
    a_source: np.ndarray,
) -> list:
    """F̂_Ti を E で再符号化し、クラスタのデコーダでソース領域へ戻す。"""
    return [decoder(encoder(fake, a_source), a_source) for fake in fakes]


def reconstruction_loss(
    encoder: Encoder,
    decoder: Generator,
    fakes: Sequence[Tensor],
    source: Tensor,
    a_source: np.ndarray,
    metric: CentralityMetric,
    r: int,
    rows: Optional[np.ndarray] = None,
    unroll_steps: int = EC_UNROLL_STEPS,
) -> Tensor:
    """L_rec = Σ_i MAE(X_S, X̂_S,i) + Σ_i MAE(F_S, F̂_S,i)。"""
    _require_batches("reconstruction_loss", [source], fakes)
    recs = reconstruct_source(encoder, decoder, fakes, a_source)
    return reconstruction_from(recs, source, metric, r, rows, unroll_steps)


def reconstruction_from(
    recs: Sequence[Tensor],
    source: Tensor,
    metric: CentralityMetric,
    r: int,
    rows: Optional[np.ndarray] = None,
    unroll_steps: int = EC_UNROLL_STEPS,
) -> Tensor:
    local = local_topology_loss(metric, [source] * len(recs), recs, r, rows, unroll_steps)
    return local + global_topology_loss([source] * len(recs), recs)


def infomax_loss(d: Discriminator, fakes: Sequence[Tensor], a_targets: Sequence[np.ndarray]) -> Tensor:
    """L_inf = Σ_i BCE(1, D_C(F̂_Ti))。"""
    _require_batches("infomax_loss", fakes)
    return bce_against_ones([d(fake, a)[1] for fake, a in zip(fakes, a_targets)])


def bce_against_ones(probs: Sequence[Tensor]) -> Tensor:
    """Σ_i mean(-log p_i)。p は [1e-7, 1-1e-7] にクランプする。"""
    terms = [ad.mean(-ad.log(ad.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR))) for p in probs]
    return sum_terms(terms)


def sum_terms(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total
