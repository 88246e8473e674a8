# agents/trainer_agent.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from agents.clustering_agent import cluster_embeddings, learn_domain_similarities
from app.errors import SetupError
from models.graph_models import MultiDomainPopulation
from models.similarity_models import ClusterAssignment
from models.training_models import (
    LOSS_LOG_COLUMNS,
    CheckpointManifest,
    LossRecord,
    LossWeights,
    TrainingConfig,
)
from services import autodiff as ad
from services import losses
from services.autodiff import Tape, Tensor
from services.checkpoint import layer_shapes, save_checkpoint
from services.gcn import ModelSet, normalize_adjacency
from services.optim import AdamState, adam_step

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"


# ============================================================
# 状態とバッチ
# ============================================================


class TrainingState(BaseModel):
    """
    学習の全状態。クラスタ割り当てはセットアップ後に固定される。
    cluster_similarities[j][d] は d = 0 (S), 1..m (T_i) の学習済み類似度を
    クラスタ j の被験者に制限したもの。
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    models: ModelSet
    d_optimizer: AdamState
    g_optimizer: AdamState
    population: MultiDomainPopulation
    assignment: ClusterAssignment
    cluster_similarities: List[List[np.ndarray]]
    config: TrainingConfig
    weights: LossWeights
    sigma: float
    iteration: int = 0
    loss_log: List[LossRecord] = Field(default_factory=list)
    test_subjects: Tuple[str, ...] = ()
    config_digest: str = ""

    @property
    def r(self) -> int:
        return self.population.r

    @property
    def m(self) -> int:
        return self.population.m


class ClusterBatch(BaseModel):
    """1 クラスタ分のミニバッチ。index は学習集団内の被験者インデックス（昇順）。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cluster: int
    index: np.ndarray
    source: np.ndarray
    targets: Tuple[np.ndarray, ...]
    a_source: np.ndarray
    a_targets: Tuple[np.ndarray, ...]
    # トポロジー損失を計算するバッチ内の行（None ならバッチ全体）
    topology_rows: Optional[np.ndarray] = None


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


# ============================================================
# セットアップ
# ============================================================


def setup_training(
    population: MultiDomainPopulation,
    config: TrainingConfig,
    weights: LossWeights,
    test_subjects: Sequence[str] = (),
    config_digest: str = "",
) -> TrainingState:
    """
    類似度学習 → モデル初期化 → 初期エンコーダでの埋め込み → クラスタリング。
    クラスタ別の類似度は全体の学習済み類似度の行・列制限で作る。
    """
    n, c = population.n, config.c
    if n < 2 * c:
        raise SetupError(f"学習被験者が足りません n={n} (2*c={2 * c} 以上が必要)")

    population, _ = learn_domain_similarities(population, config)
    models = ModelSet.build(population.f, population.m, c, config.seed)

    with ad.no_grad():
        a_source = normalize_adjacency(population.source.similarity)
        z = models.encoder(Tensor(population.source.features), a_source).numpy()
    assignment = cluster_embeddings(z, config)

    sizes = assignment.sizes()
    if any(size == 0 for size in sizes):
        raise SetupError(f"空のクラスタがあります sizes={list(sizes)}。c を小さくしてください")

    cluster_sims = []
    for j in range(c):
        idx = assignment.members(j)
        cluster_sims.append([d.similarity[np.ix_(idx, idx)] for d in population.domains])

    def adam() -> AdamState:
        return AdamState(config.learning_rate, config.beta1, config.beta2, config.epsilon)

    subsample = "full" if config.full_batch_topology else min(config.topology_subsample, config.batch_size)
    logger.info(
        "[trainer] setup n=%d r=%d m=%d c=%d cluster_sizes=%s topology_subsample=%s metric=%s",
        n, population.r, population.m, c, list(sizes), subsample, config.centrality_metric,
    )
    return TrainingState(
        models=models,
        d_optimizer=adam(),
        g_optimizer=adam(),
        population=population,
        assignment=assignment,
        cluster_similarities=cluster_sims,
        config=config,
        weights=weights,
        sigma=weights.resolved_sigma(population.m),
        test_subjects=tuple(test_subjects),
        config_digest=config_digest,
    )


# ============================================================
# バッチ
# ============================================================


def sample_batch(state: TrainingState, rng: np.random.Generator) -> List[ClusterBatch]:
    """
    クラスタで層化したバッチ。クラスタ j の枠は max(1, round(B * n_j / n))（n_j が上限）。
    B >= n なら全被験者を使う。
    """
    pop = state.population
    config = state.config
    n = pop.n
    b = min(config.batch_size, n)
    batches: List[ClusterBatch] = []
    for j in range(state.assignment.c):
        members = state.assignment.members(j)
        n_j = members.size
        if b >= n:
            local = np.arange(n_j)
        else:
            quota = min(n_j, max(1, int(round(b * n_j / n))))
            local = np.sort(rng.choice(n_j, size=quota, replace=False))
        index = members[local]
        sims = state.cluster_similarities[j]
        restricted = [normalize_adjacency(s[np.ix_(local, local)]) for s in sims]

        rows = None
        if not config.full_batch_topology and config.topology_subsample < local.size:
            rows = np.sort(rng.choice(local.size, size=config.topology_subsample, replace=False))

        batches.append(
            ClusterBatch(
                cluster=j,
                index=index,
                source=pop.source.features[index],
                targets=tuple(t.features[index] for t in pop.targets),
                a_source=restricted[0],
                a_targets=tuple(restricted[1:]),
                topology_rows=rows,
            )
        )
    return batches


# ============================================================
# 目的関数
# ============================================================


def _generate(models: ModelSet, batch: ClusterBatch) -> List[Tensor]:
    z = models.encoder(Tensor(batch.source), batch.a_source)
    return [
        models.generators[batch.cluster][i](z, batch.a_targets[i])
        for i in range(models.m)
    ]


def discriminator_objective(
    state: TrainingState,
    batch: Sequence[ClusterBatch],
    rng: np.random.Generator,
) -> Tuple[Tensor, Dict[str, float]]:
    """
    L_D = Σ_j (L_adv + λ_gdc L_gdc + λ_gp L_gp)。
    生成器の順伝播はテープに載せない。
    """
    models, w, config = state.models, state.weights, state.config
    d = models.discriminator
    m = models.m
    totals, adv_sum, gdc_sum, gp_sum = [], 0.0, 0.0, 0.0
    for cb in batch:
        with ad.no_grad():
            fakes = [f.detach() for f in _generate(models, cb)]
        source = Tensor(cb.source)
        reals = [Tensor(t) for t in cb.targets]

        adv = losses.adversarial_loss(d, source, fakes, cb.a_source, cb.a_targets)
        gdc = losses.domain_classification_loss(d, fakes, reals, cb.a_targets)
        block = np.kron(np.eye(m), cb.a_source)
        gp = losses.gradient_penalty(
            lambda x: d.critic_score(x, block),
            source,
            ad.concat_rows(fakes),
            state.sigma,
            rng=rng,
            n_directions=config.gp_directions,
            h=config.gp_step,
        )
        totals.append(adv + gdc * w.lambda_gdc + gp * w.lambda_gp)
        adv_sum += adv.item()
        gdc_sum += gdc.item()
        gp_sum += gp.item()

    total = losses.sum_terms(totals)
    return total, {"L_D": total.item(), "L_adv": adv_sum, "L_gdc": gdc_sum, "L_gp": gp_sum}


def _weighted_term(weight: float, compute) -> Tuple[Tensor, float]:
    """重み 0 の項はテープに載せず値だけ記録する。"""
    if weight == 0.0:
        with ad.no_grad():
            value = compute()
        return Tensor(0.0), value.item()
    value = compute()
    return value * weight, value.item()


def generator_objective(
    state: TrainingState,
    batch: Sequence[ClusterBatch],
) -> Tuple[Tensor, Dict[str, float]]:
    """
    L_G = Σ_j (-(1/m) Σ_i E[D(F̂_Ti)] + λ_top L_top + λ_rec L_rec + λ_inf L_inf)。
    識別器は定数コピーで評価する。
    """
    models, w, config = state.models, state.weights, state.config
    metric, r, steps = config.centrality_metric, state.r, config.ec_unroll_steps
    d = models.discriminator.detached()
    sums = {"L_wass_G": 0.0, "L_loc": 0.0, "L_glb": 0.0, "L_top": 0.0, "L_rec": 0.0, "L_inf": 0.0}
    totals = []
    clamped = 0
    for cb in batch:
        source = Tensor(cb.source)
        reals = [Tensor(t) for t in cb.targets]
        fakes = _generate(models, cb)
        clamped += sum(int((f.data < 0).sum()) for f in fakes)
        rows = cb.topology_rows

        wass = losses.wasserstein_generator_loss(d, fakes, cb.a_targets)
        loc_t, loc = _weighted_term(
            w.lambda_top, lambda: losses.local_topology_loss(metric, reals, fakes, r, rows, steps)
        )
        glb_t, glb = _weighted_term(w.lambda_top, lambda: losses.global_topology_loss(reals, fakes))
        rec_t, rec = _weighted_term(
            w.lambda_rec,
            lambda: losses.reconstruction_loss(
                models.encoder, models.decoders[cb.cluster], fakes, source, cb.a_source, metric, r, rows, steps
            ),
        )
        inf_t, inf = _weighted_term(w.lambda_inf, lambda: losses.infomax_loss(d, fakes, cb.a_targets))

        totals.append(wass + loc_t + glb_t + rec_t + inf_t)
        sums["L_wass_G"] += wass.item()
        sums["L_loc"] += loc
        sums["L_glb"] += glb
        sums["L_top"] += loc + glb
        sums["L_rec"] += rec
        sums["L_inf"] += inf

    if clamped:
        logger.info("[trainer] clamped negative generated edges=%d", clamped)
    total = losses.sum_terms(totals)
    sums["L_G"] = total.item()
    return total, sums


# ============================================================
# 学習ループ
# ============================================================


def train_iteration(state: TrainingState) -> LossRecord:
    """識別器 n_critic 回 → 生成器 1 回。"""
    t = state.iteration + 1
    config = state.config
    rng = iteration_rng(config.seed, t)
    batch = sample_batch(state, rng)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            "[trainer] iteration=%d batch=%s topology_rows=%s",
            t,
            [cb.index.size for cb in batch],
            [cb.index.size if cb.topology_rows is None else cb.topology_rows.size for cb in batch],
        )

    d_params = state.models.discriminator_parameters()
    g_params = state.models.generator_parameters()

    d_values: Dict[str, float] = {}
    for _ in range(config.n_critic):
        ad.zero_grad(d_params.values())
        ad.zero_grad(g_params.values())
        with Tape() as tape:
            loss_d, d_values = discriminator_objective(state, batch, rng)
        tape.backward(loss_d)
        adam_step(state.d_optimizer, d_params)

    ad.zero_grad(d_params.values())
    ad.zero_grad(g_params.values())
    with Tape() as tape:
        loss_g, g_values = generator_objective(state, batch)
    tape.backward(loss_g)
    adam_step(state.g_optimizer, g_params)

    record = LossRecord(iteration=t, **d_values, **g_values)
    state.loss_log.append(record)
    state.iteration = t
    if t % config.log_interval == 0 or t == 1:
        logger.info(
            "[trainer] iteration=%d L_D=%.6f L_G=%.6f L_top=%.6f L_rec=%.6f",
            t, record.L_D, record.L_G, record.L_top, record.L_rec,
        )
    return record


def build_manifest(state: TrainingState) -> CheckpointManifest:
    pop = state.population
    return CheckpointManifest(
        r=pop.r,
        f=pop.f,
        m=pop.m,
        c=state.config.c,
        seed=state.config.seed,
        iteration=state.iteration,
        centrality_metric=state.config.centrality_metric,
        config_digest=state.config_digest,
        layers=layer_shapes(state.models),
        test_subjects=state.test_subjects,
        training_config=state.config,
        loss_weights=state.weights,
    )


def write_checkpoint(state: TrainingState, path: Union[str, Path]) -> Path:
    return save_checkpoint(path, state.models, build_manifest(state))


def train(
    population: MultiDomainPopulation,
    config: TrainingConfig,
    weights: LossWeights,
    test_subjects: Sequence[str] = (),
    out_dir: Optional[Union[str, Path]] = None,
    config_digest: str = "",
) -> TrainingState:
    """
    セットアップ後に config.iterations 回の交互更新を行う。
    out_dir を渡すと checkpoint_interval ごとと終了時にチェックポイントを書く。
    """
    state = setup_training(population, config, weights, test_subjects, config_digest)
    ckpt_dir = None if out_dir is None else Path(out_dir) / CHECKPOINT_DIR
    for _ in range(config.iterations):
        train_iteration(state)
        if ckpt_dir is not None and state.iteration % config.checkpoint_interval == 0:
            write_checkpoint(state, ckpt_dir / f"iter_{state.iteration:06d}.ckpt")
    if out_dir is not None:
        write_checkpoint(state, Path(out_dir) / "model.ckpt")
        write_loss_log(state.loss_log, Path(out_dir) / "loss_log.csv")
    logger.info("[trainer] done iterations=%d", state.iteration)
    return state


def loss_frame(records: Sequence[LossRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in records], columns=list(LOSS_LOG_COLUMNS))


def write_loss_log(records: Sequence[LossRecord], path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    loss_frame(records).to_csv(p, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("[trainer] wrote loss log rows=%d path=%s", len(records), p)
    return p
