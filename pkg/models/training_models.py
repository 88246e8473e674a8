# models/training_models.py

from __future__ import annotations

import math
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.centrality_models import CentralityMetric

# 損失ログ CSV の列順（固定）
LOSS_LOG_COLUMNS: Tuple[str, ...] = (
    "iteration",
    "L_D",
    "L_adv",
    "L_gdc",
    "L_gp",
    "L_G",
    "L_wass_G",
    "L_top",
    "L_loc",
    "L_glb",
    "L_rec",
    "L_inf",
)


class LossWeights(BaseModel):
    """各損失項の重み。sigma=None は学習時に m で解決する。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_gdc: float = Field(1.0, ge=0)
    lambda_gp: float = Field(0.1, ge=0)
    lambda_top: float = Field(0.1, ge=0)
    lambda_rec: float = Field(0.01, ge=0)
    lambda_inf: float = Field(1.0, ge=0)
    sigma: Optional[float] = Field(None, ge=0)

    def resolved_sigma(self, m: int) -> float:
        return float(m) if self.sigma is None else self.sigma


class TrainingConfig(BaseModel):
    """学習ループの設定。既定値は 1000 反復、バッチ 70、lr 1e-4。"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(1000, gt=0)
    batch_size: int = Field(70, gt=0)
    learning_rate: float = Field(1e-4, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    n_critic: int = Field(5, ge=1)
    c: int = Field(2, ge=1)
    centrality_metric: CentralityMetric = "EC"
    seed: int = Field(0, ge=0)

    # ---------- MKML ----------
    kernels: int = Field(10, ge=1)
    mkml_iterations: int = Field(5, ge=0)
    mkml_neighbors: int = Field(20, ge=1)

    # ---------- トポロジー損失 ----------
    topology_subsample: int = Field(16, ge=1)
    full_batch_topology: bool = False
    ec_unroll_steps: int = Field(50, ge=1)

    # ---------- 勾配ペナルティ ----------
    gp_directions: int = Field(4, ge=1)
    gp_step: float = Field(1e-3, gt=0)

    # ---------- 運用 ----------
    checkpoint_interval: int = Field(100, ge=1)
    log_interval: int = Field(10, ge=1)
    train_fraction: float = Field(0.9, gt=0, lt=1)


class LossRecord(BaseModel):
    """1 反復分の損失（各成分はクラスタ合計、重み付け前）。"""

    model_config = ConfigDict(frozen=True)

    iteration: int
    L_D: float
    L_adv: float
    L_gdc: float
    L_gp: float
    L_G: float
    L_wass_G: float
    L_top: float
    L_loc: float
    L_glb: float
    L_rec: float
    L_inf: float

    @model_validator(mode="after")
    def _check_finite(self) -> "LossRecord":
        for name in LOSS_LOG_COLUMNS[1:]:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"損失 {name} が非有限です iteration={self.iteration}")
        return self

    def as_row(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in LOSS_LOG_COLUMNS)


# -----------------------------------------
# チェックポイントのマニフェスト
# -----------------------------------------
class LayerShape(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)


class CheckpointManifest(BaseModel):
    """チェックポイント先頭の JSON。重み本体はこの後ろにバイナリで続く。"""

    model_config = ConfigDict(frozen=True)

    format_version: int = 1
    r: int = Field(..., ge=2)
    f: int = Field(..., ge=1)
    m: int = Field(..., ge=1)
    c: int = Field(..., ge=1)
    seed: int
    iteration: int = Field(..., ge=0)
    centrality_metric: CentralityMetric
    config_digest: str
    layers: Tuple[LayerShape, ...]
    test_subjects: Tuple[str, ...] = ()
    training_config: Optional[TrainingConfig] = None
    loss_weights: Optional[LossWeights] = None
