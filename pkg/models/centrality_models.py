# models/centrality_models.py

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

# -----------------------------------------
# 中心性の種類
# -----------------------------------------
CentralityMetric = Literal[
    "CC",  # closeness
    "BC",  # betweenness
    "EC",  # eigenvector
]

ALL_METRICS: tuple = ("BC", "CC", "EC")


class CentralityMatrix(BaseModel):
    """n 被験者 x r ノードの中心性スコア。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    metric: CentralityMetric
    # devectorize で 0 に丸めた負の辺の数
    clamped_edges: int = 0
    # 到達不能で CC=0 とした (被験者, ノード) の数
    disconnected_nodes: int = 0

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value) -> np.ndarray:
        x = np.array(value, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"中心性行列は 2 次元である必要があります shape={x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("中心性行列に非有限値があります")
        x.setflags(write=False)
        return x

    @model_validator(mode="after")
    def _check_metric_range(self) -> "CentralityMatrix":
        if self.metric == "BC" and (np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12)):
            raise ValueError("BC は [0, 1] に収まる必要があります")
        if self.metric == "EC" and self.values.size:
            if np.any(self.values < -1e-12):
                raise ValueError("EC は非負である必要があります")
            norms = np.linalg.norm(self.values, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-8):
                raise ValueError("EC の各行は単位ノルムである必要があります")
        return self

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> int:
        return self.values.shape[1]
