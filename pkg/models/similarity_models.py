# models/similarity_models.py

from __future__ import annotations

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# MKML の既定バンド幅倍率 0.5, 0.75, ..., 2.75
DEFAULT_BANDWIDTHS: Tuple[float, ...] = tuple(0.5 + 0.25 * k for k in range(10))


class KernelBank(BaseModel):
    """ガウスカーネル群のバンド幅倍率と重み（重みは単体上）。"""

    model_config = ConfigDict(frozen=True)

    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    weights: Tuple[float, ...] = Field(default_factory=lambda: tuple([0.1] * 10))

    @field_validator("bandwidths")
    @classmethod
    def _check_bandwidths(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("カーネルが 1 つもありません")
        if any(b <= 0 for b in value):
            raise ValueError("バンド幅は正である必要があります")
        if any(b2 <= b1 for b1, b2 in zip(value, value[1:])):
            raise ValueError("バンド幅は狭義単調増加である必要があります")
        return value

    @model_validator(mode="after")
    def _check_weights(self) -> "KernelBank":
        if len(self.weights) != len(self.bandwidths):
            raise ValueError("重みの数がカーネル数と一致しません")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("カーネル重みは単体上にある必要があります")
        return self

    @property
    def k(self) -> int:
        return len(self.bandwidths)

    @classmethod
    def uniform(cls, k: int = 10, start: float = 0.5, spacing: float = 0.25) -> "KernelBank":
        """k 個の等間隔バンド幅と一様重み。"""
        if k < 1:
            raise ValueError(f"カーネル数は 1 以上が必要です k={k}")
        bandwidths = tuple(start + spacing * i for i in range(k))
        return cls(bandwidths=bandwidths, weights=tuple([1.0 / k] * k))


class SimilarityMatrix(BaseModel):
    """対称・[0,1]・対角 1 の n x n 類似度行列と、学習後のカーネル重み。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    kernel_weights: Tuple[float, ...] = ()

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value) -> np.ndarray:
        s = np.array(value, dtype=np.float64, copy=True)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"類似度行列は正方行列である必要があります shape={s.shape}")
        if not np.array_equal(s, s.T):
            raise ValueError("類似度行列が厳密に対称ではありません")
        if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
            raise ValueError("類似度は [0, 1] に収まる必要があります")
        if np.any(np.diag(s) != 1.0):
            raise ValueError("類似度行列の対角は 1 である必要があります")
        s.setflags(write=False)
        return s

    @property
    def n(self) -> int:
        return self.values.shape[0]


class ClusterAssignment(BaseModel):
    """k-means の結果。すべてのクラスタは空でない。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    labels: np.ndarray
    c: int
    centroids: np.ndarray
    inertia_history: Tuple[float, ...] = ()

    @field_validator("labels", mode="before")
    @classmethod
    def _check_labels(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.int64, copy=True).reshape(-1)
        arr.setflags(write=False)
        return arr

    @field_validator("centroids", mode="before")
    @classmethod
    def _check_centroids(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError("centroids は 2 次元である必要があります")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_clusters(self) -> "ClusterAssignment":
        if self.c < 1:
            raise ValueError(f"クラスタ数は 1 以上が必要です c={self.c}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise ValueError("ラベルが [0, c) の範囲外です")
        sizes = np.bincount(self.labels, minlength=self.c)
        if np.any(sizes == 0):
            raise ValueError(f"空のクラスタがあります sizes={sizes.tolist()}")
        if self.centroids.shape[0] != self.c:
            raise ValueError("centroids の行数が c と一致しません")
        return self

    @property
    def n(self) -> int:
        return self.labels.size

    def members(self, cluster: int) -> np.ndarray:
        """クラスタ j に属する被験者インデックス（昇順）。"""
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> Tuple[int, ...]:
        return tuple(int(s) for s in np.bincount(self.labels, minlength=self.c))
