# models/graph_models.py

from __future__ import annotations

import math
import re
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

# S または T1..Tm
DOMAIN_PATTERN = re.compile(r"^(S|T[1-9][0-9]*)$")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def regions_for_length(f: int) -> int:
    """f = r(r-1)/2 を満たす r を返す（満たさなければ ValueError）。"""
    r = int(round((1 + math.sqrt(1 + 8 * f)) / 2))
    if r < 2 or r * (r - 1) // 2 != f:
        raise ValueError(f"特徴量長 {f} は r(r-1)/2 の形になっていません")
    return r


# -----------------------------------------
# 1 被験者・1 ビューの脳グラフ
# -----------------------------------------
class BrainGraph(BaseModel):
    """対称・対角ゼロ・非負の r x r 重み行列。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def _check_weights(cls, value) -> np.ndarray:
        w = np.asarray(value, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"重み行列は正方行列である必要があります shape={w.shape}")
        if w.shape[0] < 2:
            raise ValueError("ノード数は 2 以上が必要です")
        if not np.all(np.isfinite(w)):
            raise ValueError("重み行列に非有限値があります")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
            raise ValueError("重み行列が対称ではありません")
        if np.any(np.diag(w) != 0):
            raise ValueError("対角成分は 0 である必要があります")
        if np.any(w < 0):
            raise ValueError("負の重みがあります")
        return _readonly(w)

    @property
    def r(self) -> int:
        return self.weights.shape[0]


# -----------------------------------------
# 上三角のベクトル表現
# -----------------------------------------
class FeatureVector(BaseModel):
    """上三角（i<j, 行優先）を並べた長さ r(r-1)/2 のベクトル。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value) -> np.ndarray:
        v = np.asarray(value, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("特徴量に非有限値があります")
        regions_for_length(v.size)
        return _readonly(v)

    @property
    def f(self) -> int:
        return self.values.size

    @property
    def r(self) -> int:
        return regions_for_length(self.values.size)


# -----------------------------------------
# 1 ドメインのデータセット
# -----------------------------------------
class DomainDataset(BaseModel):
    """
    ドメイン d（S または T_i）の特徴量行列 n x f と、
    学習済みのサンプル類似度行列 n x n（任意）。
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    domain_id: str
    features: np.ndarray
    similarity: Optional[np.ndarray] = None

    @field_validator("domain_id")
    @classmethod
    def _check_domain(cls, value: str) -> str:
        if not DOMAIN_PATTERN.match(value):
            raise ValueError(f"ドメイン ID が不正です: {value}")
        return value

    @field_validator("features", mode="before")
    @classmethod
    def _check_features(cls, value) -> np.ndarray:
        x = np.asarray(value, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"特徴量行列は 2 次元である必要があります shape={x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("特徴量行列に非有限値があります")
        return _readonly(x)

    @field_validator("similarity", mode="before")
    @classmethod
    def _check_similarity(cls, value) -> Optional[np.ndarray]:
        if value is None:
            return None
        s = np.asarray(value, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"類似度行列は正方行列である必要があります shape={s.shape}")
        if not np.array_equal(s, s.T):
            raise ValueError("類似度行列が対称ではありません")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("類似度行列に負または非有限の値があります")
        return _readonly(s)

    @model_validator(mode="after")
    def _check_pairing(self) -> "DomainDataset":
        if self.similarity is not None and self.similarity.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"類似度行列のサイズ {self.similarity.shape} が被験者数 {self.features.shape[0]} と一致しません"
            )
        return self

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def f(self) -> int:
        return self.features.shape[1]

    def with_similarity(self, similarity: np.ndarray) -> "DomainDataset":
        return DomainDataset(domain_id=self.domain_id, features=self.features, similarity=similarity)

    def subset(self, index: np.ndarray) -> "DomainDataset":
        idx = np.asarray(index, dtype=np.int64)
        sim = None if self.similarity is None else self.similarity[np.ix_(idx, idx)]
        return DomainDataset(domain_id=self.domain_id, features=self.features[idx], similarity=sim)


# -----------------------------------------
# ソース 1 + ターゲット m の多ドメイン集団
# -----------------------------------------
class MultiDomainPopulation(BaseModel):
    """被験者順はすべてのドメインで共通（ペアデータ）。"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    r: int
    m: int
    subjects: Tuple[str, ...]
    source: DomainDataset
    targets: Tuple[DomainDataset, ...]
    # 合成データの正解モード（検証用、実データでは None）
    labels: Optional[np.ndarray] = None

    @field_validator("labels", mode="before")
    @classmethod
    def _check_labels(cls, value) -> Optional[np.ndarray]:
        if value is None:
            return None
        arr = np.array(value, dtype=np.int64, copy=True).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_consistency(self) -> "MultiDomainPopulation":
        if self.r < 2:
            raise ValueError(f"r は 2 以上が必要です r={self.r}")
        if self.m < 1 or len(self.targets) != self.m:
            raise ValueError(f"ターゲット数 {len(self.targets)} が m={self.m} と一致しません")
        if self.source.domain_id != "S":
            raise ValueError("source のドメイン ID は S である必要があります")
        for i, t in enumerate(self.targets, start=1):
            if t.domain_id != f"T{i}":
                raise ValueError(f"ターゲットの順序が不正です expected=T{i} actual={t.domain_id}")
        f = self.r * (self.r - 1) // 2
        n = len(self.subjects)
        for d in (self.source, *self.targets):
            if d.features.shape != (n, f):
                raise ValueError(
                    f"ドメイン {d.domain_id} の形状 {d.features.shape} が (n={n}, f={f}) と一致しません"
                )
        if len(set(self.subjects)) != n:
            raise ValueError("被験者 ID が重複しています")
        if self.labels is not None and self.labels.size != n:
            raise ValueError("labels の長さが被験者数と一致しません")
        return self

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def f(self) -> int:
        return self.r * (self.r - 1) // 2

    @property
    def domains(self) -> Tuple[DomainDataset, ...]:
        return (self.source, *self.targets)

    def subset(self, index: np.ndarray) -> "MultiDomainPopulation":
        """被験者の部分集合（index の順序を保持）。"""
        idx = np.asarray(index, dtype=np.int64)
        return MultiDomainPopulation(
            r=self.r,
            m=self.m,
            subjects=tuple(self.subjects[k] for k in idx),
            source=self.source.subset(idx),
            targets=tuple(t.subset(idx) for t in self.targets),
            labels=None if self.labels is None else self.labels[idx],
        )

    def with_similarities(self, similarities: Tuple[np.ndarray, ...]) -> "MultiDomainPopulation":
        """(S, T1..Tm) の順に類似度行列を差し込んだコピーを返す。"""
        domains = [d.with_similarity(s) for d, s in zip(self.domains, similarities)]
        return self.model_copy(update={"source": domains[0], "targets": tuple(domains[1:])})


# -----------------------------------------
# API / CLI 向けの集団サマリ
# -----------------------------------------
class PopulationSummary(BaseModel):
    n: int
    r: int
    m: int
    f: int
    domains: Tuple[str, ...]
    mode_counts: Optional[Tuple[int, ...]] = None
    path: Optional[str] = None
