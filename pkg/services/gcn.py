# services/gcn.py

from __future__ import annotations

import logging
from typing import Callable, Dict, List, Literal, Mapping, Sequence, Tuple, Union

import numpy as np

from app.errors import ContractError, DimensionError, InputValidationError
from models.similarity_models import SimilarityMatrix
from services import autodiff as ad
from services.autodiff import Tensor

logger = logging.getLogger(__name__)

Activation = Literal["relu", "linear", "sigmoid"]

_ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ad.relu,
    "linear": lambda x: x,
    "sigmoid": ad.sigmoid,
}

# ============================================================
# 層の幅
# ============================================================

ENCODER_WIDTHS: Tuple[int, int] = (32, 16)
GENERATOR_WIDTHS: Tuple[int, int] = (16, 32)
DISCRIMINATOR_WIDTHS: Tuple[int, int] = (32, 16)
EMBEDDING_DIM: int = ENCODER_WIDTHS[-1]


# ============================================================
# 隣接行列の正規化
# ============================================================


def normalize_adjacency(s: Union[SimilarityMatrix, np.ndarray]) -> np.ndarray:
    """D̃^-1/2 (S + I) D̃^-1/2。出力は厳密に対称化する。"""
    values = s.values if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DimensionError("normalize_adjacency", values.shape)
    if not np.all(np.isfinite(values)):
        raise InputValidationError("類似度行列に非有限値があります")
    a = values + np.eye(values.shape[0])
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise InputValidationError("S + I の行和が正でない行があります")
    inv = 1.0 / np.sqrt(deg)
    out = inv[:, None] * a * inv[None, :]
    return (out + out.T) / 2.0


def identity_adjacency(n: int) -> np.ndarray:
    """テスト時の代替類似度（A_norm = I）。"""
    return np.eye(n)


# ============================================================
# GCN 層
# ============================================================


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class GCNLayer:
    """φ(A_norm X W)。バイアスなし。"""

    def __init__(self, weight: Tensor, activation: Activation, name: str) -> None:
        if activation not in _ACTIVATIONS:
            raise ContractError(f"未知の活性化関数です activation={activation}")
        self.weight = weight
        self.activation = activation
        self.name = name

    @classmethod
    def glorot(
        cls,
        rng: np.random.Generator,
        in_dim: int,
        out_dim: int,
        activation: Activation,
        name: str,
    ) -> "GCNLayer":
        weight = Tensor(glorot_uniform(rng, in_dim, out_dim), requires_grad=True, name=name)
        return cls(weight, activation, name)

    @property
    def in_dim(self) -> int:
        return self.weight.rows

    @property
    def out_dim(self) -> int:
        return self.weight.cols

    def __call__(self, a_norm: np.ndarray, x: Tensor) -> Tensor:
        return gcn_forward(self, a_norm, x)

    def detached(self) -> "GCNLayer":
        return GCNLayer(self.weight.detach(), self.activation, self.name)


def gcn_forward(layer: GCNLayer, a_norm: Union[np.ndarray, Tensor], x: Tensor) -> Tensor:
    a = a_norm if isinstance(a_norm, Tensor) else Tensor._wrap(np.asarray(a_norm, dtype=np.float64))
    if a.rows != a.cols or a.cols != x.rows or x.cols != layer.in_dim:
        raise DimensionError(f"gcn_forward:{layer.name}", a.shape, x.shape, layer.weight.shape)
    return _ACTIVATIONS[layer.activation](ad.matmul(a, ad.matmul(x, layer.weight)))


# ============================================================
# ネットワーク
# ============================================================


class GCNStack:
    """GCN 層の直列。parameters() は安定したキー名で重みを返す。"""

    def __init__(self, layers: Sequence[GCNLayer], prefix: str) -> None:
        self.layers: List[GCNLayer] = list(layers)
        self.prefix = prefix

    @classmethod
    def build(
        cls,
        rng: np.random.Generator,
        widths: Sequence[int],
        activations: Sequence[Activation],
        prefix: str,
        **extra,
    ):
        layers = [
            GCNLayer.glorot(rng, widths[k], widths[k + 1], activations[k], f"{prefix}/layer{k}/W")
            for k in range(len(activations))
        ]
        return cls(layers, prefix, **extra)

    def __call__(self, x: Tensor, a_norm: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(a_norm, x)
        return x

    def parameters(self) -> Dict[str, Tensor]:
        return {layer.name: layer.weight for layer in self.layers}

    def param_count(self) -> int:
        return sum(layer.weight.data.size for layer in self.layers)


class Encoder(GCNStack):
    """E: f -> 32 (relu) -> 16 (linear)。"""

    @classmethod
    def create(cls, rng: np.random.Generator, f: int) -> "Encoder":
        return cls.build(rng, (f, *ENCODER_WIDTHS), ("relu", "linear"), "encoder")


class Generator(GCNStack):
    """G_{T_i}^j（とソース復元デコーダ）: 16 -> 16 (relu) -> 32 (relu) -> f (sigmoid)。"""

    def __init__(self, layers: Sequence[GCNLayer], prefix: str, target: int = 0, cluster: int = 0) -> None:
        super().__init__(layers, prefix)
        self.target = target
        self.cluster = cluster

    @classmethod
    def create(cls, rng: np.random.Generator, f: int, prefix: str, target: int, cluster: int) -> "Generator":
        widths = (EMBEDDING_DIM, *GENERATOR_WIDTHS, f)
        return cls.build(rng, widths, ("relu", "relu", "sigmoid"), prefix, target=target, cluster=cluster)


class Discriminator:
    """
    共有トランク f -> 32 -> 16 (relu) の上に
    critic（GCN 16 -> 1, 線形）と D_C（16 -> 1, sigmoid, バイアスなし）を載せる。
    """

    prefix = "discriminator"

    def __init__(self, trunk: Sequence[GCNLayer], critic: GCNLayer, classifier: Tensor) -> None:
        self.trunk = list(trunk)
        self.critic = critic
        self.classifier = classifier

    @classmethod
    def create(cls, rng: np.random.Generator, f: int) -> "Discriminator":
        widths = (f, *DISCRIMINATOR_WIDTHS)
        trunk = [
            GCNLayer.glorot(rng, widths[k], widths[k + 1], "relu", f"{cls.prefix}/layer{k}/W")
            for k in range(2)
        ]
        critic = GCNLayer.glorot(rng, DISCRIMINATOR_WIDTHS[-1], 1, "linear", f"{cls.prefix}/critic/W")
        classifier = Tensor(
            glorot_uniform(rng, DISCRIMINATOR_WIDTHS[-1], 1),
            requires_grad=True,
            name=f"{cls.prefix}/classifier/W",
        )
        return cls(trunk, critic, classifier)

    def features(self, x: Tensor, a_norm: np.ndarray) -> Tensor:
        for layer in self.trunk:
            x = layer(a_norm, x)
        return x

    def __call__(self, x: Tensor, a_norm: np.ndarray) -> Tuple[Tensor, Tensor]:
        """(critic n x 1, class_prob n x 1)。"""
        h = self.features(x, a_norm)
        return self.critic(a_norm, h), ad.sigmoid(ad.matmul(h, self.classifier))

    def critic_score(self, x: Tensor, a_norm: np.ndarray) -> Tensor:
        return self.critic(a_norm, self.features(x, a_norm))

    def parameters(self) -> Dict[str, Tensor]:
        params = {layer.name: layer.weight for layer in self.trunk}
        params[self.critic.name] = self.critic.weight
        params[self.classifier.name] = self.classifier
        return params

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def detached(self) -> "Discriminator":
        """重みを定数として持つコピー（生成器ステップ用）。"""
        classifier = self.classifier.detach()
        classifier.name = self.classifier.name
        return Discriminator([layer.detached() for layer in self.trunk], self.critic.detached(), classifier)


def discriminate(d: Discriminator, features: Tensor, a_norm: np.ndarray) -> Tuple[Tensor, Tensor]:
    return d(features, a_norm)


def encode(e: Encoder, features: Tensor, sim: Union[SimilarityMatrix, np.ndarray]) -> Tensor:
    """Z = E(F_S, S_S)。"""
    return e(features, normalize_adjacency(sim))


def generate(g: Generator, z: Tensor, sim: Union[SimilarityMatrix, np.ndarray]) -> Tensor:
    return g(z, normalize_adjacency(sim))


# ============================================================
# ModelSet
# ============================================================


class ModelSet:
    """
    エンコーダ E、c x m のクラスタ別生成器、c 個のソース復元デコーダ、共有識別器 D。
    生成器側グループ = E + 生成器 + デコーダ、識別器側グループ = D。
    """

    def __init__(
        self,
        f: int,
        m: int,
        c: int,
        encoder: Encoder,
        generators: List[List[Generator]],
        decoders: List[Generator],
        discriminator: Discriminator,
    ) -> None:
        self.f = f
        self.m = m
        self.c = c
        self.encoder = encoder
        self.generators = generators
        self.decoders = decoders
        self.discriminator = discriminator
        self._check_counts()

    @classmethod
    def build(cls, f: int, m: int, c: int, seed: int) -> "ModelSet":
        if f < 1 or m < 1 or c < 1:
            raise InputValidationError(f"ModelSet の次元が不正です f={f} m={m} c={c}")
        rng = np.random.default_rng(seed)
        encoder = Encoder.create(rng, f)
        generators = [
            [Generator.create(rng, f, f"generator/T{i + 1}/cluster{j}", target=i, cluster=j) for i in range(m)]
            for j in range(c)
        ]
        decoders = [Generator.create(rng, f, f"decoder/cluster{j}", target=-1, cluster=j) for j in range(c)]
        discriminator = Discriminator.create(rng, f)
        models = cls(f, m, c, encoder, generators, decoders, discriminator)
        logger.info(
            "[gcn] built ModelSet f=%d m=%d c=%d generator_params=%d discriminator_params=%d",
            f, m, c, sum(p.data.size for p in models.generator_parameters().values()),
            discriminator.param_count(),
        )
        return models

    def _check_counts(self) -> None:
        f = self.f
        expected_encoder = f * 32 + 32 * 16
        expected_generator = 16 * 16 + 16 * 32 + 32 * f
        expected_discriminator = f * 32 + 32 * 16 + 16 * 1 + 16 * 1
        if self.encoder.param_count() != expected_encoder:
            raise ContractError(f"エンコーダのパラメータ数が不正です {self.encoder.param_count()}")
        for g in [*(g for row in self.generators for g in row), *self.decoders]:
            if g.param_count() != expected_generator:
                raise ContractError(f"生成器のパラメータ数が不正です prefix={g.prefix} count={g.param_count()}")
        if self.discriminator.param_count() != expected_discriminator:
            raise ContractError(f"識別器のパラメータ数が不正です {self.discriminator.param_count()}")
        if len(self.generators) != self.c or any(len(row) != self.m for row in self.generators):
            raise ContractError("生成器の数が c x m と一致しません")
        if len(self.decoders) != self.c:
            raise ContractError("デコーダの数が c と一致しません")

    # ---------- パラメータ群 ----------

    def generator_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = dict(self.encoder.parameters())
        for row in self.generators:
            for g in row:
                params.update(g.parameters())
        for dec in self.decoders:
            params.update(dec.parameters())
        return params

    def discriminator_parameters(self) -> Dict[str, Tensor]:
        return self.discriminator.parameters()

    def parameters(self) -> Dict[str, Tensor]:
        params = self.generator_parameters()
        params.update(self.discriminator_parameters())
        return params

    def load_weights(self, weights: Mapping[str, np.ndarray]) -> None:
        """キー名で重みを差し替える（キー集合と形状は完全一致が必要）。"""
        params = self.parameters()
        if set(weights) != set(params):
            missing = sorted(set(params) - set(weights))
            extra = sorted(set(weights) - set(params))
            raise InputValidationError(f"重みのキーが一致しません missing={missing} extra={extra}")
        for key, p in params.items():
            value = np.asarray(weights[key], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"load_weights:{key}", value.shape, p.shape)
            p.data[...] = value
