# services/autodiff.py

from __future__ import annotations

import contextlib
import logging
from contextvars import ContextVar
from typing import Callable, Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from app.errors import ContractError, DegenerateInputError, DimensionError, NumericalError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# スレッド（コンテキスト）ごとに有効なテープを 1 本だけ持つ
_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("multigraphgan_active_tape", default=None)


# ============================================================
# Tensor
# ============================================================


class Tensor:
    """
    2 次元の密行列。float64 固定。
    requires_grad=True かつテープが有効なときだけ演算が記録される。
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None) -> None:
        arr = np.array(data.data if isinstance(data, Tensor) else data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError("tensor", arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("非有限値を含む Tensor は作れません", operation="tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """検証・コピーなしで包む（内部用）。"""
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    # ---------- 形状 ----------

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() はスカラー専用です shape={self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label} requires_grad={self.requires_grad})"

    # ---------- 演算子 ----------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def square(self) -> "Tensor":
        return square(self)


def as_tensor(value: ArrayLike) -> Tensor:
    """Tensor 以外は勾配不要の定数 Tensor にする。"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ============================================================
# Tape
# ============================================================


class TapeRecord(NamedTuple):
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    rule: BackwardRule


class Tape:
    """
    演算の記録。with ブロックの間だけ有効になる。

    記録は実行順に並ぶので、逆順に辿ればトポロジカル順の逆になる。
    """

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []
        self.backward_calls = 0
        self._tokens: list = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, rule: BackwardRule) -> None:
        self.records.append(TapeRecord(op, inputs, output, rule))

    def backward(self, loss: Tensor) -> int:
        """
        loss (1x1) から逆伝播し、到達できる requires_grad な Tensor の grad に加算する。
        戻り値は今回呼び出した backward rule の数。
        """
        if loss.shape != (1, 1):
            raise ContractError(f"backward はスカラー loss 専用です shape={loss.shape}")
        if not self.records:
            raise ContractError("テープが空のため backward できません")

        produced = {id(rec.output) for rec in self.records}
        pending: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        leaves: Dict[int, Tensor] = {}
        calls = 0

        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            _accumulate(rec.output, g)
            calls += 1
            input_grads = rec.rule(g)
            for tensor, grad in zip(rec.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                grad = _unbroadcast(grad, tensor.shape)
                key = id(tensor)
                pending[key] = pending[key] + grad if key in pending else grad
                if key not in produced:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            _accumulate(tensor, pending[key])

        self.backward_calls += calls
        return calls


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """このブロック内の演算はテープに記録しない。"""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> int:
    """有効なテープ（または明示したテープ）で逆伝播する。"""
    tape = tape or active_tape()
    if tape is None:
        raise ContractError("有効なテープがありません")
    return tape.backward(loss)


def zero_grad(params: Iterable[Tensor]) -> None:
    """最適化フェーズの合間に勾配をゼロへ戻す。"""
    for p in params:
        p.zero_grad()


# ============================================================
# 演算の共通処理
# ============================================================


def _emit(op: str, inputs: Tuple[Tensor, ...], out: np.ndarray, rule: BackwardRule) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"非有限値が発生しました: op={op}", operation=op)
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, result, rule)
    return result


def _broadcast_shape(op: str, a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(op, a, b)
    return tuple(out)  # type: ignore[return-value]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _nonempty(op: str, x: Tensor) -> None:
    if x.data.size == 0:
        raise DegenerateInputError(f"空の Tensor は集約できません: op={op} shape={x.shape}")


# ============================================================
# 行列積
# ============================================================


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def rule(g: np.ndarray):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", (a, b), ad @ bd, rule)


def batched_matvec(a: ArrayLike, x: ArrayLike, p: int, q: int) -> Tensor:
    """
    行ごとの行列ベクトル積。a は n x (p*q)（各行が p x q 行列を行優先で保持）、
    x は n x q、戻り値は n x p。
    """
    a, x = as_tensor(a), as_tensor(x)
    if a.cols != p * q or x.cols != q or a.rows != x.rows:
        raise DimensionError("batched_matvec", a.shape, x.shape)
    mats = a.data.reshape(a.rows, p, q)
    xd = x.data

    def rule(g: np.ndarray):
        ga = np.einsum("np,nq->npq", g, xd).reshape(a.rows, p * q)
        gx = np.einsum("npq,np->nq", mats, g)
        return ga, gx

    return _emit("batched_matvec", (a, x), np.einsum("npq,nq->np", mats, xd), rule)


# ============================================================
# 要素ごとの演算
# ============================================================


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NumericalError("ゼロ除算が発生しました: op=div", operation="div")
    out = ad / bd
    return _emit("div", (a, b), out, lambda g: (g / bd, -g * out / bd))


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _emit("neg", (x,), -x.data, lambda g: (-g,))


def maximum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """要素ごとの max。同値のときは a 側に勾配を流す。"""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a.shape, b.shape)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return _emit("maximum", (a, b), out, lambda g: (g * pick_a, g * ~pick_a))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def max_with_zero(x: ArrayLike) -> Tensor:
    """max(0, x)。ヒンジ項用に relu とは別名で記録する。"""
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("max_with_zero", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def absolute(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _emit("abs", (x,), np.abs(x.data), lambda g: (g * sign,))


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _emit("square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


def sqrt(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalError("sqrt の入力に 0 以下の値があります", operation="sqrt")
    out = np.sqrt(x.data)
    return _emit("sqrt", (x,), out, lambda g: (g / (2.0 * out),))


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g: (g * out,))


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalError("log の入力に 0 以下の値があります", operation="log")
    xd = x.data
    return _emit("log", (x,), np.log(xd), lambda g: (g / xd,))


def reciprocal(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data == 0):
        raise NumericalError("ゼロの逆数は取れません", operation="reciprocal")
    out = 1.0 / x.data
    return _emit("reciprocal", (x,), out, lambda g: (-g * out * out,))


def clamp(x: ArrayLike, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data > low) & (x.data < high)
    return _emit("clamp", (x,), np.clip(x.data, low, high), lambda g: (g * inside,))


_ELEMENTWISE: Dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "sigmoid": sigmoid,
    "abs": absolute,
    "square": square,
    "max_with_zero": max_with_zero,
    "maximum": maximum,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "reciprocal": reciprocal,
    "neg": neg,
}


def elementwise(op: str, *args: ArrayLike) -> Tensor:
    """名前で要素ごとの演算を呼び出す。"""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"未知の要素演算です op={op}") from None
    return fn(*args)


# ============================================================
# 集約
# ============================================================


def sum_all(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    _nonempty("sum", x)
    shape = x.shape
    return _emit("sum", (x,), np.array([[x.data.sum()]]), lambda g: (np.full(shape, g[0, 0]),))


def mean(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    _nonempty("mean", x)
    shape = x.shape
    count = x.data.size
    return _emit("mean", (x,), np.array([[x.data.mean()]]), lambda g: (np.full(shape, g[0, 0] / count),))


def row_mean(x: ArrayLike) -> Tensor:
    """行方向の平均（1 x cols の行ベクトル）。"""
    x = as_tensor(x)
    _nonempty("row_mean", x)
    rows = x.rows
    return _emit(
        "row_mean",
        (x,),
        x.data.mean(axis=0, keepdims=True),
        lambda g: (np.repeat(g / rows, rows, axis=0),),
    )


def row_sum(x: ArrayLike) -> Tensor:
    """各行の和（rows x 1 の列ベクトル）。"""
    x = as_tensor(x)
    _nonempty("row_sum", x)
    cols = x.cols
    return _emit("row_sum", (x,), x.data.sum(axis=1, keepdims=True), lambda g: (np.repeat(g, cols, axis=1),))


_REDUCTIONS: Dict[str, Callable[[ArrayLike], Tensor]] = {
    "mean": mean,
    "sum": sum_all,
    "row_mean": row_mean,
    "row_sum": row_sum,
}


def reductions(op: str, x: ArrayLike) -> Tensor:
    try:
        fn = _REDUCTIONS[op]
    except KeyError:
        raise ContractError(f"未知の集約演算です op={op}") from None
    return fn(x)


# ============================================================
# 形状操作
# ============================================================


def transpose(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _emit("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


def concat_rows(parts: Sequence[ArrayLike]) -> Tensor:
    tensors = tuple(as_tensor(p) for p in parts)
    if not tensors:
        raise ContractError("concat_rows に空のリストが渡されました")
    cols = {t.cols for t in tensors}
    if len(cols) != 1:
        raise DimensionError("concat_rows", *(t.shape for t in tensors))
    bounds = np.cumsum([0] + [t.rows for t in tensors])

    def rule(g: np.ndarray):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return _emit("concat_rows", tensors, np.vstack([t.data for t in tensors]), rule)


def take_rows(x: ArrayLike, index: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def rule(g: np.ndarray):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit("take_rows", (x,), x.data[idx].copy(), rule)


def gather(x: ArrayLike, index: np.ndarray) -> Tensor:
    """
    out.flat[k] = x.flat[index.flat[k]]（index < 0 の位置は 0）。
    出力形状は index の形状。ベクトル化された特徴量から隣接行列を組み立てるのに使う。
    """
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 2:
        raise DimensionError("gather", x.shape, idx.shape)
    if idx.size and idx.max() >= x.data.size:
        raise DimensionError("gather", x.shape, idx.shape)
    valid = idx >= 0
    flat = x.data.reshape(-1)
    out = np.where(valid, flat[np.where(valid, idx, 0)], 0.0)
    shape = x.shape

    def rule(g: np.ndarray):
        gx = np.zeros(flat.size)
        np.add.at(gx, idx[valid], g[valid])
        return (gx.reshape(shape),)

    return _emit("gather", (x,), out, rule)


# ============================================================
# 有限差分チェック
# ============================================================


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: ArrayLike,
    step: float = 1e-6,
    eps: float = 1e-6,
) -> float:
    """
    解析勾配と中心差分の最大相対誤差
    |analytic - numeric| / (|analytic| + |numeric| + eps) を返す。
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    with Tape() as tape:
        xt = Tensor(base, requires_grad=True)
        y = f(xt)
    if y.requires_grad and len(tape):
        tape.backward(y)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    with no_grad():
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += step
            minus = base.copy()
            minus[idx] -= step
            numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * step)
    return _max_relative_error(analytic, numeric, eps)


def param_finite_diff_check(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    step: float = 1e-6,
    eps: float = 1e-6,
) -> float:
    """
    既存パラメータ（モデル内の重み）についての有限差分チェック。
    param.data をその場で摂動し、終了時に元へ戻す。
    """
    original = param.data.copy()
    previous_grad = param.grad
    param.grad = None
    try:
        with Tape() as tape:
            loss = loss_fn()
        if loss.requires_grad and len(tape):
            tape.backward(loss)
        analytic = param.grad if param.grad is not None else np.zeros_like(original)

        numeric = np.zeros_like(original)
        with no_grad():
            for idx in np.ndindex(original.shape):
                param.data[idx] = original[idx] + step
                plus = loss_fn().item()
                param.data[idx] = original[idx] - step
                minus = loss_fn().item()
                param.data[idx] = original[idx]
                numeric[idx] = (plus - minus) / (2.0 * step)
    finally:
        param.data[...] = original
        param.grad = previous_grad
    return _max_relative_error(analytic, numeric, eps)


def _max_relative_error(analytic: np.ndarray, numeric: np.ndarray, eps: float) -> float:
    if analytic.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + eps)
    return float(err.max())
