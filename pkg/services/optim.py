# services/optim.py

from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from app.errors import ContractError, DimensionError
from services.autodiff import Tensor


class AdamState:
    """
    Adam のモーメントとステップ数。
    モーメントはパラメータ名をキーに保持するので、毎回同じ名前で渡すこと。
    """

    def __init__(
        self,
        learning_rate: float = 1e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        if learning_rate <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or epsilon <= 0:
            raise ContractError(
                f"Adam のハイパーパラメータが不正です lr={learning_rate} beta1={beta1} beta2={beta2} eps={epsilon}"
            )
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}


def adam_step(state: AdamState, params: Mapping[str, Tensor]) -> None:
    """
    バイアス補正付き Adam の 1 ステップをその場で適用する。
    勾配はそのまま残す（リセットは呼び出し側）。
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"勾配がありません param={name}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    for name, p in params.items():
        g = p.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise DimensionError(f"adam_step:{name}", m.shape, p.data.shape)

        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
