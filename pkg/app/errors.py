# app/errors.py
from __future__ import annotations

from typing import Iterable, Optional, Sequence


class MultiGraphGANError(Exception):
    """
    アプリ全体の基底例外。
    CLI は exit_code をそのまま終了コードに使う。
    """

    exit_code: int = 1


# ---------- 入力検証系 (exit 1) ----------


class InputValidationError(MultiGraphGANError, ValueError):
    """入力データ・パラメータが契約を満たさない場合の例外。"""


class DimensionError(InputValidationError):
    """行列の形状が合わない場合の例外。"""

    def __init__(self, operation: str, *shapes: Sequence[int]) -> None:
        self.operation = operation
        self.shapes = tuple(tuple(s) for s in shapes)
        shape_text = " vs ".join(f"{s[0]}x{s[1]}" if len(s) == 2 else str(tuple(s)) for s in self.shapes)
        super().__init__(f"形状が一致しません: op={operation} shapes={shape_text}")


class IncompletePairingError(InputValidationError):
    """被験者ごとのドメインが揃っていない場合の例外。"""

    def __init__(self, subject_ids: Iterable[str], missing: Optional[dict] = None) -> None:
        self.subject_ids = sorted(subject_ids)
        self.missing = missing or {}
        detail = ", ".join(
            f"{sid}(missing={','.join(self.missing.get(sid, []))})" if sid in self.missing else sid
            for sid in self.subject_ids
        )
        super().__init__(f"ドメインが揃っていない被験者があります: {detail}")


class DegenerateInputError(InputValidationError):
    """計算が定義できない退化した入力（全行同一、ゼロ行列など）。"""


# ---------- API 契約違反 ----------


class ContractError(MultiGraphGANError):
    """呼び出し側の契約違反（スカラーでない loss での backward など）。"""


class SetupError(MultiGraphGANError):
    """学習セットアップの失敗（被験者数不足、空クラスタなど）。"""


# ---------- 数値計算系 (exit 2) ----------


class NumericalError(MultiGraphGANError, ArithmeticError):
    """NaN/Inf の発生など数値的な失敗。"""

    exit_code = 2

    def __init__(self, message: str, operation: Optional[str] = None) -> None:
        self.operation = operation
        super().__init__(message)


class ConvergenceError(NumericalError):
    """反復計算が収束しなかった場合の例外。"""

    def __init__(
        self,
        operation: str,
        iterations: int,
        residual: Optional[float] = None,
    ) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"収束しませんでした: op={operation} iterations={iterations} residual={residual}",
            operation=operation,
        )


class UndefinedCorrelationError(NumericalError):
    """分散ゼロのため相関係数が定義できない場合の例外。"""
