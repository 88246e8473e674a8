# app/config.py

from __future__ import annotations

import hashlib
import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, Tuple, Union

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import InputValidationError
from models.training_models import LossWeights, TrainingConfig

LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(name)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


class Settings(BaseSettings):
    """
    アプリ全体で使う設定クラス。
    .env / 環境変数（MGGAN_ プレフィックス）から読み込む。
    """

    # ---------- ログ ----------
    # MGGAN_LOG_LEVEL=DEBUG などで上書き
    log_level: str = "INFO"

    # ---------- 既定値 ----------
    default_regions: int = 35
    default_seed: int = 0

    # run / compare の出力先（--out 省略時）
    runs_dir: str = "data/runs"

    # 評価時の中心性計算スレッド数
    eval_workers: int = 1

    # ---------- Pydantic Settings 設定 ----------
    model_config = SettingsConfigDict(
        env_prefix="MGGAN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",             # 定義外の環境変数があっても無視（エラーにしない）
    )


@lru_cache
def get_settings() -> Settings:
    """Settings をシングルトン的に使うためのヘルパ。"""
    return Settings()


# 他のモジュールからは `from app.config import settings` で利用
settings = get_settings()


# ============================================================
# ロギング
# ============================================================


def setup_logging(level: Union[str, int, None] = None) -> None:
    """ルートロガーにハンドラを 1 つだけ付ける。2 回目以降はレベルだけ更新。"""
    level = level if level is not None else settings.log_level
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise InputValidationError(f"不正なログレベルです: {level}")

    root = logging.getLogger()
    root.setLevel(level)
    if not any(getattr(h, "_mggan", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        handler._mggan = True  # type: ignore[attr-defined]
        root.addHandler(handler)


# ============================================================
# 実行設定ファイル（key=value）
# ============================================================


def parse_run_config(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    1 行 1 キーの key=value。# 以降はコメント、空行は無視。
    未知キー・重複キー・不正行は行番号付きの InputValidationError。
    """
    known = set(TrainingConfig.model_fields) | set(LossWeights.model_fields)
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputValidationError(f"{source}:{lineno}: key=value 形式ではありません: {raw.strip()}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise InputValidationError(f"{source}:{lineno}: キーまたは値が空です: {raw.strip()}")
        if key not in known:
            raise InputValidationError(f"{source}:{lineno}: 未知のキーです: {key}")
        if key in values:
            raise InputValidationError(f"{source}:{lineno}: キーが重複しています: {key}")
        values[key] = value
    return values


def build_run_config(values: Dict[str, str]) -> Tuple[TrainingConfig, LossWeights]:
    """値の型変換は pydantic に任せる。sigma=none で自動（m）。"""
    cfg = {k: v for k, v in values.items() if k in TrainingConfig.model_fields}
    w = {k: v for k, v in values.items() if k in LossWeights.model_fields}
    if str(w.get("sigma", "")).lower() in ("none", "auto"):
        w["sigma"] = None
    return TrainingConfig.model_validate(cfg), LossWeights.model_validate(w)


def load_run_config(path: Union[str, Path, None]) -> Tuple[TrainingConfig, LossWeights]:
    """path=None なら既定値（seed は Settings.default_seed）。"""
    if path is None:
        return TrainingConfig(seed=settings.default_seed), LossWeights()
    p = Path(path)
    if not p.is_file():
        raise InputValidationError(f"設定ファイルが見つかりません: {p}")
    values = parse_run_config(p.read_text(encoding="utf-8"), source=str(p))
    values.setdefault("seed", str(settings.default_seed))
    try:
        return build_run_config(values)
    except ValidationError as exc:
        raise InputValidationError(f"{p}: 設定値が不正です: {exc.errors()[0]['loc']} {exc.errors()[0]['msg']}") from exc


def config_digest(config: TrainingConfig, weights: LossWeights) -> str:
    """両設定の正準 JSON の SHA-256 先頭 12 桁。"""
    payload = json.dumps(
        {"training": config.model_dump(mode="json"), "weights": weights.model_dump(mode="json")},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def render_run_config(config: TrainingConfig, weights: LossWeights) -> str:
    """解決済み設定を key=value で返す（CLI のエコー用）。"""
    merged = {**config.model_dump(mode="json"), **weights.model_dump(mode="json")}
    return "\n".join(f"{k}={'none' if v is None else v}" for k, v in merged.items())
