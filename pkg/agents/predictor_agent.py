# agents/predictor_agent.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from agents.trainer_agent import TrainingState
from app.errors import DimensionError
from services import autodiff as ad
from services.autodiff import Tensor
from services.checkpoint import load_checkpoint
from services.gcn import ModelSet, identity_adjacency
from services.population_io import feature_names, read_source_rows

logger = logging.getLogger(__name__)


def predict(state_or_models: Union[TrainingState, ModelSet], test_source: np.ndarray) -> List[np.ndarray]:
    """
    テスト被験者の m 個のターゲットを予測する。
    テスト時は類似度に単位行列を使い（A_norm = I）、各ターゲットは
    クラスタ別生成器の出力の平均 (1/c) Σ_j G_Ti^j。
    """
    models = state_or_models.models if isinstance(state_or_models, TrainingState) else state_or_models
    x = np.asarray(test_source, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != models.f:
        raise DimensionError("predict", x.shape, (x.shape[0] if x.ndim else 0, models.f))

    k = x.shape[0]
    a = identity_adjacency(k)
    with ad.no_grad():
        z = models.encoder(Tensor(x), a)
        predictions = []
        for i in range(models.m):
            outputs = [models.generators[j][i](z, a).data for j in range(models.c)]
            predictions.append(np.mean(np.stack(outputs), axis=0))
    logger.info("[predictor] predicted subjects=%d domains=%d clusters=%d", k, models.m, models.c)
    return predictions


# ---------- ファイル入出力 ----------


def prediction_frame(predictions: Sequence[np.ndarray], subjects: Sequence[str]) -> pd.DataFrame:
    """subject_id,domain,v_* の縦持ち。行は被験者 ID → ドメイン順。"""
    frames = []
    for i, pred in enumerate(predictions, start=1):
        frame = pd.DataFrame(np.asarray(pred), columns=feature_names(pred.shape[1]))
        frame.insert(0, "domain", f"T{i}")
        frame.insert(0, "subject_id", list(subjects))
        frames.append(frame)
    out = pd.concat(frames, ignore_index=True)
    return out.sort_values(["subject_id", "domain"], kind="stable").reset_index(drop=True)


def write_predictions(predictions: Sequence[np.ndarray], subjects: Sequence[str], path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    prediction_frame(predictions, subjects).to_csv(p, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("[predictor] wrote predictions subjects=%d path=%s", len(subjects), p)
    return p


def predict_file(model_path: Union[str, Path], source_path: Union[str, Path], out_path: Union[str, Path]) -> Path:
    models, _ = load_checkpoint(model_path)
    subjects, values = read_source_rows(source_path)
    return write_predictions(predict(models, values), subjects, out_path)
