# app/api/routes.py
from __future__ import annotations

import logging
from typing import List, Optional

from fastapi import APIRouter
from pydantic import BaseModel, Field

from agents.evaluator_agent import evaluate_checkpoint
from agents.population_agent import build_synthetic_population
from agents.predictor_agent import predict
from app.config import settings
from models.graph_models import PopulationSummary
from models.report_models import EvaluationReport
from services.checkpoint import load_checkpoint

logger = logging.getLogger(__name__)

router = APIRouter()


# --------- Request / Response モデル ---------


class HealthResponse(BaseModel):
    status: str = "ok"


class SynthRequest(BaseModel):
    out_dir: str
    n: int = Field(..., ge=2)
    r: int = Field(default_factory=lambda: settings.default_regions, ge=2)
    m: int = Field(..., ge=1)
    modes: int = Field(1, ge=1)
    noise: float = Field(0.0, ge=0)
    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0)


class PredictRequest(BaseModel):
    checkpoint: str
    # 1 行 = 1 被験者のソース特徴ベクトル（長さ f）
    source: List[List[float]]


class PredictResponse(BaseModel):
    # predictions[i][k] = 被験者 k の T_{i+1} 予測
    predictions: List[List[List[float]]]
    domains: List[str]


class EvaluateRequest(BaseModel):
    checkpoint: str
    data_dir: str
    workers: Optional[int] = Field(None, ge=1)


# --------- エンドポイント ---------


@router.get("/health", response_model=HealthResponse)
def api_health() -> HealthResponse:
    return HealthResponse()


@router.post("/synth", response_model=PopulationSummary)
def api_synth(payload: SynthRequest) -> PopulationSummary:
    """合成集団を out_dir に書き出し、要約を返す。"""
    logger.info(
        "[api.synth] n=%d r=%d m=%d modes=%d noise=%s seed=%d",
        payload.n, payload.r, payload.m, payload.modes, payload.noise, payload.seed,
    )
    _, summary = build_synthetic_population(
        seed=payload.seed,
        n=payload.n,
        r=payload.r,
        m=payload.m,
        n_modes=payload.modes,
        noise_level=payload.noise,
        out_dir=payload.out_dir,
    )
    return summary


@router.post("/predict", response_model=PredictResponse)
def api_predict(payload: PredictRequest) -> PredictResponse:
    logger.info("[api.predict] checkpoint=%s subjects=%d", payload.checkpoint, len(payload.source))
    models, _ = load_checkpoint(payload.checkpoint)
    predictions = predict(models, payload.source)
    return PredictResponse(
        predictions=[p.tolist() for p in predictions],
        domains=[f"T{i}" for i in range(1, len(predictions) + 1)],
    )


@router.post("/evaluate", response_model=EvaluationReport)
def api_evaluate(payload: EvaluateRequest) -> EvaluationReport:
    """
    チェックポイントをデータディレクトリで評価する。
    テスト被験者がマニフェストにあればその被験者だけを使う。
    """
    logger.info("[api.evaluate] checkpoint=%s data_dir=%s", payload.checkpoint, payload.data_dir)
    workers = payload.workers or settings.eval_workers
    return evaluate_checkpoint(payload.checkpoint, payload.data_dir, workers)
