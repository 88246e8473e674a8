# models/report_models.py

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, Field

from models.centrality_models import CentralityMetric


class DomainScores(BaseModel):
    """1 ターゲットドメイン（または平均）の評価値。"""

    domain: str
    pcc: float = Field(..., ge=-1.0 - 1e-12, le=1.0 + 1e-12)
    mae_bc: float = Field(..., ge=0)
    mae_cc: float = Field(..., ge=0)
    mae_ec: float = Field(..., ge=0)


class ReportMetadata(BaseModel):
    seed: int
    config_digest: str
    centrality_metric: Optional[CentralityMetric] = None
    n_test: int = 0
    checkpoint: Optional[str] = None


class EvaluationReport(BaseModel):
    """ドメイン別と平均の評価値をまとめたレポート。"""

    domains: List[DomainScores]
    average: DomainScores
    metadata: ReportMetadata


class ComparisonRow(BaseModel):
    """手法比較の 1 行。"""

    method: str
    measure: Optional[CentralityMetric] = None
    scores: DomainScores


class ComparisonReport(BaseModel):
    rows: List[ComparisonRow] = Field(default_factory=list)
    metadata: ReportMetadata
