# agents/evaluator_agent.py

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from agents.population_agent import load_population_dir, select_subjects
from agents.predictor_agent import predict
from agents.trainer_agent import TrainingState
from app.errors import DimensionError
from models.graph_models import MultiDomainPopulation
from models.report_models import DomainScores, EvaluationReport, ReportMetadata
from services.checkpoint import load_checkpoint
from services.gcn import ModelSet
from services.metrics import mae_centrality, pcc

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("domain", "pcc", "mae_bc", "mae_cc", "mae_ec")
DECIMALS = 8


# ============================================================
# 評価
# ============================================================


def score_domain(domain: str, truth: np.ndarray, pred: np.ndarray, r: int, workers: int = 1) -> DomainScores:
    if truth.shape != pred.shape:
        raise DimensionError(f"score_domain:{domain}", truth.shape, pred.shape)
    return DomainScores(
        domain=domain,
        pcc=pcc(truth, pred),
        mae_bc=mae_centrality(truth, pred, r, "BC", workers),
        mae_cc=mae_centrality(truth, pred, r, "CC", workers),
        mae_ec=mae_centrality(truth, pred, r, "EC", workers),
    )


def average_scores(rows: Sequence[DomainScores], label: str = "average") -> DomainScores:
    return DomainScores(
        domain=label,
        pcc=float(np.mean([s.pcc for s in rows])),
        mae_bc=float(np.mean([s.mae_bc for s in rows])),
        mae_cc=float(np.mean([s.mae_cc for s in rows])),
        mae_ec=float(np.mean([s.mae_ec for s in rows])),
    )


def evaluate_predictions(
    test: MultiDomainPopulation,
    predictions: Sequence[np.ndarray],
    metadata: ReportMetadata,
    workers: int = 1,
) -> EvaluationReport:
    """予測済み行列とターゲットの正解から評価レポートを作る。"""
    if len(predictions) != test.m:
        raise DimensionError("evaluate_predictions", (len(predictions), 1), (test.m, 1))
    rows = [
        score_domain(t.domain_id, t.features, np.asarray(p), test.r, workers)
        for t, p in zip(test.targets, predictions)
    ]
    for row in rows:
        logger.info(
            "[evaluator] domain=%s pcc=%.6f mae_bc=%.6f mae_cc=%.6f mae_ec=%.6f",
            row.domain, row.pcc, row.mae_bc, row.mae_cc, row.mae_ec,
        )
    return EvaluationReport(domains=rows, average=average_scores(rows), metadata=metadata)


def evaluate(
    state_or_models: Union[TrainingState, ModelSet],
    test: MultiDomainPopulation,
    metadata: ReportMetadata,
    workers: int = 1,
) -> EvaluationReport:
    predictions = predict(state_or_models, test.source.features)
    meta = metadata.model_copy(update={"n_test": test.n})
    return evaluate_predictions(test, predictions, meta, workers)


# ============================================================
# 出力
# ============================================================


def _fmt(value: float) -> str:
    return f"{value:.{DECIMALS}f}"


def report_rows(report: EvaluationReport) -> List[Tuple[str, str, str, str, str]]:
    return [
        (s.domain, _fmt(s.pcc), _fmt(s.mae_bc), _fmt(s.mae_cc), _fmt(s.mae_ec))
        for s in [*report.domains, report.average]
    ]


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """左詰めの整列テーブル。"""
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_text(report: EvaluationReport) -> str:
    meta = report.metadata
    head = [
        f"seed: {meta.seed}",
        f"config_digest: {meta.config_digest}",
        f"centrality_metric: {meta.centrality_metric or '-'}",
        f"n_test: {meta.n_test}",
        "",
    ]
    return "\n".join(head) + "\n" + render_table(REPORT_COLUMNS, report_rows(report))


def render_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    frame = pd.DataFrame(report_rows(report), columns=list(REPORT_COLUMNS))
    frame.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def report_paths(out: Union[str, Path]) -> Tuple[Path, Path]:
    """--out report（拡張子は .txt / .csv / なし）から 2 つの出力パスを作る。"""
    p = Path(out)
    stem = p.with_suffix("") if p.suffix in (".txt", ".csv") else p
    return stem.with_name(stem.name + ".txt"), stem.with_name(stem.name + ".csv")


def write_report(report: EvaluationReport, out: Union[str, Path]) -> Tuple[Path, Path]:
    txt, csv = report_paths(out)
    txt.parent.mkdir(parents=True, exist_ok=True)
    txt.write_text(render_text(report), encoding="utf-8")
    csv.write_text(render_csv(report), encoding="utf-8")
    logger.info("[evaluator] wrote report txt=%s csv=%s", txt, csv)
    return txt, csv


def evaluate_checkpoint(
    model_path: Union[str, Path],
    data_dir: Union[str, Path],
    workers: int = 1,
) -> EvaluationReport:
    """
    チェックポイントとデータから評価する。
    マニフェストにテスト被験者が記録されていればその被験者だけ、無ければ全被験者。
    """
    models, manifest = load_checkpoint(model_path)
    pop = load_population_dir(data_dir, r=manifest.r, m=manifest.m)
    test = select_subjects(pop, manifest.test_subjects) if manifest.test_subjects else pop
    logger.info(
        "[evaluator] checkpoint=%s iteration=%d test_subjects=%d",
        model_path, manifest.iteration, test.n,
    )
    meta = ReportMetadata(
        seed=manifest.seed,
        config_digest=manifest.config_digest,
        centrality_metric=manifest.centrality_metric,
        checkpoint=str(model_path),
    )
    return evaluate(models, test, meta, workers)
