# agents/comparison_agent.py

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict

from agents.evaluator_agent import DECIMALS, evaluate, render_table
from agents.population_agent import split_population
from agents.trainer_agent import train
from app.errors import InputValidationError
from models.centrality_models import CentralityMetric
from models.graph_models import MultiDomainPopulation
from models.report_models import ComparisonReport, ComparisonRow, ReportMetadata
from models.training_models import LossWeights, TrainingConfig

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ("method", "measure", "pcc", "mae_bc", "mae_cc", "mae_ec")


class Variant(BaseModel):
    """
    比較する手法 1 つ。
    single_cluster=True なら c=1、topology=False なら λ_top=0 で学習する。
    metric=None は設定ファイルの centrality_metric をそのまま使う。
    """

    model_config = ConfigDict(frozen=True)

    name: str
    single_cluster: bool = False
    topology: bool = True
    metric: Optional[CentralityMetric] = None

    def resolve(self, config: TrainingConfig, weights: LossWeights) -> Tuple[TrainingConfig, LossWeights]:
        cfg_update: Dict[str, object] = {}
        if self.single_cluster:
            cfg_update["c"] = 1
        if self.metric is not None:
            cfg_update["centrality_metric"] = self.metric
        w = weights if self.topology else weights.model_copy(update={"lambda_top": 0.0})
        return config.model_copy(update=cfg_update), w


VARIANTS: Dict[str, Variant] = {
    v.name: v
    for v in (
        Variant(name="mwgan", single_cluster=True, topology=False),
        Variant(name="mwgan_clustering", topology=False),
        Variant(name="multigraphgan_CC", metric="CC"),
        Variant(name="multigraphgan_BC", metric="BC"),
        Variant(name="multigraphgan_EC", metric="EC"),
    )
}


def parse_variants(raw: Optional[str]) -> List[str]:
    """カンマ区切りの手法名。None / 空なら全手法。"""
    if not raw:
        return list(VARIANTS)
    names = [s.strip() for s in raw.split(",") if s.strip()]
    unknown = [s for s in names if s not in VARIANTS]
    if unknown:
        raise InputValidationError(
            f"未知の手法です: {', '.join(unknown)}（利用可能: {', '.join(VARIANTS)}）"
        )
    return names


def run_comparison(
    population: MultiDomainPopulation,
    config: TrainingConfig,
    weights: LossWeights,
    variants: Optional[Sequence[str]] = None,
    config_digest: str = "",
    workers: int = 1,
) -> ComparisonReport:
    """
    同じ seed の train/test 分割で各手法を学習し、テスト集団の平均スコアを並べる。
    """
    names = list(variants) if variants else list(VARIANTS)
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise InputValidationError(f"未知の手法です: {', '.join(unknown)}")

    train_pop, test_pop = split_population(population, config.train_fraction, config.seed)
    rows: List[ComparisonRow] = []
    for name in names:
        variant = VARIANTS[name]
        cfg, w = variant.resolve(config, weights)
        logger.info(
            "[comparison] variant=%s c=%d lambda_top=%s metric=%s",
            name, cfg.c, w.lambda_top, cfg.centrality_metric,
        )
        state = train(train_pop, cfg, w, test_subjects=test_pop.subjects, config_digest=config_digest)
        meta = ReportMetadata(seed=cfg.seed, config_digest=config_digest, centrality_metric=cfg.centrality_metric)
        report = evaluate(state, test_pop, meta, workers)
        measure = cfg.centrality_metric if variant.topology else None
        rows.append(ComparisonRow(method=name, measure=measure, scores=report.average))

    metadata = ReportMetadata(seed=config.seed, config_digest=config_digest, n_test=test_pop.n)
    return ComparisonReport(rows=rows, metadata=metadata)


# ---------- 出力 ----------


def comparison_rows(report: ComparisonReport) -> List[Tuple[str, ...]]:
    out = []
    for row in report.rows:
        s = row.scores
        out.append(
            (
                row.method,
                row.measure or "-",
                *(f"{v:.{DECIMALS}f}" for v in (s.pcc, s.mae_bc, s.mae_cc, s.mae_ec)),
            )
        )
    return out


def render_comparison_text(report: ComparisonReport) -> str:
    meta = report.metadata
    head = f"seed: {meta.seed}\nconfig_digest: {meta.config_digest}\nn_test: {meta.n_test}\n\n"
    return head + render_table(COMPARISON_COLUMNS, comparison_rows(report))


def render_comparison_csv(report: ComparisonReport) -> str:
    buf = io.StringIO()
    pd.DataFrame(comparison_rows(report), columns=list(COMPARISON_COLUMNS)).to_csv(
        buf, index=False, lineterminator="\n"
    )
    return buf.getvalue()


def write_comparison(report: ComparisonReport, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, csv = out / "comparison.txt", out / "comparison.csv"
    txt.write_text(render_comparison_text(report), encoding="utf-8")
    csv.write_text(render_comparison_csv(report), encoding="utf-8")
    logger.info("[comparison] wrote report rows=%d dir=%s", len(report.rows), out)
    return txt, csv
