# app/graph/nodes.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List

from agents.clustering_agent import dump_similarity
from agents.comparison_agent import run_comparison, write_comparison
from agents.evaluator_agent import evaluate, write_report
from agents.population_agent import load_population_dir, split_population, write_split
from agents.trainer_agent import train
from app.config import config_digest, load_run_config
from app.graph.lg_state import GraphState
from models.report_models import ReportMetadata
from services.plots import plot_loss_curves

logger = logging.getLogger(__name__)


def _log_progress(state: GraphState, node: str, message: str) -> GraphState:
    """
    LangGraph 用の進捗ログを state に積むユーティリティ。
    """
    line = f"[{node}] {message}"

    messages: List[str] = list(state.get("progress_messages", []))
    messages.append(line)

    state["progress_messages"] = messages
    state["current_node"] = node

    logger.info(line)
    return state


def _outputs(state: GraphState, **paths: object) -> Dict[str, object]:
    outputs = dict(state.get("outputs", {}))
    outputs.update({k: str(v) if isinstance(v, Path) else v for k, v in paths.items()})
    return outputs


# ---------- Load ノード ----------


def load_node(state: GraphState) -> GraphState:
    """設定ファイルと集団 CSV を読み込む。"""
    state = _log_progress(state, "load", "start: reading config and population")

    config, weights = load_run_config(state.get("config_path"))
    population = load_population_dir(state["data_dir"])

    state["config"] = config
    state["weights"] = weights
    state["digest"] = config_digest(config, weights)
    state["population"] = population

    state = _log_progress(
        state,
        "load",
        f"done: n={population.n} r={population.r} m={population.m} digest={state['digest']}",
    )
    return state


# ---------- Split ノード ----------


def split_node(state: GraphState) -> GraphState:
    state = _log_progress(state, "split", "start: train/test split")

    config = state["config"]
    train_pop, test_pop = split_population(state["population"], config.train_fraction, config.seed)
    path = write_split(train_pop, test_pop, state["out_dir"])

    state["train_population"] = train_pop
    state["test_population"] = test_pop
    state["outputs"] = _outputs(state, split=path)

    state = _log_progress(state, "split", f"done: train={train_pop.n} test={test_pop.n}")
    return state


# ---------- Train ノード ----------


def train_node(state: GraphState) -> GraphState:
    """
    学習してチェックポイント・損失ログ・損失曲線を書く。
    dump_similarity=True なら類似度行列とクラスタも書く。
    """
    state = _log_progress(state, "train", "start: adversarial training")

    out_dir = Path(state["out_dir"])
    config = state["config"]
    training = train(
        state["train_population"],
        config,
        state["weights"],
        test_subjects=state["test_population"].subjects,
        out_dir=out_dir,
        config_digest=state["digest"],
    )
    plots = plot_loss_curves(out_dir / "loss_log.csv", out_dir / "plots")
    state["training_state"] = training
    state["outputs"] = _outputs(
        state,
        checkpoint=out_dir / "model.ckpt",
        loss_log=out_dir / "loss_log.csv",
        plots=[str(p) for p in plots],
    )

    if state.get("dump_similarity"):
        written = dump_similarity(training.population, training.assignment, out_dir)
        state["outputs"] = _outputs(state, similarity=[str(p) for p in written])

    state = _log_progress(state, "train", f"done: iterations={training.iteration}")
    return state


# ---------- Evaluate ノード ----------


def evaluate_node(state: GraphState) -> GraphState:
    state = _log_progress(state, "evaluate", "start: scoring test subjects")

    config = state["config"]
    meta = ReportMetadata(
        seed=config.seed,
        config_digest=state["digest"],
        centrality_metric=config.centrality_metric,
        checkpoint=str(Path(state["out_dir"]) / "model.ckpt"),
    )
    report = evaluate(state["training_state"], state["test_population"], meta, state.get("workers", 1))
    txt, csv = write_report(report, Path(state["out_dir"]) / "report")

    state["report"] = report
    state["outputs"] = _outputs(state, report_txt=txt, report_csv=csv)

    state = _log_progress(state, "evaluate", f"done: average_pcc={report.average.pcc:.6f}")
    return state


# ---------- Compare ノード ----------


def compare_node(state: GraphState) -> GraphState:
    """全手法を同じ分割で学習・評価して比較表を書く。"""
    state = _log_progress(state, "compare", "start: training variants")

    report = run_comparison(
        state["population"],
        state["config"],
        state["weights"],
        state.get("variants"),
        config_digest=state["digest"],
        workers=state.get("workers", 1),
    )
    txt, csv = write_comparison(report, state["out_dir"])

    state["comparison"] = report
    state["outputs"] = _outputs(state, comparison_txt=txt, comparison_csv=csv)

    state = _log_progress(state, "compare", f"done: variants={len(report.rows)}")
    return state
