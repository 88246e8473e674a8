# app/graph/lg_workflow.py
from __future__ import annotations

import logging
from functools import lru_cache
from typing import List, Optional

from langgraph.graph import END, START, StateGraph

from app.errors import InputValidationError
from app.graph import nodes
from app.graph.lg_state import MODES, GraphState, create_initial_state

logger = logging.getLogger(__name__)


def _route_after_load(state: GraphState) -> str:
    return "compare" if state.get("mode") == "compare" else "split"


def build_pipeline():
    """
    load ─┬─ split → train → evaluate
          └─ compare
    """
    graph = StateGraph(GraphState)
    graph.add_node("load", nodes.load_node)
    graph.add_node("split", nodes.split_node)
    graph.add_node("train", nodes.train_node)
    graph.add_node("evaluate", nodes.evaluate_node)
    graph.add_node("compare", nodes.compare_node)

    graph.add_edge(START, "load")
    graph.add_conditional_edges("load", _route_after_load, {"split": "split", "compare": "compare"})
    graph.add_edge("split", "train")
    graph.add_edge("train", "evaluate")
    graph.add_edge("evaluate", END)
    graph.add_edge("compare", END)
    return graph.compile()


@lru_cache
def get_pipeline():
    return build_pipeline()


def run_pipeline(
    data_dir: str,
    out_dir: str,
    config_path: Optional[str] = None,
    mode: str = "run",
    variants: Optional[List[str]] = None,
    dump_similarity: bool = False,
    workers: int = 1,
) -> GraphState:
    """CLI の run / compare から呼ばれる。"""
    if mode not in MODES:
        raise InputValidationError(f"不明なモードです: {mode}")
    logger.info("[lg_workflow] run_pipeline start mode=%s data_dir=%s out_dir=%s", mode, data_dir, out_dir)

    state = create_initial_state(
        data_dir=data_dir,
        out_dir=out_dir,
        config_path=config_path,
        mode=mode,
        variants=variants,
        dump_similarity=dump_similarity,
        workers=workers,
    )
    result: GraphState = get_pipeline().invoke(state)

    logger.info(
        "[lg_workflow] run_pipeline done mode=%s current_node=%s",
        mode,
        result.get("current_node"),
    )
    return result
