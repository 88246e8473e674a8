# app/graph/lg_state.py
from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple, TypedDict

from agents.trainer_agent import TrainingState
from models.graph_models import MultiDomainPopulation
from models.report_models import ComparisonReport, EvaluationReport
from models.training_models import LossWeights, TrainingConfig


class GraphState(TypedDict, total=False):
    """
    LangGraph の状態コンテナ。
    load → split → train → evaluate（mode="run"）か load → compare（mode="compare"）。
    """

    mode: str
    data_dir: str
    config_path: Optional[str]
    out_dir: str
    variants: Optional[List[str]]
    dump_similarity: bool
    workers: int

    config: TrainingConfig
    weights: LossWeights
    digest: str

    population: MultiDomainPopulation
    train_population: MultiDomainPopulation
    test_population: MultiDomainPopulation
    training_state: TrainingState
    report: EvaluationReport
    comparison: ComparisonReport

    outputs: Dict[str, Any]
    progress_messages: List[str]
    current_node: Optional[str]


MODES: Tuple[str, ...] = ("run", "compare")


def create_initial_state(
    data_dir: str,
    out_dir: str,
    config_path: Optional[str] = None,
    mode: str = "run",
    variants: Optional[List[str]] = None,
    dump_similarity: bool = False,
    workers: int = 1,
) -> GraphState:
    """
    ワークフロー開始時の初期 state を作成。
    """
    state: GraphState = GraphState(
        mode=mode,
        data_dir=str(data_dir),
        config_path=None if config_path is None else str(config_path),
        out_dir=str(out_dir),
        variants=variants,
        dump_similarity=dump_similarity,
        workers=workers,
        outputs={},
        progress_messages=[],  # 各ノードからのログ的メッセージ
        current_node=None,
    )
    return state
