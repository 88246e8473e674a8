# agents/clustering_agent.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from models.graph_models import MultiDomainPopulation
from models.similarity_models import ClusterAssignment, KernelBank, SimilarityMatrix
from models.training_models import TrainingConfig
from services.mkml import cluster_source_embeddings, learn_similarity

logger = logging.getLogger(__name__)


def kernel_bank(config: TrainingConfig) -> KernelBank:
    return KernelBank.uniform(config.kernels)


def learn_domain_similarities(
    pop: MultiDomainPopulation,
    config: TrainingConfig,
) -> Tuple[MultiDomainPopulation, Tuple[SimilarityMatrix, ...]]:
    """S, T1..Tm それぞれで MKML 類似度を学習し、集団に差し込んで返す。"""
    bank = kernel_bank(config)
    sims = tuple(
        learn_similarity(d.features, bank, iterations=config.mkml_iterations, neighbors=config.mkml_neighbors)
        for d in pop.domains
    )
    for d, s in zip(pop.domains, sims):
        logger.info(
            "[clustering_agent] similarity domain=%s n=%d weights=%s",
            d.domain_id, s.n, [round(w, 4) for w in s.kernel_weights],
        )
    return pop.with_similarities(tuple(s.values for s in sims)), sims


def cluster_embeddings(z: np.ndarray, config: TrainingConfig) -> ClusterAssignment:
    return cluster_source_embeddings(
        z,
        config.c,
        config.seed,
        bank=kernel_bank(config),
        iterations=config.mkml_iterations,
        neighbors=config.mkml_neighbors,
    )


def dump_similarity(
    pop: MultiDomainPopulation,
    assignment: ClusterAssignment,
    out_dir: Union[str, Path],
) -> list:
    """similarity_<domain>.csv（被験者 ID をヘッダと index に持つ n x n）と clusters.csv を書く。"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for d in pop.domains:
        if d.similarity is None:
            continue
        frame = pd.DataFrame(d.similarity, index=list(pop.subjects), columns=list(pop.subjects))
        frame.index.name = "subject_id"
        path = out / f"similarity_{d.domain_id}.csv"
        frame.to_csv(path, float_format="%.17g", lineterminator="\n")
        written.append(path)
    clusters = out / "clusters.csv"
    pd.DataFrame({"subject_id": list(pop.subjects), "cluster": assignment.labels}).to_csv(
        clusters, index=False, lineterminator="\n"
    )
    written.append(clusters)
    logger.info("[clustering_agent] dumped similarity files=%d dir=%s", len(written), out)
    return written
