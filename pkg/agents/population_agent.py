# agents/population_agent.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.errors import InputValidationError
from models.graph_models import MultiDomainPopulation, PopulationSummary
from services.population_io import infer_layout, load_population, write_population
from services.synthetic import split_train_test, synthesize_population

logger = logging.getLogger(__name__)

SPLIT_FILE = "split.csv"


def summarize(pop: MultiDomainPopulation, path: Optional[Union[str, Path]] = None) -> PopulationSummary:
    counts = None
    if pop.labels is not None:
        counts = tuple(int(c) for c in np.bincount(pop.labels))
    return PopulationSummary(
        n=pop.n,
        r=pop.r,
        m=pop.m,
        f=pop.f,
        domains=tuple(d.domain_id for d in pop.domains),
        mode_counts=counts,
        path=None if path is None else str(path),
    )


def build_synthetic_population(
    seed: int,
    n: int,
    r: int,
    m: int,
    n_modes: int = 1,
    noise_level: float = 0.0,
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[MultiDomainPopulation, PopulationSummary]:
    """合成集団を作り、out_dir があれば population.csv / labels.csv に書き出す。"""
    pop = synthesize_population(seed=seed, n=n, r=r, m=m, n_modes=n_modes, noise_level=noise_level)
    path = write_population(pop, out_dir) if out_dir is not None else None
    return pop, summarize(pop, path)


def load_population_dir(
    path: Union[str, Path],
    r: Optional[int] = None,
    m: Optional[int] = None,
) -> MultiDomainPopulation:
    """r / m を省略した場合は CSV から推定する。"""
    if r is None or m is None:
        inferred_r, inferred_m = infer_layout(path)
        r = r if r is not None else inferred_r
        m = m if m is not None else inferred_m
        logger.info("[population_agent] inferred layout r=%d m=%d path=%s", r, m, path)
    return load_population(path, r=r, m=m)


def split_population(
    pop: MultiDomainPopulation,
    fraction: float,
    seed: int,
) -> Tuple[MultiDomainPopulation, MultiDomainPopulation]:
    return split_train_test(pop, fraction, seed)


def select_subjects(pop: MultiDomainPopulation, subjects: Tuple[str, ...]) -> MultiDomainPopulation:
    """記録済みの被験者 ID だけを取り出す（ID 順）。"""
    index = {sid: k for k, sid in enumerate(pop.subjects)}
    missing = [sid for sid in subjects if sid not in index]
    if missing:
        raise InputValidationError(f"データに存在しない被験者があります: {', '.join(sorted(missing))}")
    return pop.subset(np.array(sorted(index[sid] for sid in subjects), dtype=np.int64))


def write_split(train: MultiDomainPopulation, test: MultiDomainPopulation, out_dir: Union[str, Path]) -> Path:
    """split.csv（subject_id,split）を書き出す。"""
    rows = [(sid, "train") for sid in train.subjects] + [(sid, "test") for sid in test.subjects]
    rows.sort(key=lambda row: row[0])
    path = Path(out_dir) / SPLIT_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["subject_id", "split"]).to_csv(path, index=False, lineterminator="\n")
    logger.info("[population_agent] wrote split train=%d test=%d path=%s", train.n, test.n, path)
    return path
