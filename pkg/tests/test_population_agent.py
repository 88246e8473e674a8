# tests/test_population_agent.py

import numpy as np
import pandas as pd
import pytest

from agents.clustering_agent import dump_similarity, learn_domain_similarities
from agents.population_agent import (
    build_synthetic_population,
    load_population_dir,
    select_subjects,
    split_population,
    write_split,
)
from app.errors import InputValidationError
from models.similarity_models import ClusterAssignment


def test_build_and_reload_with_inferred_layout(tmp_path):
    pop, summary = build_synthetic_population(seed=2, n=10, r=5, m=3, n_modes=2, out_dir=tmp_path)
    assert summary.mode_counts == (5, 5)
    assert summary.path is not None
    back = load_population_dir(tmp_path)
    assert (back.r, back.m, back.n) == (5, 3, 10)


def test_select_subjects(tiny_population):
    chosen = select_subjects(tiny_population, (tiny_population.subjects[5], tiny_population.subjects[2]))
    assert chosen.subjects == (tiny_population.subjects[2], tiny_population.subjects[5])
    with pytest.raises(InputValidationError):
        select_subjects(tiny_population, ("ghost",))


def test_write_split(tmp_path, tiny_population):
    train, test = split_population(tiny_population, 0.75, seed=0)
    frame = pd.read_csv(write_split(train, test, tmp_path))
    assert frame["subject_id"].is_monotonic_increasing
    assert set(frame.loc[frame["split"] == "test", "subject_id"]) == set(test.subjects)


def test_learn_and_dump_similarities(tmp_path, tiny_population, tiny_config):
    pop, sims = learn_domain_similarities(tiny_population, tiny_config)
    assert len(sims) == 3
    assert all(d.similarity is not None for d in pop.domains)
    labels = np.arange(pop.n) % 2
    assignment = ClusterAssignment(labels=labels, c=2, centroids=np.zeros((2, 1)), inertia_history=(0.0,))
    written = dump_similarity(pop, assignment, tmp_path)
    assert [p.name for p in written] == ["similarity_S.csv", "similarity_T1.csv", "similarity_T2.csv", "clusters.csv"]
    frame = pd.read_csv(tmp_path / "similarity_T1.csv", index_col="subject_id")
    assert frame.shape == (pop.n, pop.n)
    assert list(frame.index) == list(pop.subjects)
