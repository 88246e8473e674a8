# tests/test_trainer_agent.py

import math

import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import adjusted_rand_score

from agents.trainer_agent import (
    discriminator_objective,
    generator_objective,
    iteration_rng,
    sample_batch,
    setup_training,
    train,
    train_iteration,
)
from app.errors import SetupError
from models.training_models import LOSS_LOG_COLUMNS, LossWeights, TrainingConfig
from services import autodiff as ad
from services.autodiff import Tape
from services.checkpoint import load_checkpoint
from services.optim import adam_step
from services.synthetic import synthesize_population


@pytest.fixture
def state(tiny_population, tiny_config, default_weights):
    return setup_training(tiny_population, tiny_config, default_weights, config_digest="d1")


def test_setup_assigns_every_subject(state, tiny_population):
    sizes = state.assignment.sizes()
    assert sum(sizes) == tiny_population.n
    assert all(size >= 1 for size in sizes)
    for j in range(2):
        n_j = state.assignment.members(j).size
        assert all(s.shape == (n_j, n_j) for s in state.cluster_similarities[j])
    assert state.sigma == 2.0
    assert state.models.f == 6


def test_setup_rejects_too_few_subjects(tiny_population, tiny_config, default_weights):
    small = tiny_population.subset(np.arange(3))
    with pytest.raises(SetupError):
        setup_training(small, tiny_config, default_weights)


def test_sample_batch_is_stratified_and_reproducible(state):
    a = sample_batch(state, iteration_rng(0, 1))
    b = sample_batch(state, iteration_rng(0, 1))
    total = 0
    for cb_a, cb_b in zip(a, b):
        np.testing.assert_array_equal(cb_a.index, cb_b.index)
        members = set(state.assignment.members(cb_a.cluster).tolist())
        assert set(cb_a.index.tolist()) <= members
        assert np.all(np.diff(cb_a.index) > 0)
        assert cb_a.a_source.shape == (cb_a.index.size, cb_a.index.size)
        assert len(cb_a.targets) == 2
        if cb_a.topology_rows is not None:
            assert cb_a.topology_rows.size == 4
        total += cb_a.index.size
    assert 2 <= total <= 12


def test_full_batch_when_batch_exceeds_population(state):
    big = state.model_copy(update={"config": state.config.model_copy(update={"batch_size": 100})})
    batch = sample_batch(big, iteration_rng(0, 1))
    assert sum(cb.index.size for cb in batch) == 12


def test_generator_step_leaves_discriminator_gradients_at_zero(state):
    batch = sample_batch(state, iteration_rng(0, 1))
    d_params = state.models.discriminator_parameters()
    ad.zero_grad(d_params.values())
    with Tape() as tape:
        loss, values = generator_objective(state, batch)
    tape.backward(loss)
    assert all(not p.grad.any() for p in d_params.values())
    assert values["L_top"] == pytest.approx(values["L_loc"] + values["L_glb"])


def _random_state(seed):
    rng = np.random.default_rng(seed)
    n, r, m = int(rng.integers(8, 13)), int(rng.integers(4, 7)), int(rng.integers(1, 4))
    pop = synthesize_population(seed=seed, n=n, r=r, m=m, n_modes=2, noise_level=0.02)
    config = TrainingConfig(
        batch_size=n,
        n_critic=1,
        c=2,
        seed=seed,
        kernels=3,
        mkml_iterations=1,
        mkml_neighbors=3,
        topology_subsample=3,
        ec_unroll_steps=5,
        gp_directions=1,
    )
    return setup_training(pop, config, LossWeights())


def _snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


def test_each_step_leaves_the_other_group_untouched():
    for seed in range(100):
        state = _random_state(seed)
        batch = sample_batch(state, iteration_rng(seed, 1))
        d_params = state.models.discriminator_parameters()
        g_params = state.models.generator_parameters()

        ad.zero_grad(d_params.values())
        ad.zero_grad(g_params.values())
        d_before = _snapshot(d_params)
        with Tape() as tape:
            loss, _ = generator_objective(state, batch)
        tape.backward(loss)
        adam_step(state.g_optimizer, g_params)
        assert all(not p.grad.any() for p in d_params.values())
        assert all(np.array_equal(d_before[k], p.data) for k, p in d_params.items())

        ad.zero_grad(d_params.values())
        ad.zero_grad(g_params.values())
        g_before = _snapshot(g_params)
        with Tape() as tape:
            loss, _ = discriminator_objective(state, batch, iteration_rng(seed, 2))
        tape.backward(loss)
        adam_step(state.d_optimizer, d_params)
        assert all(not p.grad.any() for p in g_params.values())
        assert all(np.array_equal(g_before[k], p.data) for k, p in g_params.items())


def test_cluster_labels_follow_subject_permutation():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, r, m = int(rng.integers(16, 31)), int(rng.integers(4, 8)), int(rng.integers(1, 4))
        pop = synthesize_population(seed=seed, n=n, r=r, m=m, n_modes=2, noise_level=0.02)
        perm = rng.permutation(n)
        config = TrainingConfig(c=2, seed=seed, kernels=3, mkml_iterations=2, mkml_neighbors=5)
        base = setup_training(pop, config, LossWeights()).assignment.labels
        permuted = setup_training(pop.subset(perm), config, LossWeights()).assignment.labels
        assert adjusted_rand_score(base[perm], permuted) == 1.0


def test_train_iteration_updates_state(state):
    before = {k: p.data.copy() for k, p in state.models.parameters().items()}
    record = train_iteration(state)
    assert record.iteration == 1
    assert state.iteration == 1
    assert state.d_optimizer.step_count == state.config.n_critic
    assert state.g_optimizer.step_count == 1
    assert all(math.isfinite(v) for v in record.as_row())
    changed = [not np.array_equal(before[k], p.data) for k, p in state.models.parameters().items()]
    assert any(changed)


def test_zero_topology_weight_still_logs_value(tiny_population, tiny_config, default_weights):
    weights = default_weights.model_copy(update={"lambda_top": 0.0})
    state = setup_training(tiny_population, tiny_config, weights)
    record = train_iteration(state)
    assert record.L_top > 0.0


def test_training_is_deterministic(tiny_population, tiny_config, default_weights):
    a = train(tiny_population, tiny_config, default_weights)
    b = train(tiny_population, tiny_config, default_weights)
    assert [r.as_row() for r in a.loss_log] == [r.as_row() for r in b.loss_log]
    for key, p in a.models.parameters().items():
        assert p.data.tobytes() == b.models.parameters()[key].data.tobytes()


def test_train_writes_outputs(tmp_path, tiny_population, tiny_config, default_weights):
    state = train(tiny_population, tiny_config, default_weights, test_subjects=("x1",), out_dir=tmp_path)
    assert (tmp_path / "checkpoints" / "iter_000001.ckpt").exists()
    assert (tmp_path / "checkpoints" / "iter_000002.ckpt").exists()

    log = pd.read_csv(tmp_path / "loss_log.csv")
    assert tuple(log.columns) == LOSS_LOG_COLUMNS
    assert log["iteration"].tolist() == [1, 2]

    models, manifest = load_checkpoint(tmp_path / "model.ckpt")
    assert manifest.iteration == state.iteration == 2
    assert manifest.test_subjects == ("x1",)
    assert manifest.training_config == tiny_config
    for key, p in state.models.parameters().items():
        assert models.parameters()[key].data.tobytes() == p.data.tobytes()
