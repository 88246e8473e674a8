# tests/conftest.py

from __future__ import annotations

import numpy as np
import pytest

from models.training_models import LossWeights, TrainingConfig
from services.synthetic import synthesize_population


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_population():
    """1 モード・ノイズなし。n=12, r=4 (f=6), m=2。"""
    return synthesize_population(seed=3, n=12, r=4, m=2, n_modes=1, noise_level=0.0)


@pytest.fixture
def two_mode_population():
    return synthesize_population(seed=7, n=24, r=5, m=2, n_modes=2, noise_level=0.02)


@pytest.fixture
def tiny_config() -> TrainingConfig:
    return TrainingConfig(
        iterations=2,
        batch_size=8,
        n_critic=1,
        c=2,
        seed=0,
        kernels=3,
        mkml_iterations=2,
        mkml_neighbors=3,
        topology_subsample=4,
        ec_unroll_steps=10,
        gp_directions=2,
        checkpoint_interval=1,
        log_interval=1,
        train_fraction=0.75,
    )


@pytest.fixture
def default_weights() -> LossWeights:
    return LossWeights()


@pytest.fixture
def tiny_config_file(tmp_path):
    """CLI テスト用の小さな設定ファイル。"""
    path = tmp_path / "tiny.cfg"
    path.write_text(
        "\n".join(
            [
                "# tiny run",
                "iterations=2",
                "batch_size=8",
                "n_critic=1",
                "c=2",
                "kernels=3",
                "mkml_iterations=2",
                "mkml_neighbors=3",
                "topology_subsample=4",
                "ec_unroll_steps=10",
                "gp_directions=2",
                "checkpoint_interval=1",
                "log_interval=1",
                "train_fraction=0.75",
                "seed=0",
                "",
            ]
        ),
        encoding="utf-8",
    )
    return path
