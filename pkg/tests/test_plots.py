# tests/test_plots.py

import pandas as pd
import pytest

from agents.trainer_agent import write_loss_log
from app.errors import InputValidationError
from models.training_models import LOSS_LOG_COLUMNS, LossRecord
from services.plots import plot_loss_curves


@pytest.fixture
def loss_log(tmp_path):
    records = [
        LossRecord(**{name: (t if name == "iteration" else 1.0 / t) for name in LOSS_LOG_COLUMNS})
        for t in range(1, 6)
    ]
    return write_loss_log(records, tmp_path / "loss_log.csv")


def test_writes_three_svg_figures(tmp_path, loss_log):
    paths = plot_loss_curves(loss_log, tmp_path / "plots")
    assert [p.name for p in paths] == ["discriminator.svg", "generator.svg", "topology.svg"]
    for p in paths:
        assert p.read_text(encoding="utf-8").lstrip().startswith("<?xml")


def test_same_log_gives_same_bytes(tmp_path, loss_log):
    a = plot_loss_curves(loss_log, tmp_path / "a")
    b = plot_loss_curves(loss_log, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    pd.DataFrame({"iteration": [1], "loss": [0.5]}).to_csv(path, index=False)
    with pytest.raises(InputValidationError):
        plot_loss_curves(path, tmp_path / "out")
    with pytest.raises(InputValidationError):
        plot_loss_curves(tmp_path / "missing.csv", tmp_path / "out")
