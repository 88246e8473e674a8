# tests/test_config.py

import logging

import pytest

from app.config import (
    build_run_config,
    config_digest,
    load_run_config,
    parse_run_config,
    render_run_config,
    setup_logging,
)
from app.errors import InputValidationError
from models.training_models import LossWeights, TrainingConfig


def test_parse_ignores_comments_and_blank_lines():
    values = parse_run_config("# head\n\niterations = 5  # short\nc=3\n")
    assert values == {"iterations": "5", "c": "3"}


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("iterations 5", "<config>:1:"),
        ("iterations=5\nfoo=1", "<config>:2: 未知のキーです"),
        ("c=1\nc=2", "キーが重複しています"),
        ("c=", "キーまたは値が空です"),
    ],
)
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(InputValidationError) as info:
        parse_run_config(text)
    assert fragment in str(info.value)


def test_build_run_config_types_and_sigma():
    config, weights = build_run_config({"iterations": "3", "centrality_metric": "CC", "sigma": "auto"})
    assert config.iterations == 3
    assert config.centrality_metric == "CC"
    assert weights.sigma is None
    assert weights.resolved_sigma(4) == 4.0
    _, weights = build_run_config({"sigma": "0.5"})
    assert weights.resolved_sigma(4) == 0.5


def test_load_run_config_defaults_and_file(tmp_path, tiny_config_file, tiny_config):
    config, weights = load_run_config(None)
    assert config == TrainingConfig(seed=config.seed)
    assert weights == LossWeights()

    config, _ = load_run_config(tiny_config_file)
    assert config == tiny_config


def test_load_run_config_errors(tmp_path):
    with pytest.raises(InputValidationError):
        load_run_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("iterations=-1\n", encoding="utf-8")
    with pytest.raises(InputValidationError) as info:
        load_run_config(bad)
    assert "設定値が不正です" in str(info.value)


def test_config_digest_is_stable_and_sensitive():
    a = config_digest(TrainingConfig(), LossWeights())
    assert a == config_digest(TrainingConfig(), LossWeights())
    assert len(a) == 12
    assert a != config_digest(TrainingConfig(iterations=999), LossWeights())
    assert a != config_digest(TrainingConfig(), LossWeights(lambda_top=0.0))


def test_rendered_config_parses_back(tiny_config, default_weights):
    text = render_run_config(tiny_config, default_weights)
    assert "sigma=none" in text
    config, weights = build_run_config(parse_run_config(text))
    assert config == tiny_config
    assert weights == default_weights


def test_setup_logging_is_idempotent():
    root = logging.getLogger()
    setup_logging("DEBUG")
    setup_logging("WARNING")
    assert sum(1 for h in root.handlers if getattr(h, "_mggan", False)) == 1
    assert root.level == logging.WARNING
    with pytest.raises(InputValidationError):
        setup_logging("LOUD")
