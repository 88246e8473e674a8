# tests/test_comparison_agent.py

import pandas as pd
import pytest

from agents.comparison_agent import (
    COMPARISON_COLUMNS,
    VARIANTS,
    parse_variants,
    render_comparison_text,
    run_comparison,
    write_comparison,
)
from app.errors import InputValidationError


def test_parse_variants():
    assert parse_variants(None) == list(VARIANTS)
    assert parse_variants("mwgan, multigraphgan_EC") == ["mwgan", "multigraphgan_EC"]
    with pytest.raises(InputValidationError):
        parse_variants("mwgan,cyclegan")


def test_variant_resolution(tiny_config, default_weights):
    cfg, w = VARIANTS["mwgan"].resolve(tiny_config, default_weights)
    assert cfg.c == 1 and w.lambda_top == 0.0

    cfg, w = VARIANTS["mwgan_clustering"].resolve(tiny_config, default_weights)
    assert cfg.c == tiny_config.c and w.lambda_top == 0.0

    cfg, w = VARIANTS["multigraphgan_BC"].resolve(tiny_config, default_weights)
    assert cfg.centrality_metric == "BC"
    assert w == default_weights


def test_run_comparison_rows(tmp_path, tiny_population, tiny_config, default_weights):
    report = run_comparison(
        tiny_population, tiny_config, default_weights, variants=["mwgan", "multigraphgan_CC"], config_digest="z9"
    )
    assert [row.method for row in report.rows] == ["mwgan", "multigraphgan_CC"]
    assert [row.measure for row in report.rows] == [None, "CC"]
    assert report.metadata.n_test == 3

    text = render_comparison_text(report)
    assert "config_digest: z9" in text
    assert text.splitlines()[4].split() == list(COMPARISON_COLUMNS)

    txt, csv = write_comparison(report, tmp_path)
    frame = pd.read_csv(csv, keep_default_na=False)
    assert frame["measure"].tolist() == ["-", "CC"]
    assert txt.read_text(encoding="utf-8") == text


def test_run_comparison_rejects_unknown(tiny_population, tiny_config, default_weights):
    with pytest.raises(InputValidationError):
        run_comparison(tiny_population, tiny_config, default_weights, variants=["nope"])
