# tests/test_evaluator_agent.py

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from agents.evaluator_agent import (
    REPORT_COLUMNS,
    average_scores,
    evaluate_checkpoint,
    evaluate_predictions,
    render_csv,
    render_text,
    report_paths,
    score_domain,
    write_report,
)
from agents.population_agent import split_population
from agents.trainer_agent import train
from app.errors import DimensionError
from models.report_models import DomainScores, EvaluationReport, ReportMetadata
from services.population_io import write_population


def _scores(domain, value):
    return DomainScores(domain=domain, pcc=value, mae_bc=value / 10, mae_cc=value / 5, mae_ec=value / 2)


@pytest.fixture
def report():
    rows = [_scores("T1", 0.5), _scores("T2", 0.7)]
    meta = ReportMetadata(seed=4, config_digest="cafe01", centrality_metric="EC", n_test=3)
    return EvaluationReport(domains=rows, average=average_scores(rows), metadata=meta)


def test_perfect_prediction_scores(rng):
    x = rng.uniform(0.1, 1.0, size=(3, 6))
    s = score_domain("T1", x, x.copy(), 4)
    assert s.pcc == pytest.approx(1.0)
    assert (s.mae_bc, s.mae_cc, s.mae_ec) == (0.0, 0.0, 0.0)


def test_average_scores(report):
    assert report.average.domain == "average"
    assert report.average.pcc == pytest.approx(0.6)
    assert report.average.mae_ec == pytest.approx(0.3)


def test_evaluate_predictions_checks_domain_count(tiny_population):
    meta = ReportMetadata(seed=0, config_digest="")
    with pytest.raises(DimensionError):
        evaluate_predictions(tiny_population, [tiny_population.targets[0].features], meta)


def test_evaluate_predictions_with_truth(tiny_population):
    meta = ReportMetadata(seed=0, config_digest="")
    preds = [t.features.copy() for t in tiny_population.targets]
    out = evaluate_predictions(tiny_population, preds, meta)
    assert [d.domain for d in out.domains] == ["T1", "T2"]
    assert out.average.pcc == pytest.approx(1.0)


def test_render_text(report):
    text = render_text(report)
    lines = text.splitlines()
    assert lines[:4] == ["seed: 4", "config_digest: cafe01", "centrality_metric: EC", "n_test: 3"]
    assert lines[5].split() == list(REPORT_COLUMNS)
    assert lines[7].split() == ["T1", "0.50000000", "0.05000000", "0.10000000", "0.25000000"]
    assert lines[-1].split()[0] == "average"


def test_render_csv(report):
    lines = render_csv(report).splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert lines[3] == "average,0.60000000,0.06000000,0.12000000,0.30000000"


@pytest.mark.parametrize("out", ["res/report", "res/report.txt", "res/report.csv"])
def test_report_paths(out):
    assert report_paths(out) == (Path("res/report.txt"), Path("res/report.csv"))


def test_write_report(tmp_path, report):
    txt, csv = write_report(report, tmp_path / "nested" / "report")
    assert txt.read_text(encoding="utf-8") == render_text(report)
    assert pd.read_csv(csv)["domain"].tolist() == ["T1", "T2", "average"]


def test_evaluate_checkpoint_uses_recorded_test_subjects(tmp_path, tiny_population, tiny_config, default_weights):
    train_pop, test_pop = split_population(tiny_population, tiny_config.train_fraction, tiny_config.seed)
    write_population(tiny_population, tmp_path / "data")
    train(train_pop, tiny_config, default_weights, test_subjects=test_pop.subjects, out_dir=tmp_path / "run",
          config_digest="abc")
    report = evaluate_checkpoint(tmp_path / "run" / "model.ckpt", tmp_path / "data")
    assert report.metadata.n_test == test_pop.n == 3
    assert report.metadata.config_digest == "abc"
    assert report.metadata.checkpoint.endswith("model.ckpt")
    assert np.isfinite(report.average.mae_ec)
