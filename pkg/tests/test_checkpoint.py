# tests/test_checkpoint.py

import numpy as np
import pytest

from app.errors import InputValidationError
from models.training_models import CheckpointManifest, TrainingConfig
from services.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    layer_shapes,
    load_checkpoint,
    save_checkpoint,
)
from services.gcn import ModelSet


def _manifest(models: ModelSet, **extra) -> CheckpointManifest:
    values = dict(
        r=4,
        f=models.f,
        m=models.m,
        c=models.c,
        seed=3,
        iteration=7,
        centrality_metric="CC",
        config_digest="abc123",
        layers=layer_shapes(models),
        test_subjects=("sub0001", "sub0005"),
        training_config=TrainingConfig(iterations=7),
    )
    values.update(extra)
    return CheckpointManifest(**values)


@pytest.fixture
def trained_like():
    """初期値から動かした重みを持つ ModelSet。"""
    models = ModelSet.build(f=6, m=2, c=2, seed=3)
    rng = np.random.default_rng(0)
    for p in models.parameters().values():
        p.data += rng.normal(0, 0.01, size=p.shape)
    return models


def test_save_then_load_is_bit_exact(tmp_path, trained_like):
    path = save_checkpoint(tmp_path / "ckpt" / "model.ckpt", trained_like, _manifest(trained_like))
    loaded, manifest = load_checkpoint(path)
    for key, p in trained_like.parameters().items():
        assert loaded.parameters()[key].data.tobytes() == p.data.tobytes()
    assert manifest.iteration == 7
    assert manifest.test_subjects == ("sub0001", "sub0005")
    assert manifest.training_config.iterations == 7
    assert not (tmp_path / "ckpt" / "model.ckpt.tmp").exists()


def test_encoding_is_deterministic(trained_like):
    manifest = _manifest(trained_like)
    data = encode_checkpoint(trained_like, manifest)
    assert data.startswith(MAGIC)
    assert data == encode_checkpoint(trained_like, manifest)


def test_bad_magic_and_truncation(trained_like):
    data = encode_checkpoint(trained_like, _manifest(trained_like))
    with pytest.raises(InputValidationError):
        decode_checkpoint(b"NOTACKPT" + data[len(MAGIC):])
    with pytest.raises(InputValidationError):
        decode_checkpoint(data[:-5])
    with pytest.raises(InputValidationError):
        decode_checkpoint(data + b"\x00")


def test_manifest_must_match_layers(trained_like):
    other = ModelSet.build(f=6, m=1, c=1, seed=0)
    with pytest.raises(InputValidationError):
        encode_checkpoint(trained_like, _manifest(trained_like, layers=layer_shapes(other)))


def test_missing_file(tmp_path):
    with pytest.raises(InputValidationError):
        load_checkpoint(tmp_path / "nope.ckpt")
