# services/checkpoint.py

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.errors import InputValidationError
from models.training_models import CheckpointManifest, LayerShape
from services.gcn import ModelSet

logger = logging.getLogger(__name__)

MAGIC = b"MGGANCK1"
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


# ============================================================
# 書き出し
# ============================================================


def layer_shapes(models: ModelSet) -> Tuple[LayerShape, ...]:
    return tuple(LayerShape(key=k, rows=p.rows, cols=p.cols) for k, p in models.parameters().items())


def encode_checkpoint(models: ModelSet, manifest: CheckpointManifest) -> bytes:
    """
    MAGIC | u32 長 + マニフェスト JSON | u32 テンソル数 |
    各テンソル: u32 キー長 + キー | u32 rows | u32 cols | <f8 データ
    """
    params = models.parameters()
    if tuple(l.key for l in manifest.layers) != tuple(params):
        raise InputValidationError("マニフェストの層構成がモデルと一致しません")
    header = manifest.model_dump_json().encode("utf-8")
    chunks = [MAGIC, _U32.pack(len(header)), header, _U32.pack(len(params))]
    for key, p in params.items():
        raw_key = key.encode("utf-8")
        chunks.append(_U32.pack(len(raw_key)))
        chunks.append(raw_key)
        chunks.append(_U32.pack(p.rows))
        chunks.append(_U32.pack(p.cols))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(path: PathLike, models: ModelSet, manifest: CheckpointManifest) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(models, manifest))
    tmp.replace(p)
    logger.info("[checkpoint] saved iteration=%d path=%s", manifest.iteration, p)
    return p


# ============================================================
# 読み込み
# ============================================================


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise InputValidationError(f"チェックポイントが途中で切れています path={self.source}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Tuple[CheckpointManifest, Dict[str, np.ndarray]]:
    reader = _Reader(data, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise InputValidationError(f"チェックポイントではありません path={source}")
    try:
        manifest = CheckpointManifest.model_validate_json(reader.take(reader.u32()))
    except ValidationError as exc:
        raise InputValidationError(f"マニフェストが不正です path={source} ({exc.error_count()} errors)") from exc

    weights: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        key = reader.take(reader.u32()).decode("utf-8")
        rows, cols = reader.u32(), reader.u32()
        values = np.frombuffer(reader.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
        weights[key] = values.astype(np.float64)
    if reader.pos != len(data):
        raise InputValidationError(f"チェックポイント末尾に余分なデータがあります path={source}")

    expected = {l.key: (l.rows, l.cols) for l in manifest.layers}
    actual = {k: v.shape for k, v in weights.items()}
    if expected != actual:
        raise InputValidationError(f"マニフェストと重みの形状が一致しません path={source}")
    return manifest, weights


def load_checkpoint(path: PathLike) -> Tuple[ModelSet, CheckpointManifest]:
    """チェックポイントから ModelSet を復元する（重みはビット単位で一致）。"""
    p = Path(path)
    if not p.exists():
        raise InputValidationError(f"チェックポイントが見つかりません: {p}")
    manifest, weights = decode_checkpoint(p.read_bytes(), str(p))
    models = ModelSet.build(manifest.f, manifest.m, manifest.c, manifest.seed)
    models.load_weights(weights)
    logger.info("[checkpoint] loaded iteration=%d path=%s", manifest.iteration, p)
    return models, manifest
