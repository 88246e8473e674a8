# services/population_io.py

from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.errors import DimensionError, IncompletePairingError, InputValidationError
from models.graph_models import (
    DOMAIN_PATTERN,
    BrainGraph,
    DomainDataset,
    FeatureVector,
    MultiDomainPopulation,
    regions_for_length,
)

logger = logging.getLogger(__name__)

POPULATION_FILE = "population.csv"
LABELS_FILE = "labels.csv"

PathLike = Union[str, Path]


# ============================================================
# ベクトル化
# ============================================================


@lru_cache(maxsize=32)
def triu_indices(r: int) -> Tuple[np.ndarray, np.ndarray]:
    """上三角 (i<j) の行優先インデックス。"""
    rows, cols = np.triu_indices(r, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def feature_names(f: int) -> List[str]:
    return [f"v_{k}" for k in range(f)]


def vectorize(g: BrainGraph) -> FeatureVector:
    """BrainGraph の上三角を行優先で並べる。"""
    rows, cols = triu_indices(g.r)
    return FeatureVector(values=g.weights[rows, cols])


def devectorize(v: Union[FeatureVector, np.ndarray], r: int) -> Tuple[BrainGraph, int]:
    """
    特徴量ベクトルを r x r の BrainGraph に戻す。
    生成グラフは負値を含みうるので 0 にクランプし、その件数も返す。
    """
    values = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=np.float64).reshape(-1)
    expected = r * (r - 1) // 2
    if values.size != expected:
        raise DimensionError("devectorize", (1, values.size), (1, expected))
    weights, clamped = devectorize_batch(values.reshape(1, -1), r)
    return BrainGraph(weights=weights[0]), clamped


def devectorize_batch(features: np.ndarray, r: int) -> Tuple[np.ndarray, int]:
    """n x f の特徴量行列を n x r x r の隣接行列にまとめて戻す（クランプ件数つき）。"""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != r * (r - 1) // 2:
        raise DimensionError("devectorize_batch", x.shape, (x.shape[0] if x.ndim else 0, r * (r - 1) // 2))
    negative = x < 0
    clamped = int(negative.sum())
    x = np.where(negative, 0.0, x)
    rows, cols = triu_indices(r)
    out = np.zeros((x.shape[0], r, r))
    out[:, rows, cols] = x
    out[:, cols, rows] = x
    return out, clamped


# ============================================================
# CSV 入力
# ============================================================


def _resolve_csv(path: PathLike) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / POPULATION_FILE
    if not p.exists():
        raise InputValidationError(f"集団ファイルが見つかりません: {p}")
    return p


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path, dtype={"subject_id": str, "domain": str}, encoding="utf-8", float_precision="round_trip"
        )
    except pd.errors.ParserError as exc:
        raise InputValidationError(f"CSV を解析できません: {path} ({exc})") from exc
    except pd.errors.EmptyDataError as exc:
        raise InputValidationError(f"CSV が空です: {path}") from exc


def infer_layout(path: PathLike) -> Tuple[int, int]:
    """ヘッダの特徴量列数から r を、domain 列から m を推定する。"""
    frame = _read_frame(_resolve_csv(path))
    f = len(frame.columns) - 2
    try:
        r = regions_for_length(f)
    except ValueError as exc:
        raise InputValidationError(str(exc)) from exc
    targets = {d for d in frame["domain"].dropna().unique() if DOMAIN_PATTERN.match(d) and d != "S"}
    if not targets:
        raise InputValidationError("ターゲットドメイン (T1..Tm) の行がありません")
    m = max(int(d[1:]) for d in targets)
    return r, m


def load_population(path: PathLike, r: int, m: int) -> MultiDomainPopulation:
    """
    subject_id,domain,v_0..v_{f-1} 形式の CSV を読み込んで検証する。
    path がディレクトリなら population.csv を読み、labels.csv があれば正解モードも付ける。
    被験者はどのドメインでも ID の辞書順に並ぶ。
    """
    csv_path = _resolve_csv(path)
    f = r * (r - 1) // 2
    frame = _read_frame(csv_path)

    expected = ["subject_id", "domain", *feature_names(f)]
    if list(frame.columns) != expected:
        raise InputValidationError(
            f"ヘッダが不正です: 特徴量列 {len(frame.columns) - 2} 個 (r={r} なら f={f} 個) path={csv_path}"
        )

    domains = ["S", *[f"T{i}" for i in range(1, m + 1)]]
    allowed = set(domains)
    values = frame[feature_names(f)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)

    seen: Dict[Tuple[str, str], int] = {}
    for idx, (sid, dom) in enumerate(zip(frame["subject_id"], frame["domain"])):
        line = idx + 2
        if not isinstance(sid, str) or not sid:
            raise InputValidationError(f"{line} 行目: subject_id が空です")
        if dom not in allowed:
            raise InputValidationError(f"{line} 行目: ドメイン {dom} は {domains} のいずれでもありません")
        if not np.all(np.isfinite(values[idx])):
            raise InputValidationError(f"{line} 行目: 特徴量が {f} 個の数値になっていません")
        key = (sid, dom)
        if key in seen:
            raise InputValidationError(f"{line} 行目: ({sid}, {dom}) が {seen[key]} 行目と重複しています")
        seen[key] = line

    subjects = sorted({sid for sid, _ in seen})
    missing = {
        sid: [d for d in domains if (sid, d) not in seen]
        for sid in subjects
        if any((sid, d) not in seen for d in domains)
    }
    if missing:
        raise IncompletePairingError(missing.keys(), missing)

    outside = int(np.sum((values < 0) | (values > 1)))
    if outside:
        logger.warning("[population_io] values outside [0,1] count=%d path=%s", outside, csv_path)

    row_of = {key: line - 2 for key, line in seen.items()}
    datasets = [
        DomainDataset(domain_id=d, features=values[[row_of[(sid, d)] for sid in subjects]])
        for d in domains
    ]

    labels = _load_labels(csv_path.parent / LABELS_FILE, subjects)
    logger.info("[population_io] loaded n=%d r=%d m=%d path=%s", len(subjects), r, m, csv_path)
    return MultiDomainPopulation(
        r=r,
        m=m,
        subjects=tuple(subjects),
        source=datasets[0],
        targets=tuple(datasets[1:]),
        labels=labels,
    )


def _load_labels(path: Path, subjects: List[str]) -> Optional[np.ndarray]:
    if not path.exists():
        return None
    frame = pd.read_csv(path, dtype={"subject_id": str}, float_precision="round_trip")
    mapping = dict(zip(frame["subject_id"], frame["mode"]))
    if set(mapping) != set(subjects):
        logger.warning("[population_io] labels ignored: subject ids differ path=%s", path)
        return None
    return np.array([int(mapping[sid]) for sid in subjects], dtype=np.int64)


# ============================================================
# CSV 出力
# ============================================================


def population_frame(pop: MultiDomainPopulation) -> pd.DataFrame:
    """被験者順 → ドメイン順 (S, T1..Tm) に並べた DataFrame。"""
    n = pop.n
    blocks = []
    for d in pop.domains:
        block = pd.DataFrame(d.features, columns=feature_names(pop.f))
        block.insert(0, "domain", d.domain_id)
        block.insert(0, "subject_id", list(pop.subjects))
        block["_order"] = np.arange(n)
        blocks.append(block)
    frame = pd.concat(blocks, ignore_index=True)
    domain_rank = {d.domain_id: k for k, d in enumerate(pop.domains)}
    frame["_rank"] = frame["domain"].map(domain_rank)
    frame = frame.sort_values(["_order", "_rank"], kind="mergesort").drop(columns=["_order", "_rank"])
    return frame.reset_index(drop=True)


def write_population(pop: MultiDomainPopulation, out_dir: PathLike) -> Path:
    """population.csv（と labels があれば labels.csv）を書き出す。"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / POPULATION_FILE
    population_frame(pop).to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
    if pop.labels is not None:
        pd.DataFrame({"subject_id": list(pop.subjects), "mode": pop.labels}).to_csv(
            out / LABELS_FILE, index=False, lineterminator="\n"
        )
    logger.info("[population_io] wrote n=%d m=%d path=%s", pop.n, pop.m, csv_path)
    return csv_path


def write_feature_rows(features: np.ndarray, subjects: List[str], domain: str, path: PathLike) -> Path:
    """予測結果など 1 ドメイン分の行列を同じ CSV 形式で書く。"""
    x = np.asarray(features, dtype=np.float64)
    frame = pd.DataFrame(x, columns=feature_names(x.shape[1]))
    frame.insert(0, "domain", domain)
    frame.insert(0, "subject_id", list(subjects))
    p = Path(path)
    frame.to_csv(p, index=False, float_format="%.17g", lineterminator="\n")
    return p


def read_source_rows(path: PathLike) -> Tuple[List[str], np.ndarray]:
    """
    予測入力用。subject_id,domain,v_* 形式で S の行だけを取り出す。
    domain 列が無い場合は全行をソースとして扱う。
    """
    frame = _read_frame(_resolve_csv(path))
    if "subject_id" not in frame.columns:
        raise InputValidationError(f"subject_id 列がありません: {path}")
    if "domain" in frame.columns:
        frame = frame[frame["domain"] == "S"]
    cols = [c for c in frame.columns if c.startswith("v_")]
    values = frame[cols].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    if values.size == 0:
        raise InputValidationError(f"ソース行がありません: {path}")
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise InputValidationError(f"{int(frame.index[bad[0]]) + 2} 行目: 特徴量が数値になっていません")
    order = np.argsort(frame["subject_id"].to_numpy(dtype=str), kind="stable")
    return [str(s) for s in frame["subject_id"].to_numpy()[order]], values[order]
