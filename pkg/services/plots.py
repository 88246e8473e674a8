# services/plots.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from app.errors import InputValidationError  # noqa: E402
from models.training_models import LOSS_LOG_COLUMNS  # noqa: E402

logger = logging.getLogger(__name__)

# 図ごとに描く損失列
PLOT_GROUPS: Dict[str, Tuple[str, ...]] = {
    "discriminator": ("L_D", "L_adv", "L_gdc", "L_gp"),
    "generator": ("L_G", "L_wass_G", "L_top", "L_rec", "L_inf"),
    "topology": ("L_top", "L_loc", "L_glb"),
}


def read_loss_log(path: Union[str, Path]) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise InputValidationError(f"損失ログが見つかりません: {p}")
    frame = pd.read_csv(p, float_precision="round_trip")
    if tuple(frame.columns) != LOSS_LOG_COLUMNS:
        raise InputValidationError(f"損失ログのヘッダが不正です: {p}")
    return frame


def plot_loss_curves(loss_log: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """損失ログから SVG の学習曲線を書き出す（同じ入力なら同じバイト列）。"""
    frame = read_loss_log(loss_log)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written: List[Path] = []
    with plt.rc_context({"svg.hashsalt": "multigraphgan", "svg.fonttype": "none"}):
        for name, columns in PLOT_GROUPS.items():
            fig, ax = plt.subplots(figsize=(7, 4))
            for col in columns:
                ax.plot(frame["iteration"], frame[col], label=col, linewidth=1.0)
            ax.set_xlabel("iteration")
            ax.set_ylabel("loss")
            ax.set_title(name)
            ax.legend(loc="best", fontsize="small")
            fig.tight_layout()
            path = out / f"{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)

    logger.info("[plots] wrote figures=%d dir=%s", len(written), out)
    return written
