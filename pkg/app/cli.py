# app/cli.py
"""
コマンドライン入口。

    python -m app.cli synth    --out DIR --n 40 --r 8 --m 2 --modes 2 --seed 7
    python -m app.cli train    --data DIR --config FILE --out DIR [--dump-similarity]
    python -m app.cli predict  --model FILE --source CSV --out CSV
    python -m app.cli evaluate --model FILE --data DIR --out report
    python -m app.cli report   --losslog CSV --out DIR
    python -m app.cli run      --data DIR [--config FILE] --out DIR
    python -m app.cli compare  --data DIR [--config FILE] --out DIR [--variants a,b]

終了コード: 0 成功 / 1 入力・設定エラー / 2 数値エラー。
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from agents.clustering_agent import dump_similarity
from agents.comparison_agent import parse_variants
from agents.evaluator_agent import evaluate_checkpoint, render_text, write_report
from agents.population_agent import build_synthetic_population, load_population_dir, split_population, write_split
from agents.predictor_agent import predict_file
from agents.trainer_agent import train
from app.config import config_digest, load_run_config, render_run_config, settings, setup_logging
from app.errors import MultiGraphGANError
from app.graph.lg_workflow import run_pipeline
from services.checkpoint import load_checkpoint
from services.plots import plot_loss_curves

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """usage エラーも終了コード 1（2 は数値エラー用）。"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _echo(title: str, body: str) -> None:
    print(f"# {title}")
    print(body)
    print()


def _echo_config(config_path: Optional[str]):
    config, weights = load_run_config(config_path)
    digest = config_digest(config, weights)
    _echo("resolved config", f"{render_run_config(config, weights)}\nconfig_digest={digest}")
    return config, weights, digest


# ---------- synth ----------


def cmd_synth(args: argparse.Namespace) -> int:
    r = args.r if args.r is not None else settings.default_regions
    seed = args.seed if args.seed is not None else settings.default_seed
    _echo(
        "resolved config",
        f"n={args.n}\nr={r}\nm={args.m}\nmodes={args.modes}\nnoise={args.noise}\nseed={seed}",
    )
    _, summary = build_synthetic_population(
        seed=seed, n=args.n, r=r, m=args.m, n_modes=args.modes, noise_level=args.noise, out_dir=args.out
    )
    print(f"wrote {summary.path} (n={summary.n} f={summary.f} domains={','.join(summary.domains)})")
    return 0


# ---------- train ----------


def cmd_train(args: argparse.Namespace) -> int:
    config, weights, digest = _echo_config(args.config)
    out = Path(args.out)
    pop = load_population_dir(args.data)
    train_pop, test_pop = split_population(pop, config.train_fraction, config.seed)
    write_split(train_pop, test_pop, out)

    state = train(train_pop, config, weights, test_subjects=test_pop.subjects, out_dir=out, config_digest=digest)
    if args.dump_similarity:
        dump_similarity(state.population, state.assignment, out)
    print(f"wrote {out / 'model.ckpt'} (iterations={state.iteration})")
    print(f"wrote {out / 'loss_log.csv'}")
    return 0


# ---------- predict ----------


def cmd_predict(args: argparse.Namespace) -> int:
    _, manifest = load_checkpoint(args.model)
    _echo("checkpoint", f"r={manifest.r}\nm={manifest.m}\nc={manifest.c}\nconfig_digest={manifest.config_digest}")
    path = predict_file(args.model, args.source, args.out)
    print(f"wrote {path}")
    return 0


# ---------- evaluate ----------


def cmd_evaluate(args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else settings.eval_workers
    report = evaluate_checkpoint(args.model, args.data, workers)
    txt, csv = write_report(report, args.out)
    print(render_text(report), end="")
    print(f"wrote {txt}\nwrote {csv}")
    return 0


# ---------- report ----------


def cmd_report(args: argparse.Namespace) -> int:
    for path in plot_loss_curves(args.losslog, args.out):
        print(f"wrote {path}")
    return 0


# ---------- run / compare ----------


def cmd_run(args: argparse.Namespace) -> int:
    _echo_config(args.config)
    out = args.out or str(Path(settings.runs_dir) / "latest")
    state = run_pipeline(
        data_dir=args.data,
        out_dir=out,
        config_path=args.config,
        mode="run",
        dump_similarity=args.dump_similarity,
        workers=settings.eval_workers,
    )
    print(render_text(state["report"]), end="")
    for line in state.get("progress_messages", []):
        logger.debug(line)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    variants = parse_variants(args.variants)
    _echo_config(args.config)
    out = args.out or str(Path(settings.runs_dir) / "compare")
    state = run_pipeline(
        data_dir=args.data,
        out_dir=out,
        config_path=args.config,
        mode="compare",
        variants=variants,
        workers=settings.eval_workers,
    )
    print(Path(state["outputs"]["comparison_txt"]).read_text(encoding="utf-8"), end="")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "run": cmd_run,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multigraphgan", description="多ドメイン脳グラフ予測パイプライン")
    parser.add_argument("--log-level", default=None, help="ログレベル（既定は MGGAN_LOG_LEVEL）")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="合成集団を生成する")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--modes", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="学習してチェックポイントと損失ログを書く")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-similarity", action="store_true")

    p = sub.add_parser("predict", help="ソース行からターゲットを予測する")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="チェックポイントを評価する")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("report", help="損失ログから学習曲線 SVG を書く")
    p.add_argument("--losslog", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="load → split → train → evaluate を通しで実行する")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--dump-similarity", action="store_true")

    p = sub.add_parser("compare", help="ベースラインと中心性別の手法を比較する")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--variants", default=None, help="カンマ区切り（省略時は全手法）")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        setup_logging(args.log_level)
        return COMMANDS[args.command](args)
    except MultiGraphGANError as exc:
        logger.error("[cli] command=%s error=%s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        logger.error("[cli] command=%s validation_error=%s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
