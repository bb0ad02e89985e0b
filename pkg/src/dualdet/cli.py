"""Command-line front end.

Subcommands: generate, run, ablate, sweep-lambda, evaluate. Exit code 0 on
success, 2 for configuration problems, 3 for data problems. When --out is
absent the DUALDET_OUT environment variable is honored, then ./runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .experiment import (
    ConfigError,
    DataError,
    ExperimentConfig,
    cmd_ablate,
    cmd_evaluate,
    cmd_generate,
    cmd_run,
    cmd_sweep_lambda,
    load_config,
    resolve_out_dir,
)
from .heads import ALL_MODES

DEFAULT_SWEEP = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects a comma-separated integer list, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds list is empty")
    return seeds


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "mode", None):
        config = replace(config, mode=args.mode)
    if getattr(args, "seeds", None):
        config = replace(config, train=replace(config.train, seeds=_parse_seeds(args.seeds)))
    lam = getattr(args, "lam", None)
    if lam is not None and not isinstance(lam, list):
        if lam < 0:
            raise ConfigError(f"--lambda must be >= 0, got {lam}")
        config = replace(config, train=replace(config.train, lambda_tail=lam))
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualdet",
        description="Long-tail detection-head laboratory: synthetic scenes, "
        "biased proposal sampling, dual box heads, COCO-style scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, dataset: bool = True) -> None:
        p.add_argument("--config", metavar="PATH", default=None, help="JSON experiment config")
        p.add_argument("--out", metavar="DIR", default=None, help="output directory")
        if dataset:
            p.add_argument("--dataset", metavar="PATH", default=None, help="dataset file")
            p.add_argument("--seeds", metavar="CSV", default=None, help="e.g. 1,2,3")
            p.add_argument("--jobs", metavar="N", type=int, default=1, help="parallel runs")

    p_gen = sub.add_parser("generate", help="write a synthetic dataset file")
    common(p_gen, dataset=False)

    p_run = sub.add_parser("run", help="train and evaluate one mode over the seed list")
    common(p_run)
    p_run.add_argument("--mode", metavar="NAME", default=None, choices=sorted(ALL_MODES))
    p_run.add_argument(
        "--lambda", metavar="FLOAT", dest="lam", type=float, default=None,
        help="tail-loss weight for dual-head modes",
    )

    p_abl = sub.add_parser("ablate", help="run the fixed sampler/head mode grid")
    common(p_abl)

    p_sweep = sub.add_parser("sweep-lambda", help="sweep the tail-loss weight")
    common(p_sweep)
    p_sweep.add_argument(
        "--lambda", metavar="FLOAT", dest="lam", type=float, action="append", default=None,
        help="sweep value; repeatable (default: 0.5 1 2 3 4 5 6)",
    )

    p_eval = sub.add_parser("evaluate", help="re-score an existing detections file")
    common(p_eval)
    p_eval.add_argument("detections", metavar="PATH", help="detections file to score")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = resolve_out_dir(args.out)
    if args.command == "generate":
        path = os.path.join(out_dir, "dataset.jsonl")
        count = cmd_generate(config, path)
        print(f"wrote {count} scenes to {path}")
        return 0
    if args.command == "run":
        results = cmd_run(config, args.dataset, out_dir, args.jobs)
        for (mode, seed), result in sorted(results.items()):
            m = result.report
            print(
                f"{mode} seed={seed} AP={m.ap:.4f} AP50={m.ap50:.4f} "
                f"head={m.head_group_ap:.4f} tail={m.tail_group_ap:.4f}"
            )
        return 0
    if args.command == "ablate":
        results = cmd_ablate(config, args.dataset, out_dir, args.jobs)
        print(f"wrote ablation over {len(results)} runs to {out_dir}")
        return 0
    if args.command == "sweep-lambda":
        lambdas = list(args.lam) if args.lam else list(DEFAULT_SWEEP)
        rows = cmd_sweep_lambda(config, args.dataset, lambdas, out_dir, args.jobs)
        for row in rows:
            print(
                f"lambda={row['lambda']} AP={row['ap_mean']} "
                f"tail={row['tail_group_ap_mean']} head={row['head_group_ap_mean']}"
            )
        return 0
    if args.command == "evaluate":
        report = cmd_evaluate(config, args.dataset, args.detections, out_dir)
        print(
            f"AP={report.ap:.4f} AP50={report.ap50:.4f} AP75={report.ap75:.4f} "
            f"head={report.head_group_ap:.4f} tail={report.tail_group_ap:.4f}"
        )
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
