#!/usr/bin/env python3
"""Sweep the tail-loss weight for the biased dual-head mode.

Example:
    python3 scripts/sweep_lambda.py --out runs/sweep --lambdas 0,0.5,1,2,4 --seeds 1,2,3
"""

import argparse
from dataclasses import replace

from dualdet import ExperimentConfig, cmd_sweep_lambda, load_config

DEFAULT_LAMBDAS = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="experiment config JSON (optional)")
    parser.add_argument("--dataset", help="pregenerated dataset JSONL (optional)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--lambdas",
        default=",".join(str(v) for v in DEFAULT_LAMBDAS),
        help="comma-separated tail-loss weights",
    )
    parser.add_argument("--seeds", default=None, help="comma-separated seeds")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        config = replace(config, train=replace(config.train, seeds=seeds))
    lambdas = [float(v) for v in args.lambdas.split(",")]

    rows = cmd_sweep_lambda(config, args.dataset, lambdas, args.out, jobs=args.jobs)
    print(f"{'lambda':>7}  {'AP':>8}  {'tail AP':>8}  {'head AP':>8}")
    for row in rows:
        print(
            f"{float(row['lambda']):>7.2f}  {float(row['ap_mean']):>8.4f}  "
            f"{float(row['tail_group_ap_mean']):>8.4f}  {float(row['head_group_ap_mean']):>8.4f}"
        )
    print(f"full table: {args.out}/lambda_sweep.csv")


if __name__ == "__main__":
    main()
