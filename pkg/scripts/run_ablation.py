#!/usr/bin/env python3
"""Run the full eight-mode ablation grid and print the aggregate table.

Trains every sampler/head mode over the requested seeds, writes per-run
reports, detections, and an ablation.csv into --out, then prints the mean
overall and tail-group AP per mode.

Example:
    python3 scripts/run_ablation.py --out runs/ablation --seeds 1,2,3,4,5 --jobs 4
"""

import argparse
import csv
from dataclasses import replace

from dualdet import ExperimentConfig, cmd_ablate, load_config


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="experiment config JSON (optional)")
    parser.add_argument("--dataset", help="pregenerated dataset JSONL (optional)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seeds", default=None, help="comma-separated seeds")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        config = replace(config, train=replace(config.train, seeds=seeds))

    cmd_ablate(config, args.dataset, args.out, jobs=args.jobs)

    with open(f"{args.out}/ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    width = max(len(r["mode"]) for r in rows)
    print(f"{'mode':<{width}}  {'AP':>8}  {'tail AP':>8}  {'head AP':>8}")
    for row in rows:
        print(
            f"{row['mode']:<{width}}  {float(row['ap_mean']):>8.4f}  "
            f"{float(row['tail_group_ap_mean']):>8.4f}  {float(row['head_group_ap_mean']):>8.4f}"
        )
    print(f"full table: {args.out}/ablation.csv")


if __name__ == "__main__":
    main()
