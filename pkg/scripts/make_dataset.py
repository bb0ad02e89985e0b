#!/usr/bin/env python3
"""Generate the synthetic long-tail scene dataset and write it as JSONL.

Example:
    python3 scripts/make_dataset.py --out data/scenes.jsonl --num-scenes 618
"""

import argparse

from dualdet import ExperimentConfig, SceneConfig, cmd_generate


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output JSONL path")
    parser.add_argument("--num-scenes", type=int, default=SceneConfig().num_scenes)
    parser.add_argument("--seed", type=int, default=SceneConfig().seed)
    args = parser.parse_args()

    config = ExperimentConfig(
        dataset=SceneConfig(num_scenes=args.num_scenes, seed=args.seed)
    )
    written = cmd_generate(config, args.out)
    print(f"wrote {written} scenes to {args.out}")


if __name__ == "__main__":
    main()
