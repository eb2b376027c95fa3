#!/usr/bin/env python3
"""Generate the datasets and task files the configs in configs/ point at.

This script:
1. Collects 500 waypoint-noisy episodes of 200 steps (100k transitions) per maze
2. Writes a zero-padded variant of the fork data for the lambda ablation
3. Writes 10-pair evaluation tasks for the small and fork mazes

Usage:
    python scripts/prepare_data.py
    python scripts/prepare_data.py --episodes 100 --seed 1
"""

import argparse
from pathlib import Path

from hifql.dataset import collect, save_dataset
from hifql.evaluation import make_task, save_task
from hifql.maze_registry import make_env

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATASETS = (
    ("small", "small", 0),
    ("fork", "fork", 0),
    ("fork_pad", "fork", 16),
)


def main():
    parser = argparse.ArgumentParser(description="Generate maze datasets and task files")
    parser.add_argument("--episodes", type=int, default=500)
    parser.add_argument("--horizon", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=PROJECT_ROOT / "data")
    args = parser.parse_args()

    for name, maze, d_pad in DATASETS:
        env = make_env(maze, d_pad=d_pad)
        ds = collect(env, "waypoint-noisy", args.episodes, args.horizon, args.seed)
        path = save_dataset(ds, args.out / f"{name}.bin")
        print(f"{name}: {ds.num_transitions} transitions -> {path}")

    for maze, d_pad, suffix in (("small", 0, ""), ("fork", 0, ""), ("fork", 16, "_pad")):
        task = make_task(maze, num_pairs=10, horizon=200, seed=args.seed, d_pad=d_pad)
        path = save_task(task, args.out / f"task_{maze}{suffix}.json")
        print(f"task {maze}{suffix}: {len(task.pairs)} pairs -> {path}")


if __name__ == "__main__":
    main()
