#!/usr/bin/env python3
"""Run the long end-to-end experiments and print a pass/fail line for each.

Run scripts/prepare_data.py first. Each experiment trains several seeds, so
expect this to take hours on a CPU.

Usage:
    python scripts/run_acceptance.py
    python scripts/run_acceptance.py --only toy --out runs/acceptance
"""

import argparse
from pathlib import Path

from hifql.config import load_config
from hifql.evaluation import ablate_lambda, compare, load_task
from hifql.reports import read_csv
from hifql.toys import run_toy

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIGS = PROJECT_ROOT / "configs"
DATA = PROJECT_ROOT / "data"
SEEDS = (0, 1, 2)


def _report(name, ok, detail):
    print(f"  {'OK' if ok else 'MISS'} {name} ({detail})")
    return ok


def run_toy_check(out):
    result = run_toy(out_dir=out / "toy", progress=True)
    return _report(
        "one-step generation",
        result["one_step_vs_oracle"] < 0.1 and result["one_step_vs_target"] < 0.15,
        ", ".join(f"{k}={v:.3f}" for k, v in result.items()),
    )


def _gap_check(name, cfgs, task, out, labels, holds):
    """Compare two configs; ``holds(mean, gap)`` decides on the reference mean and its lead."""
    csv_path, _, _, _ = compare(cfgs, task, SEEDS, out, labels)
    reference, other = read_csv(csv_path)
    mean, lead, stderr = float(reference["mean"]), -float(other["gap"]), float(other["gap_stderr"])
    return _report(name, holds(mean, lead),
                   f"{labels[0]} {mean:.2f}, {labels[1]} {float(other['mean']):.2f}, "
                   f"gap {lead:+.3f} +/- {stderr:.3f}")


def run_small_check(out):
    cfgs = [load_config(CONFIGS / "small_hifql.json"), load_config(CONFIGS / "small_gcbc.json")]
    return _gap_check("small maze", cfgs, load_task(DATA / "task_small.json"), out / "small",
                      ["hifql", "gcbc"], lambda mean, lead: mean >= 0.8 and lead >= 0.15)


def run_fork_check(out):
    cfgs = [load_config(CONFIGS / "fork_hifql.json"),
            load_config(CONFIGS / "fork_hiql_gaussian.json")]
    return _gap_check("fork multimodality", cfgs, load_task(DATA / "task_fork.json"),
                      out / "fork", ["hifql", "hiql-gaussian"], lambda mean, lead: lead >= 0)


def run_lambda_check(out):
    base = load_config(CONFIGS / "fork_pad_hifql.json")
    csv_path, _ = ablate_lambda(base, [0.0, 0.1], SEEDS, load_task(DATA / "task_fork_pad.json"),
                                out / "ablation")
    rows = read_csv(csv_path)
    mean = {}
    for lam in (0.0, 0.1):
        rates = [float(r["success_rate"]) for r in rows if float(r["lam"]) == lam]
        mean[lam] = sum(rates) / len(rates)
    return _report("lambda ablation", mean[0.1] > mean[0.0],
                   f"lambda=0.1 {mean[0.1]:.2f}, lambda=0 {mean[0.0]:.2f}")


CHECKS = {"toy": run_toy_check, "small": run_small_check, "fork": run_fork_check,
          "lambda": run_lambda_check}


def main():
    parser = argparse.ArgumentParser(description="Run the end-to-end acceptance experiments")
    parser.add_argument("--only", choices=sorted(CHECKS), help="Run a single experiment")
    parser.add_argument("--out", type=Path, default=PROJECT_ROOT / "runs" / "acceptance")
    args = parser.parse_args()

    names = [args.only] if args.only else list(CHECKS)
    results = [CHECKS[name](args.out) for name in names]
    print(f"\n{sum(results)}/{len(results)} experiments passed")


if __name__ == "__main__":
    main()
