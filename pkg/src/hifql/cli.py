"""HIFQL command-line interface."""

import argparse
import logging
import sys
from pathlib import Path

from hifql import __version__
from hifql.errors import HifqlError


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from e


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from e


def cmd_gen_data(args):
    """Collect a scripted dataset on a registered maze."""
    from hifql import maze_registry
    from hifql.dataset import collect, save_dataset

    if maze_registry.get_maze(args.env) is None:
        print(f"Error: Maze '{args.env}' not found in registry.")
        sys.exit(1)
    env = maze_registry.make_env(args.env, d_pad=args.d_pad)
    ds = collect(env, args.script, args.episodes, args.horizon, args.seed, noise=args.noise)
    path = save_dataset(ds, args.out)
    print(f"Wrote {len(ds.trajectories)} trajectories ({ds.num_transitions} transitions) "
          f"to {path}")


def cmd_make_task(args):
    """Write an evaluation task of random reachable (start, goal) pairs."""
    from hifql import maze_registry
    from hifql.evaluation import make_task, save_task

    if maze_registry.get_maze(args.env) is None:
        print(f"Error: Maze '{args.env}' not found in registry.")
        sys.exit(1)
    task = make_task(args.env, args.pairs, args.horizon, args.episodes, args.seed,
                     args.min_distance, args.d_pad)
    path = save_task(task, args.out)
    print(f"Wrote task with {len(task.pairs)} pairs to {path}")


def cmd_mazes_list(args):
    """List all registered mazes."""
    from hifql import maze_registry

    mazes = maze_registry.list_mazes()
    if not mazes:
        print("No mazes registered.")
        return

    print(f"{'Name':<12} {'Size':<8} {'k':<4} {'Description'}")
    print(f"{'-' * 12} {'-' * 8} {'-' * 4} {'-' * 30}")
    for name, config in mazes:
        layout = config.get("layout", [])
        size = f"{len(layout)}x{len(layout[0]) if layout else 0}"
        print(f"{name:<12} {size:<8} {config.get('subgoal_k', ''):<4} "
              f"{config.get('description', '')}")


def _load_cfg(args):
    from hifql.config import load_config

    cfg = load_config(args.config)
    changes = {}
    for key in ("steps", "dataset", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "out", None):
        changes["out_dir"] = str(args.out)
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args):
    """Train one configuration, optionally resuming from a checkpoint."""
    from hifql.trainer import train

    cfg = _load_cfg(args)
    ckpt = train(cfg, resume=args.resume, progress=not args.no_progress)
    print(f"Checkpoint: {ckpt}")


def cmd_eval(args):
    """Evaluate a checkpoint on a task file over one or more seeds."""
    import numpy as np

    from hifql import evaluation
    from hifql.trainer import METRICS_FILE, load_checkpoint

    if not Path(args.ckpt).exists():
        print(f"Error: Checkpoint not found: {args.ckpt}")
        sys.exit(1)
    state = load_checkpoint(args.ckpt)
    if args.refresh:
        state.cfg = state.cfg.replace(subgoal_refresh=args.refresh)
    task = evaluation.load_task(args.task)
    print(f"Evaluating {state.cfg.algorithm} (step {state.step}) on {len(task.pairs)} pairs "
          f"of '{task.env}'")

    calls_before = evaluation.policy_calls(state)
    per_seed = [evaluation.rollout(state, task, seed) for seed in args.seeds]
    summary = evaluation.summarize(per_seed)
    calls = evaluation.policy_calls(state) - calls_before

    drift = evaluation.drift_on_dataset(state, state.cfg.dataset, np.random.default_rng(0))
    if drift is not None:
        summary.metadata["subgoal_drift"] = drift
        print(f"Subgoal drift on held-out batch: {drift:.4f}")
    summary.metadata["policy_calls"] = calls
    summary.metadata["subgoal_refresh"] = state.cfg.subgoal_refresh

    # the run directory sits two levels above checkpoints/step_XXXXXX
    metrics_path = Path(args.ckpt).resolve().parent.parent / METRICS_FILE
    evaluation.write_eval_reports(per_seed, summary, task, args.out, metrics_path)
    if args.scatter and state.high is not None:
        evaluation.write_subgoal_scatter(state, task, args.out)
    evaluation.format_report(summary)
    print(f"Reports written to {args.out}")


def _task_for(args, cfg):
    from hifql.evaluation import load_task, make_task

    if args.task:
        return load_task(args.task)
    return make_task(cfg.env, num_pairs=10, horizon=200, seed=0, d_pad=cfg.d_pad)


def cmd_ablate_lambda(args):
    """Train and evaluate every (lambda, seed) pair of a base config."""
    from hifql.config import load_config
    from hifql.evaluation import ablate_lambda
    from hifql.reports import read_csv

    cfg = load_config(args.config)
    task = _task_for(args, cfg)
    csv_path, svg_path = ablate_lambda(cfg, args.lambdas, args.seeds, task, args.out)

    print(f"\n{'Lambda':<10} {'Seed':>6} {'Success':>10}")
    print(f"{'-' * 10} {'-' * 6} {'-' * 10}")
    for row in read_csv(csv_path):
        print(f"{float(row['lam']):<10g} {row['seed']:>6} {float(row['success_rate']):>10.3f}")
    print(f"\nAblation table: {csv_path}")
    print(f"Ablation plot:  {svg_path}")


def cmd_compare(args):
    """Train and evaluate several configs on one task; the first config is the reference."""
    from hifql.config import load_config
    from hifql.evaluation import compare, format_report, load_task

    paths = [p for p in args.configs.split(",") if p.strip()]
    cfgs = [load_config(p) for p in paths]
    task = load_task(args.task)
    labels = [Path(p).stem for p in paths]
    csv_path, svg_path, summaries, gaps = compare(cfgs, task, args.seeds, args.out, labels)

    for i, (s, gap) in enumerate(zip(summaries, gaps)):
        seeds = ", ".join(f"{seed}: {rate:.2f}" for seed, rate in
                          zip(s.metadata["seeds"], s.per_seed))
        print(f"  {s.label} per seed ({seeds})")
        format_report(s, gap if i else None)
    print(f"\nComparison table: {csv_path}")
    print(f"Comparison plot:  {svg_path}")


def cmd_toy(args):
    """One-step mean-flow vs multi-step flow matching on the 8-Gaussian ring."""
    from hifql.toys import ToyConfig, run_toy

    cfg = ToyConfig(steps=args.steps, seed=args.seed)
    result = run_toy(cfg, n=args.samples, out_dir=args.out, progress=True)
    for key, value in result.items():
        print(f"{key:<22} {value:.4f}")


def cmd_selftest(args):
    """Run the fast oracle suite."""
    from hifql.selftest import run_selftest

    misses = run_selftest()
    if misses:
        sys.exit(1)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hifql",
        description="HIFQL: offline goal-conditioned RL with one-step mean-flow policies",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    subparsers = parser.add_subparsers(dest="command")

    # gen-data
    sp_gen = subparsers.add_parser("gen-data", help="Collect a scripted maze dataset")
    sp_gen.add_argument("--env", default="small", help="Registered maze name")
    sp_gen.add_argument("--script", default="waypoint-noisy",
                        choices=["waypoint-noisy", "random-walk"])
    sp_gen.add_argument("--episodes", type=int, default=500)
    sp_gen.add_argument("--horizon", type=int, default=200)
    sp_gen.add_argument("--seed", type=int, default=0)
    sp_gen.add_argument("--noise", type=float, default=0.3, help="Uniform action noise")
    sp_gen.add_argument("--d-pad", type=int, default=0, help="Zero padding of observations")
    sp_gen.add_argument("--out", required=True, help="Output dataset path")
    sp_gen.set_defaults(func=cmd_gen_data)

    # make-task
    sp_task = subparsers.add_parser("make-task", help="Write an evaluation task file")
    sp_task.add_argument("--env", default="small")
    sp_task.add_argument("--pairs", type=int, default=10)
    sp_task.add_argument("--horizon", type=int, default=200)
    sp_task.add_argument("--episodes", type=int, default=1)
    sp_task.add_argument("--seed", type=int, default=0)
    sp_task.add_argument("--min-distance", type=int, default=4, help="Minimum BFS distance")
    sp_task.add_argument("--d-pad", type=int, default=0)
    sp_task.add_argument("--out", required=True)
    sp_task.set_defaults(func=cmd_make_task)

    # mazes
    sp_mazes = subparsers.add_parser("mazes", help="Inspect the maze registry")
    mazes_sub = sp_mazes.add_subparsers(dest="mazes_command")
    sp_mazes_list = mazes_sub.add_parser("list", help="List registered mazes")
    sp_mazes_list.set_defaults(func=cmd_mazes_list)

    # train
    sp_train = subparsers.add_parser("train", help="Train from a config file")
    sp_train.add_argument("--config", required=True)
    sp_train.add_argument("--dataset", help="Override the config's dataset path")
    sp_train.add_argument("--steps", type=int, help="Override the number of steps")
    sp_train.add_argument("--seed", type=int, help="Override the seed")
    sp_train.add_argument("--out", help="Override the output directory")
    sp_train.add_argument("--resume", help="Checkpoint directory to resume from")
    sp_train.add_argument("--no-progress", action="store_true", help="Hide the progress bar")
    sp_train.set_defaults(func=cmd_train)

    # eval
    sp_eval = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    sp_eval.add_argument("--ckpt", required=True)
    sp_eval.add_argument("--task", required=True)
    sp_eval.add_argument("--seeds", type=_int_list, default=[0])
    sp_eval.add_argument("--out", required=True)
    sp_eval.add_argument("--refresh", choices=["every-step", "every-k"],
                         help="Override the subgoal refresh schedule")
    sp_eval.add_argument("--scatter", action="store_true", help="Write a subgoal scatter SVG")
    sp_eval.set_defaults(func=cmd_eval)

    # ablate-lambda
    sp_abl = subparsers.add_parser("ablate-lambda", help="Sweep the representation weight")
    sp_abl.add_argument("--config", required=True)
    sp_abl.add_argument("--lambdas", type=_float_list, default=[0.0, 0.05, 0.1, 0.5])
    sp_abl.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    sp_abl.add_argument("--task", help="Task file (default: 10 random pairs on the config's maze)")
    sp_abl.add_argument("--out", required=True)
    sp_abl.set_defaults(func=cmd_ablate_lambda)

    # compare
    sp_cmp = subparsers.add_parser("compare", help="Compare configs on one task")
    sp_cmp.add_argument("--configs", required=True, help="Comma-separated config paths")
    sp_cmp.add_argument("--task", required=True)
    sp_cmp.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    sp_cmp.add_argument("--out", required=True)
    sp_cmp.set_defaults(func=cmd_compare)

    # toy
    sp_toy = subparsers.add_parser("toy", help="8-Gaussian one-step generation check")
    sp_toy.add_argument("--steps", type=int, default=20_000)
    sp_toy.add_argument("--samples", type=int, default=2000)
    sp_toy.add_argument("--seed", type=int, default=0)
    sp_toy.add_argument("--out", help="Directory for the sample scatter")
    sp_toy.set_defaults(func=cmd_toy)

    # selftest
    sp_self = subparsers.add_parser("selftest", help="Run the oracle/invariant suite")
    sp_self.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        sys.exit(1)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (HifqlError, FileNotFoundError) as e:
        print(f"Error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
