"""Evaluation harness: one-step hierarchical acting, rollouts, ablations and comparisons."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hifql import autodiff as ad
from hifql import gaussian, maze_registry, reports
from hifql import meanflow as mf
from hifql.autodiff import DTYPE
from hifql.dataset import load_dataset, sample_batch
from hifql.errors import ContractViolation
from hifql.lejepa import encode
from hifql.maze import WaypointController
from hifql.trainer import FLAT_ALGORITHMS, load_checkpoint, read_metrics, train

logger = logging.getLogger(__name__)


# --- tasks ---


@dataclass
class EvalTask:
    env: str
    pairs: list
    horizon: int = 200
    episodes: int = 1
    epsilon: float | None = None
    d_pad: int = 0

    def make_env(self):
        env = maze_registry.make_env(self.env, d_pad=self.d_pad)
        if self.epsilon is not None:
            env.epsilon = float(self.epsilon)
        return env

    def validate(self):
        if self.horizon < 1 or self.episodes < 1:
            raise ContractViolation("task horizon and episodes must be >= 1")
        if not self.pairs:
            raise ContractViolation("task has no (start, goal) pairs")
        env = self.make_env()
        for start, goal in self.pairs:
            for cell in (start, goal):
                if not env.is_free_cell(tuple(cell)):
                    raise ContractViolation(f"task cell {list(cell)} is not free in '{self.env}'")
        return self

    def to_dict(self):
        return {"env": self.env, "pairs": [[list(s), list(g)] for s, g in self.pairs],
                "horizon": self.horizon, "episodes": self.episodes, "epsilon": self.epsilon,
                "d_pad": self.d_pad}


def load_task(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Task file not found: {path}")
    with open(path) as f:
        data = json.load(f)
    pairs = [(tuple(s), tuple(g)) for s, g in data["pairs"]]
    return EvalTask(data["env"], pairs, int(data.get("horizon", 200)),
                    int(data.get("episodes", 1)), data.get("epsilon"),
                    int(data.get("d_pad", 0))).validate()


def save_task(task, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(task.to_dict(), f, indent=2)
        f.write("\n")
    return path


def make_task(env_name, num_pairs=10, horizon=200, episodes=1, seed=0, min_distance=4,
              d_pad=0):
    """Random reachable (start, goal) cell pairs at least ``min_distance`` BFS steps apart."""
    env = maze_registry.make_env(env_name, d_pad=d_pad)
    rng = np.random.default_rng(seed)
    free = env.free_cells()
    pairs = []
    for _ in range(1000 * num_pairs):
        if len(pairs) == num_pairs:
            break
        start = free[rng.integers(len(free))]
        goal = free[rng.integers(len(free))]
        path = env.bfs_path(start, goal)
        if path is not None and len(path) - 1 >= min_distance:
            pairs.append((start, goal))
    if len(pairs) < num_pairs:
        raise ContractViolation(
            f"'{env_name}' has too few cell pairs at distance >= {min_distance}"
        )
    return EvalTask(env_name, pairs, horizon, episodes, env.epsilon, d_pad).validate()


# --- acting ---


def _goal_block(state, s, g):
    return mf.high_goal(state.encoder, s, g, state.cfg.high_goal_input)


def propose_subgoal(state, s, g, rng):
    """x0_h from the high policy: one network pass (or ``ode_steps`` for fm-multistep)."""
    goal = _goal_block(state, s, g)
    if state.cfg.algorithm == "hifql":
        return mf.one_step_sample(state.high, s, goal, rng)
    if state.cfg.algorithm == "fm-multistep":
        return mf.ode_sample(mf.VelocityField(state.high), s, goal, state.cfg.ode_steps, rng)
    return gaussian.act_mean(state.high, np.concatenate([np.atleast_2d(s), goal], axis=-1))


def low_action(state, s, subgoal, rng):
    if state.cfg.algorithm == "hifql":
        return mf.one_step_sample(state.low, s, subgoal, rng)
    if state.cfg.algorithm == "fm-multistep":
        return mf.ode_sample(mf.VelocityField(state.low), s, subgoal, state.cfg.ode_steps, rng)
    cond = np.concatenate([np.atleast_2d(s), np.atleast_2d(subgoal)], axis=-1)
    return gaussian.act_mean(state.low, cond)


def act(state, s, g, rng):
    """a for observation ``s`` and goal ``g``; HIFQL uses exactly two policy passes."""
    s = np.atleast_2d(np.asarray(s, dtype=DTYPE))
    g = np.atleast_2d(np.asarray(g, dtype=DTYPE))
    if state.cfg.algorithm in FLAT_ALGORITHMS:
        return gaussian.act_mean(state.low, np.concatenate([s, g], axis=-1))[0]
    return low_action(state, s, propose_subgoal(state, s, g, rng), rng)[0]


def policy_calls(state):
    return sum(p.forward_calls for p in (state.high, state.low) if p is not None)


class Actor:
    """Stateful wrapper around ``act`` that can hold a subgoal for k steps."""

    def __init__(self, state, refresh=None):
        self.state = state
        self.refresh = refresh or state.cfg.subgoal_refresh
        self.reset()

    def reset(self):
        self._subgoal = None
        self._age = 0

    def __call__(self, s, g, rng):
        state = self.state
        if self.refresh == "every-step" or state.cfg.algorithm in FLAT_ALGORITHMS:
            return act(state, s, g, rng)
        s = np.atleast_2d(np.asarray(s, dtype=DTYPE))
        if self._subgoal is None or self._age >= state.subgoal_k:
            self._subgoal = propose_subgoal(state, s, np.atleast_2d(g), rng)
            self._age = 0
        self._age += 1
        return low_action(state, s, self._subgoal, rng)[0]


class ScriptedActor:
    """The data-collection waypoint controller, noise-free, behind the actor interface."""

    def __init__(self, env):
        self.env = env
        self.reset()

    def reset(self):
        self._controller = None

    def __call__(self, s, g, rng):
        goal = np.asarray(g)[:2]
        if self._controller is None or not np.array_equal(self._controller.goal, goal):
            self._controller = WaypointController(self.env, goal)
        return self._controller(np.asarray(s)[:2])


# --- rollouts ---


@dataclass
class EvalReport:
    label: str
    per_pair: list
    success_rate: float
    std: float = 0.0
    per_seed: list = field(default_factory=list)
    successes: int = 0
    episodes: int = 0
    mean_length: float | None = None
    seconds_per_action: float = 0.0
    metadata: dict = field(default_factory=dict)


def rollout(actor_or_state, task, seed, label=None):
    """Run every (pair, episode) of ``task`` once; terminate on success."""
    env = task.make_env()
    actor = actor_or_state
    if not callable(actor):
        actor = Actor(actor_or_state)
    if label is None:
        label = getattr(getattr(actor, "state", None), "cfg", None)
        label = label.algorithm if label is not None else type(actor).__name__
    rng = np.random.default_rng(seed)

    per_pair, lengths = [], []
    actions, elapsed = 0, 0.0
    for start, goal in task.pairs:
        goal_pos = env.cell_center(tuple(goal))
        goal_obs = env.observe(goal_pos)
        hits = 0
        for _ in range(task.episodes):
            obs = env.reset(env.cell_center(tuple(start)))
            actor.reset()
            if env.reached(env.state, goal_pos):
                hits += 1
                lengths.append(0)
                continue
            for t in range(task.horizon):
                tick = time.perf_counter()
                a = actor(obs, goal_obs, rng)
                elapsed += time.perf_counter() - tick
                actions += 1
                obs = env.step(a)
                if env.reached(env.state, goal_pos):
                    hits += 1
                    lengths.append(t + 1)
                    break
        per_pair.append(hits / task.episodes)

    successes = len(lengths)
    total = len(task.pairs) * task.episodes
    return EvalReport(
        label=label,
        per_pair=per_pair,
        success_rate=successes / total,
        per_seed=[successes / total],
        successes=successes,
        episodes=total,
        mean_length=float(np.mean(lengths)) if lengths else None,
        seconds_per_action=elapsed / actions if actions else 0.0,
        metadata={"terminate_on_success": True, "seed": seed, "horizon": task.horizon},
    )


def summarize(reports_by_seed, label=None):
    """Pool per-seed reports: exact pooled success rate, sample std across seeds."""
    if not reports_by_seed:
        raise ContractViolation("nothing to summarize")
    rates = [r.success_rate for r in reports_by_seed]
    successes = sum(r.successes for r in reports_by_seed)
    episodes = sum(r.episodes for r in reports_by_seed)
    lengths = [r.mean_length for r in reports_by_seed if r.mean_length is not None]
    per_pair = np.mean([r.per_pair for r in reports_by_seed], axis=0).tolist()
    return EvalReport(
        label=label or reports_by_seed[0].label,
        per_pair=per_pair,
        success_rate=successes / episodes,
        std=float(np.std(rates, ddof=1)) if len(rates) > 1 else 0.0,
        per_seed=rates,
        successes=successes,
        episodes=episodes,
        mean_length=float(np.mean(lengths)) if lengths else None,
        seconds_per_action=float(np.mean([r.seconds_per_action for r in reports_by_seed])),
        metadata={"terminate_on_success": True,
                  "seeds": [r.metadata.get("seed") for r in reports_by_seed]},
    )


def evaluate(state, task, seeds, label=None):
    return summarize([rollout(state, task, s, label) for s in seeds], label)


def subgoal_drift(state, batch, rng):
    """Mean ||x0_h - phi(s_h, s_{h+k})|| between generated and encoded subgoals."""
    if state.high is None:
        return None
    generated = propose_subgoal(state, batch.s_h, batch.g, rng)
    with ad.no_grad():
        encoded = encode(state.encoder, batch.s_h, batch.s_sub).values
    return float(np.mean(np.linalg.norm(generated - encoded, axis=-1)))


def drift_on_dataset(state, dataset_path, rng, size=256):
    if not dataset_path or not Path(dataset_path).is_file():
        return None
    ds = load_dataset(dataset_path)
    batch = sample_batch(ds, size, state.subgoal_k, state.cfg.goal_mix, rng, state.cfg.gamma)
    return subgoal_drift(state, batch, rng)


def format_report(report, gap=None):
    """Print a results table for one evaluation, with its gap to a reference if given."""
    print()
    print("=" * 50)
    print(f"  Evaluation Results: {report.label}")
    print("=" * 50)
    print(f"  {'Pair':<8} {'Success':>10}")
    print(f"  {'-' * 8} {'-' * 10}")
    for i, rate in enumerate(report.per_pair):
        print(f"  {i:<8} {rate:>10.2f}")
    print(f"  {'-' * 8} {'-' * 10}")
    print(f"  {'Mean':<8} {report.success_rate:>10.3f} +/- {report.std:.3f}")
    if report.mean_length is not None:
        print(f"  Mean episode length on success: {report.mean_length:.1f}")
    print(f"  Wall-clock per action: {report.seconds_per_action * 1e3:.3f} ms")
    if gap is not None:
        print(f"  Gap vs {gap.reference}: {gap.gap:+.3f} +/- {gap.stderr:.3f} (std err)")
    print("=" * 50)


# --- report files ---


EVAL_COLUMNS = ("label", "seed", "pair", "start", "goal", "success_rate")


def write_eval_reports(per_seed, summary, task, out_dir, metrics_path=None):
    out_dir = Path(out_dir)
    rows = []
    for report in per_seed:
        for i, ((start, goal), rate) in enumerate(zip(task.pairs, report.per_pair)):
            rows.append([report.label, report.metadata["seed"], i, f"{start[0]}:{start[1]}",
                         f"{goal[0]}:{goal[1]}", repr(rate)])
    reports.write_csv(out_dir / "eval.csv", EVAL_COLUMNS, rows)
    reports.write_csv(
        out_dir / "summary.csv",
        ("label", "success_rate", "std", "successes", "episodes", "mean_length"),
        [[summary.label, repr(summary.success_rate), repr(summary.std), summary.successes,
          summary.episodes, "" if summary.mean_length is None else repr(summary.mean_length)]],
    )
    with open(out_dir / "report.json", "w") as f:
        json.dump({k: v for k, v in summary.metadata.items()}, f, indent=2, sort_keys=True)
        f.write("\n")
    if metrics_path is not None and Path(metrics_path).exists():
        rows = read_metrics(metrics_path)
        steps = [r["step"] for r in rows]
        series = {k: (steps, [r[k] for r in rows])
                  for k in ("value_loss", "high_mf_loss", "low_mf_loss")}
        reports.svg_line_chart(out_dir / "learning_curves.svg", series, "Training losses",
                               "step", "loss")
    return out_dir


def write_subgoal_scatter(state, task, out_dir, seed=0, samples=256):
    """Scatter of generated subgoals (first two coordinates) for the first task pair."""
    env = task.make_env()
    rng = np.random.default_rng(seed)
    start, goal = task.pairs[0]
    s = np.repeat(env.observe(env.cell_center(tuple(start)))[None], samples, axis=0)
    g = np.repeat(env.observe(env.cell_center(tuple(goal)))[None], samples, axis=0)
    sub = propose_subgoal(state, s, g, rng)
    return reports.svg_scatter(Path(out_dir) / "subgoals.svg",
                               {"subgoal": sub[:, :2].tolist()},
                               f"Subgoal samples ({state.cfg.algorithm})")


# --- experiment harnesses ---


def _train_and_eval(cfg, task, seed, label):
    ckpt = train(cfg, progress=False)
    state = load_checkpoint(ckpt)
    report = rollout(state, task, seed, label)
    metrics = list(state.metrics)
    return report, (metrics[-1] if metrics else {})


def ablate_lambda(base_cfg, lambdas, seeds, task, out_dir):
    """Train and evaluate every (lambda, seed); write ablation.csv and ablation.svg."""
    if not lambdas or not seeds:
        raise ContractViolation("ablate_lambda needs at least one lambda and one seed")
    out_dir = Path(out_dir)
    rows = []
    by_lambda = {}
    for lam in lambdas:
        for seed in seeds:
            run_dir = out_dir / "runs" / f"lam_{lam:g}_seed_{seed}"
            cfg = base_cfg.replace(lam=float(lam), seed=int(seed), out_dir=str(run_dir))
            report, last = _train_and_eval(cfg, task, seed, f"lambda={lam:g}")
            by_lambda.setdefault(lam, []).append(report.success_rate)
            rows.append([repr(float(lam)), seed, repr(report.success_rate), cfg.batch_size,
                         repr(last.get("value_loss", 0.0)), repr(last.get("sigreg", 0.0)),
                         repr(last.get("pred_loss", 0.0))])
            logger.info("lambda=%g seed=%d: success %.2f", lam, seed, report.success_rate)
    csv_path = reports.write_csv(
        out_dir / "ablation.csv",
        ("lam", "seed", "success_rate", "batch_size", "value_loss", "sigreg", "pred_loss"),
        rows,
    )
    xs = [float(lam) for lam in by_lambda]
    ys = [float(np.mean(v)) for v in by_lambda.values()]
    svg_path = reports.svg_line_chart(out_dir / "ablation.svg", {"success": (xs, ys)},
                                      "Success vs lambda", "lambda", "success rate")
    return csv_path, svg_path


def _labels(cfgs, labels):
    if labels is None:
        labels = [c.algorithm for c in cfgs]
    seen, out = {}, []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        out.append(label if seen[label] == 1 else f"{label}-{seen[label]}")
    return out


@dataclass
class SuccessGap:
    """Difference in pooled success rate, ``label`` minus ``reference``."""

    label: str
    reference: str
    gap: float
    stderr: float


def success_gap(summary, reference):
    """Gap between two summaries with the standard error of a difference of seed means."""
    var = 0.0
    for s in (summary, reference):
        if len(s.per_seed) > 1:
            var += float(np.var(s.per_seed, ddof=1)) / len(s.per_seed)
    return SuccessGap(summary.label, reference.label,
                      summary.success_rate - reference.success_rate, float(np.sqrt(var)))


def compare(cfgs, task, seeds, out_dir, labels=None):
    """Methods x task success matrix: compare.csv (per seed + mean/std) and compare.svg.

    The first config is the reference; every row carries its success gap to it and
    the gap's standard error. Returns ``(csv_path, svg_path, summaries, gaps)``.
    """
    if not cfgs or not seeds:
        raise ContractViolation("compare needs at least one config and one seed")
    out_dir = Path(out_dir)
    labels = _labels(cfgs, labels)
    summaries = []
    for label, cfg in zip(labels, cfgs):
        per_seed = []
        for seed in seeds:
            run_dir = out_dir / "runs" / f"{label}_seed_{seed}"
            run_cfg = cfg.replace(seed=int(seed), out_dir=str(run_dir))
            report, _ = _train_and_eval(run_cfg, task, seed, label)
            per_seed.append(report)
            logger.info("%s seed=%d: success %.2f", label, seed, report.success_rate)
        summaries.append(summarize(per_seed, label))

    gaps = [success_gap(s, summaries[0]) for s in summaries]
    rows = [[label, cfg.algorithm, task.env, *(repr(r) for r in s.per_seed),
             repr(s.success_rate), repr(s.std), repr(gap.gap), repr(gap.stderr)]
            for label, cfg, s, gap in zip(labels, cfgs, summaries, gaps)]
    columns = ("label", "algorithm", "task", *(f"seed_{s}" for s in seeds), "mean", "std",
               "gap", "gap_stderr")
    csv_path = reports.write_csv(out_dir / "compare.csv", columns, rows)
    svg_path = reports.svg_bar_chart(out_dir / "compare.svg", labels,
                                     [s.success_rate for s in summaries],
                                     [s.std for s in summaries], f"Success on {task.env}")
    return csv_path, svg_path, summaries, gaps
