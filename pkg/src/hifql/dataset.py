"""Offline trajectory data: scripted collection, the on-disk format and goal-batch sampling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hifql.autodiff import DTYPE
from hifql.errors import ContractViolation, DatasetFormatError, HifqlError
from hifql.maze import WaypointController

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SCRIPTS = ("waypoint-noisy", "random-walk")

# goal-source codes stored in GoalBatch.goal_source
CURRENT, TRAJ_FUTURE, RANDOM_STATE = 0, 1, 2
GOAL_SOURCES = ("current", "trajectory-future", "random-state")

_PAYLOAD_DTYPE = np.dtype("<f4")
_HEADER_KEYS = ("version", "obs_dim", "act_dim", "traj_lengths", "env", "seed")


@dataclass
class Trajectory:
    states: np.ndarray  # [H + 1, obs_dim]
    actions: np.ndarray  # [H, act_dim]

    def __len__(self):
        return len(self.actions)


@dataclass
class Dataset:
    """Reward-free trajectories plus the metadata needed to rebuild their env."""

    trajectories: list[Trajectory]
    obs_dim: int
    act_dim: int
    meta: dict = field(default_factory=dict)

    def validate(self):
        if not self.trajectories:
            raise ContractViolation("dataset has no trajectories")
        for i, traj in enumerate(self.trajectories):
            if traj.states.ndim != 2 or traj.states.shape[1] != self.obs_dim:
                raise ContractViolation(f"trajectory {i}: states are not [H+1, {self.obs_dim}]")
            if traj.actions.ndim != 2 or traj.actions.shape[1] != self.act_dim:
                raise ContractViolation(f"trajectory {i}: actions are not [H, {self.act_dim}]")
            if len(traj.actions) < 1:
                raise ContractViolation(f"trajectory {i}: fewer than 2 states")
            if len(traj.states) != len(traj.actions) + 1:
                raise ContractViolation(
                    f"trajectory {i}: {len(traj.states)} states for {len(traj.actions)} actions"
                )
        return self

    @property
    def lengths(self):
        return np.array([len(t) for t in self.trajectories], dtype=np.int64)

    @property
    def num_transitions(self):
        return int(self.lengths.sum())

    def all_states(self):
        return np.concatenate([t.states for t in self.trajectories], axis=0)


# --- collection ---


def _random_free_point(env, cell, rng, jitter):
    return env.cell_center(cell) + rng.uniform(-jitter, jitter, size=2) * env.cell_size


def collect(env, script="waypoint-noisy", episodes=1, horizon=200, seed=0, noise=0.3,
            start_jitter=0.25, max_retries=100):
    """Roll out a scripted behaviour policy and record reward-free trajectories.

    ``waypoint-noisy`` follows BFS waypoints toward a fresh goal cell each episode,
    with uniform action noise in [-noise, noise]; ``random-walk`` draws actions
    uniformly from the box. Every trajectory is exactly ``horizon`` steps.
    """
    if script not in SCRIPTS:
        raise ContractViolation(f"unknown script '{script}', expected one of {SCRIPTS}")
    if episodes < 1 or horizon < 1:
        raise ContractViolation("episodes and horizon must be >= 1")
    rng = np.random.default_rng(seed)
    free = env.free_cells()
    trajectories, goals = [], []

    for _ in range(episodes):
        start_cell = free[rng.integers(len(free))]
        controller = None
        if script == "waypoint-noisy":
            for _attempt in range(max_retries):
                goal_cell = free[rng.integers(len(free))]
                if goal_cell != start_cell and env.bfs_path(start_cell, goal_cell) is not None:
                    break
                start_cell = free[rng.integers(len(free))]
            else:
                raise HifqlError(
                    f"no reachable start/goal pair found in {max_retries} tries on '{env.name}'"
                )
            goal = env.cell_center(goal_cell)
            controller = WaypointController(env, goal, rng=rng)
            goals.append(goal.tolist())

        obs = env.reset(_random_free_point(env, start_cell, rng, start_jitter))
        states = [obs]
        actions = []
        for _t in range(horizon):
            if controller is not None:
                a = controller(env.state) + rng.uniform(-noise, noise, size=2)
            else:
                a = rng.uniform(-1.0, 1.0, size=2)
            a = np.clip(a, -1.0, 1.0)
            states.append(env.step(a))
            actions.append(a)
        trajectories.append(
            Trajectory(np.stack(states).astype(DTYPE), np.stack(actions).astype(DTYPE))
        )

    meta = {"env": env.name, "seed": seed, "script": script}
    if env.d_pad:
        meta["d_pad"] = env.d_pad
    if goals:
        meta["goals"] = goals
    logger.info("collected %d %s episodes on %s", episodes, script, env.name)
    return Dataset(trajectories, env.obs_dim, env.act_dim, meta).validate()


# --- on-disk format ---


def save_dataset(ds, path):
    """JSON header line, then float32 little-endian states and actions per trajectory."""
    ds.validate()
    header = {
        "version": FORMAT_VERSION,
        "obs_dim": ds.obs_dim,
        "act_dim": ds.act_dim,
        "traj_lengths": ds.lengths.tolist(),
        "env": ds.meta.get("env"),
        "seed": ds.meta.get("seed"),
    }
    for key in ("script", "goals", "d_pad"):
        if key in ds.meta:
            header[key] = ds.meta[key]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for traj in ds.trajectories:
            f.write(np.ascontiguousarray(traj.states, dtype=_PAYLOAD_DTYPE).tobytes())
            f.write(np.ascontiguousarray(traj.actions, dtype=_PAYLOAD_DTYPE).tobytes())
    return path


def load_dataset(path):
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise DatasetFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"{path}: malformed header: {e}") from e
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise DatasetFormatError(f"{path}: header lacks {missing}")
    if header["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {header['version']}")

    obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
    lengths = [int(n) for n in header["traj_lengths"]]
    if obs_dim < 1 or act_dim < 1 or any(n < 1 for n in lengths):
        raise DatasetFormatError(f"{path}: invalid dims or trajectory lengths")
    payload = raw[newline + 1 :]
    expected = sum((n + 1) * obs_dim + n * act_dim for n in lengths) * _PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise DatasetFormatError(
            f"{path}: size mismatch, payload has {len(payload)} bytes, header implies {expected}"
        )

    flat = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).astype(DTYPE)
    trajectories = []
    offset = 0
    for n in lengths:
        states = flat[offset : offset + (n + 1) * obs_dim].reshape(n + 1, obs_dim)
        offset += (n + 1) * obs_dim
        actions = flat[offset : offset + n * act_dim].reshape(n, act_dim)
        offset += n * act_dim
        trajectories.append(Trajectory(states.copy(), actions.copy()))
    meta = {k: v for k, v in header.items() if k not in ("version", "obs_dim", "act_dim",
                                                         "traj_lengths")}
    return Dataset(trajectories, obs_dim, act_dim, meta).validate()


# --- goal-conditioned batches ---


@dataclass
class GoalBatch:
    """Tuples (s_h, a_h, s_{h+1}, s_{h+k}, g); index arrays record where each came from."""

    s_h: np.ndarray
    a_h: np.ndarray
    s_next: np.ndarray
    s_sub: np.ndarray
    g: np.ndarray
    goal_source: np.ndarray
    traj_index: np.ndarray
    h_index: np.ndarray
    sub_index: np.ndarray
    goal_traj: np.ndarray
    goal_index: np.ndarray

    def __len__(self):
        return len(self.s_h)


class _Index:
    """Flat lookup tables over a dataset, cached per Dataset object."""

    def __init__(self, ds):
        self.lengths = ds.lengths
        self.states = ds.all_states()
        self.actions = np.concatenate([t.actions for t in ds.trajectories], axis=0)
        self.state_start = np.concatenate([[0], np.cumsum(self.lengths + 1)[:-1]])
        self.action_start = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        # transition id -> trajectory
        self.transition_traj = np.repeat(np.arange(len(self.lengths)), self.lengths)
        # state id -> (trajectory, step)
        self.state_traj = np.repeat(np.arange(len(self.lengths)), self.lengths + 1)
        self.state_step = np.arange(len(self.states)) - self.state_start[self.state_traj]


_INDEX_CACHE: dict[int, tuple[Dataset, _Index]] = {}


def _index(ds):
    cached = _INDEX_CACHE.get(id(ds))
    if cached is None or cached[0] is not ds:
        cached = (ds, _Index(ds))
        _INDEX_CACHE.clear()
        _INDEX_CACHE[id(ds)] = cached
    return cached[1]


def sample_batch(ds, B, k, goal_mix, rng, gamma=0.99):
    """Draw B transitions uniformly and attach subgoals and goals.

    Goal sources are mixed per element with probabilities
    ``goal_mix = (p_current, p_trajectory_future, p_random_state)``.
    Trajectory-future offsets are Geometric(1 - gamma) on {1, 2, ...}, clamped to
    the trajectory's last state.
    """
    if B <= 0:
        raise ContractViolation(f"batch size must be positive, got {B}")
    if k < 1:
        raise ContractViolation(f"subgoal step k must be >= 1, got {k}")
    mix = np.asarray(goal_mix, dtype=np.float64)
    if mix.shape != (3,) or (mix < 0).any() or abs(mix.sum() - 1.0) > 1e-6:
        raise ContractViolation(
            f"goal mix must be 3 non-negative weights summing to 1: {goal_mix}"
        )
    if not 0.0 < gamma < 1.0:
        raise ContractViolation(f"gamma must be in (0, 1), got {gamma}")
    ds.validate()
    idx = _index(ds)

    transition = rng.integers(idx.transition_traj.size, size=B)
    traj = idx.transition_traj[transition]
    h = transition - idx.action_start[traj]
    last = idx.lengths[traj]
    sub = np.minimum(h + k, last)

    source = rng.choice(3, size=B, p=mix / mix.sum())
    future = np.minimum(h + rng.geometric(1.0 - gamma, size=B), last)
    random_state = rng.integers(len(idx.states), size=B)

    goal_traj = np.where(source == RANDOM_STATE, idx.state_traj[random_state], traj)
    goal_index = np.select(
        [source == CURRENT, source == TRAJ_FUTURE],
        [h, future],
        default=idx.state_step[random_state],
    )

    base = idx.state_start[traj]
    return GoalBatch(
        s_h=idx.states[base + h],
        a_h=idx.actions[idx.action_start[traj] + h],
        s_next=idx.states[base + h + 1],
        s_sub=idx.states[base + sub],
        g=idx.states[idx.state_start[goal_traj] + goal_index],
        goal_source=source.astype(np.int8),
        traj_index=traj,
        h_index=h,
        sub_index=sub,
        goal_traj=goal_traj,
        goal_index=goal_index,
    )
