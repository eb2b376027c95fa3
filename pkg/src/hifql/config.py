"""Training configuration: one JSON (or YAML) document, range-checked at load."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from hifql.errors import ConfigError

ALGORITHMS = ("hifql", "hiql-gaussian", "gcbc", "gcivl", "gciql", "fm-multistep")
ACTIVATIONS = ("relu", "gelu")
GOAL_INPUTS = ("raw", "encoded")
SUBGOAL_REFRESH = ("every-step", "every-k")

# fields a resumed run may change without touching the learned state
RUN_CONTROL = ("steps", "out_dir", "checkpoint_every", "dataset")


@dataclass
class TrainConfig:
    algorithm: str = "hifql"
    dataset: str = ""
    env: str = "small"
    d_pad: int = 0
    seed: int = 0
    steps: int = 50_000
    batch_size: int = 256
    # critic
    kappa: float = 0.7
    gamma: float = 0.99
    subgoal_k: int | None = None
    tau: float = 0.005
    value_layer_norm: bool = True
    # representation
    rep_dim: int = 10
    lam: float = 0.1
    alpha: float = 0.5
    num_projections: int = 8
    sigreg_sigma: float = 1.0
    quadrature_nodes: int = 33
    aug_noise: float = 0.05
    # policies
    beta: float = 3.0
    awr_clip: float = 100.0
    rho_equal: float = 0.25
    high_goal_input: str = "raw"
    ode_steps: int = 16
    # shared network shape
    hidden_dims: list[int] = field(default_factory=lambda: [256, 256])
    activation: str = "gelu"
    # optimisation
    lr_value: float = 3e-4
    lr_encoder: float = 3e-4
    lr_high: float = 3e-4
    lr_low: float = 3e-4
    # sampling
    goal_mix: list[float] = field(default_factory=lambda: [0.2, 0.5, 0.3])
    actor_goal_mix: list[float] = field(default_factory=lambda: [0.0, 1.0, 0.0])
    # evaluation
    subgoal_refresh: str = "every-step"
    # bookkeeping
    checkpoint_every: int = 1000
    metrics_window: int = 100
    debug_numerics: bool = False
    out_dir: str = "runs/default"

    def validate(self):
        _one_of("algorithm", self.algorithm, ALGORITHMS)
        _one_of("activation", self.activation, ACTIVATIONS)
        _one_of("high_goal_input", self.high_goal_input, GOAL_INPUTS)
        _one_of("subgoal_refresh", self.subgoal_refresh, SUBGOAL_REFRESH)
        for name in ("batch_size", "rep_dim", "num_projections", "quadrature_nodes",
                     "ode_steps", "checkpoint_every", "metrics_window"):
            _at_least(name, getattr(self, name), 1)
        for name in ("steps", "d_pad", "seed"):
            _at_least(name, getattr(self, name), 0)
        if self.subgoal_k is not None:
            _at_least("subgoal_k", self.subgoal_k, 1)
        _within("kappa", self.kappa, 0.5, 1.0, high_open=True)
        _within("gamma", self.gamma, 0.0, 1.0, low_open=True, high_open=True)
        _within("tau", self.tau, 0.0, 1.0)
        _within("alpha", self.alpha, 0.0, 1.0)
        _within("rho_equal", self.rho_equal, 0.0, 1.0)
        for name in ("lam", "beta", "aug_noise", "lr_value", "lr_encoder", "lr_high", "lr_low"):
            _at_least(name, getattr(self, name), 0.0)
        if self.sigreg_sigma <= 0:
            raise ConfigError(f"sigreg_sigma must be > 0, got {self.sigreg_sigma}")
        if self.awr_clip < 1:
            raise ConfigError(f"awr_clip must be >= 1, got {self.awr_clip}")
        if not self.hidden_dims or any(int(h) < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be a nonempty list of positive ints")
        for name in ("goal_mix", "actor_goal_mix"):
            mix = getattr(self, name)
            if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-6:
                raise ConfigError(f"{name} must be 3 non-negative weights summing to 1: {mix}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config document must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        # PyYAML reads exponent floats without a dot (3e-4) as strings
        for f in fields(cls):
            if f.type == "float" and isinstance(data.get(f.name), str):
                try:
                    data[f.name] = float(data[f.name])
                except ValueError as e:
                    raise ConfigError(f"{f.name} must be a number: {e}") from e
        for key in ("hidden_dims", "goal_mix", "actor_goal_mix"):
            if key in data:
                data[key] = list(data[key])
        try:
            cfg = cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        return cfg.validate()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def learned_fields(self):
        """Everything except run-control fields; must match when resuming."""
        return {k: v for k, v in self.to_dict().items() if k not in RUN_CONTROL}


def _one_of(name, value, options):
    if value not in options:
        raise ConfigError(f"{name} must be one of {options}, got '{value}'")


def _at_least(name, value, low):
    if not isinstance(value, int | float) or isinstance(value, bool) or value < low:
        raise ConfigError(f"{name} must be a number >= {low}, got {value!r}")


def _within(name, value, low, high, low_open=False, high_open=False):
    if not isinstance(value, int | float) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    too_low = value <= low if low_open else value < low
    too_high = value >= high if high_open else value > high
    if too_low or too_high:
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ConfigError(f"{name} must be in {lb}{low}, {high}{rb}, got {value}")


def load_config(path):
    """Read a config file; JSON is parsed through yaml.safe_load (JSON is valid YAML)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
    return TrainConfig.from_dict(data or {})
