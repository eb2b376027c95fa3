"""Mean-flow generators for subgoals and actions, plus the flow-matching counterpart.

Paths interpolate data ``x0`` (t = 0) and Gaussian noise ``x1`` (t = 1):
``x_t = t * x1 + (1 - t) * x0``. An average-velocity net ``u(x_t, r, t, cond)``
transports noise to data in one step: ``x0 = x1 - u(x1, 0, 1, cond)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hifql import autodiff as ad
from hifql.autodiff import DTYPE
from hifql.errors import ContractViolation, NumericFault
from hifql.lejepa import encode
from hifql.nn import MlpSpec, init, mlp_forward

logger = logging.getLogger(__name__)

LEVELS = ("high", "low")
GOAL_INPUTS = ("raw", "encoded")


class MeanFlowPolicy:
    """u_theta over ``[x, r, t, cond]``; ``forward_calls`` counts network evaluations."""

    def __init__(self, spec, params, level, noise_dim, cond_dim):
        if level not in LEVELS:
            raise ContractViolation(f"policy level must be one of {LEVELS}, got '{level}'")
        if spec.input_dim != noise_dim + 2 + cond_dim or spec.output_dim != noise_dim:
            raise ContractViolation("policy spec does not match noise/condition dims")
        self.spec = spec
        self.params = params
        self.level = level
        self.noise_dim = noise_dim
        self.cond_dim = cond_dim
        self.forward_calls = 0

    def __call__(self, x, r, t, cond=None):
        x = ad.constant(x)
        if x.ndim != 2 or x.shape[-1] != self.noise_dim:
            raise ContractViolation(f"expected [B, {self.noise_dim}] input, got {x.shape}")
        batch = x.shape[0]
        pieces = [x, _column(r, batch), _column(t, batch)]
        if self.cond_dim:
            cond = ad.constant(cond)
            if cond.shape != (batch, self.cond_dim):
                raise ContractViolation(
                    f"expected [{batch}, {self.cond_dim}] condition, got {cond.shape}"
                )
            pieces.append(cond)
        self.forward_calls += 1
        return mlp_forward(self.params, self.spec, ad.concat(pieces))


def _column(v, batch):
    if isinstance(v, ad.Tensor):
        return v
    v = np.asarray(v)
    return ad.constant(np.broadcast_to(v.reshape(-1, 1), (batch, 1)).copy())


def create_policy(level, noise_dim, cond_dim, hidden_dims=(256, 256), activation="gelu",
                  layer_norm=False, seed=0):
    spec = MlpSpec(noise_dim + 2 + cond_dim, tuple(hidden_dims), noise_dim, activation,
                   "none", layer_norm)
    return MeanFlowPolicy(spec, init(spec, seed), level, noise_dim, cond_dim)


def velocity(policy, x, r, t, cond=None):
    return policy(x, r, t, cond)


@dataclass
class TimePair:
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.r) > np.asarray(self.t)):
            raise ContractViolation("time pair needs r <= t")


def sample_timepair(rng, rho_equal, size=None):
    """With probability ``rho_equal`` r = t = u; otherwise (r, t) = sorted pair of uniforms."""
    if not 0.0 <= rho_equal <= 1.0:
        raise ContractViolation(f"rho_equal must be in [0, 1], got {rho_equal}")
    shape = () if size is None else (size,)
    u = rng.random((2, *shape))
    equal = rng.random(shape) < rho_equal
    r = np.where(equal, u[0], np.minimum(u[0], u[1]))
    t = np.where(equal, u[0], np.maximum(u[0], u[1]))
    return TimePair(r.astype(DTYPE), t.astype(DTYPE))


def meanflow_target(policy, x0, x1, tp, cond=None):
    """v - (t - r) * du/dt with du/dt taken along (v, 0, 1, 0); returned detached."""
    x0 = np.asarray(x0, dtype=DTYPE)
    x1 = np.asarray(x1, dtype=DTYPE)
    if x0.shape != x1.shape:
        raise ContractViolation(f"x0 {x0.shape} and x1 {x1.shape} differ")
    batch = x0.shape[0]
    r = _column(tp.r, batch).values
    t = _column(tp.t, batch).values
    xt = t * x1 + (1 - t) * x0
    v = x1 - x0

    primals = [xt, r, t]
    tangents = [v, np.zeros_like(r), np.ones_like(t)]
    if cond is not None:
        cond = np.asarray(cond, dtype=DTYPE)
        primals.append(cond)
        tangents.append(np.zeros_like(cond))
    _, du_dt = ad.jvp(lambda *a: velocity(policy, *a), primals, tangents)
    return v - (t - r) * du_dt.values


@dataclass(frozen=True)
class AwrConfig:
    beta: float = 3.0
    clip: float = 100.0

    def __post_init__(self):
        if self.beta < 0:
            raise ContractViolation(f"AWR beta must be >= 0, got {self.beta}")
        if self.clip < 1:
            raise ContractViolation(f"AWR weight clip must be >= 1, got {self.clip}")


def awr_weights(adv, awr, name="advantage"):
    """min(exp(beta * A), clip), computed without overflow."""
    adv = np.asarray(adv, dtype=np.float64)
    if not np.all(np.isfinite(adv)):
        raise NumericFault("awr_weights", f"non-finite {name}")
    logits = np.minimum(awr.beta * adv, np.log(awr.clip))
    return np.minimum(np.exp(logits), awr.clip).astype(DTYPE)


def _weighted_sq_error(pred, target, weights):
    err = ad.reduce_sum(ad.square(ad.subtract(pred, ad.constant(target))), axis=-1)
    if weights is not None:
        err = ad.multiply(err, ad.constant(np.asarray(weights, dtype=DTYPE)))
    return ad.reduce_mean(err)


def mean_flow_loss(policy, x0, x1, tp, cond=None, weights=None):
    """mean_b w_b * ||u(x_t, r, t, cond) - sg(target)||^2."""
    target = meanflow_target(policy, x0, x1, tp, cond)
    batch = len(x0)
    t = _column(tp.t, batch).values
    xt = t * np.asarray(x1, dtype=DTYPE) + (1 - t) * np.asarray(x0, dtype=DTYPE)
    pred = velocity(policy, xt, tp.r, tp.t, cond)
    return _weighted_sq_error(pred, target, weights)


def weighted_mf_loss(policy, x0, cond, adv, awr, rng, rho_equal=0.25):
    """AWR-weighted mean-flow regression; returns ``(loss, weights)``."""
    weights = awr_weights(adv, awr)
    x0 = np.asarray(x0, dtype=DTYPE)
    x1 = rng.standard_normal(x0.shape).astype(DTYPE)
    tp = sample_timepair(rng, rho_equal, size=len(x0))
    return mean_flow_loss(policy, x0, x1, tp, cond, weights), weights


def fm_loss(policy, x0, x1, t, cond=None, weights=None):
    """Flow matching with the net read as an instantaneous field v(x_t, t) = u(x_t, t, t)."""
    tp = TimePair(np.asarray(t, dtype=DTYPE), np.asarray(t, dtype=DTYPE))
    batch = len(x0)
    tc = _column(tp.t, batch).values
    x0 = np.asarray(x0, dtype=DTYPE)
    x1 = np.asarray(x1, dtype=DTYPE)
    xt = tc * x1 + (1 - tc) * x0
    pred = velocity(policy, xt, tp.t, tp.t, cond)
    return _weighted_sq_error(pred, x1 - x0, weights)


def weighted_fm_loss(policy, x0, cond, adv, awr, rng):
    weights = awr_weights(adv, awr)
    x0 = np.asarray(x0, dtype=DTYPE)
    x1 = rng.standard_normal(x0.shape).astype(DTYPE)
    t = rng.random(len(x0)).astype(DTYPE)
    return fm_loss(policy, x0, x1, t, cond, weights), weights


# --- sampling ---


def _condition(s, y):
    if s is None:
        return None
    s = np.atleast_2d(np.asarray(s, dtype=DTYPE))
    y = np.atleast_2d(np.asarray(y, dtype=DTYPE))
    return np.concatenate([s, y], axis=-1)


def _finish(policy, x):
    if policy.level == "low":
        x = np.clip(x, -1.0, 1.0)
    return x.astype(DTYPE)


def one_step_sample(policy, s, y, rng, batch=None):
    """x1 ~ N(0, I); return x1 - u(x1, 0, 1, [s, y]). Actions are clamped to the box."""
    cond = _condition(s, y)
    n = len(cond) if cond is not None else batch or 1
    x1 = rng.standard_normal((n, policy.noise_dim)).astype(DTYPE)
    with ad.no_grad():
        u = velocity(policy, x1, 0.0, 1.0, cond).values
    return _finish(policy, x1 - u)


class VelocityField:
    """Reads a policy net as an ODE field; ``average`` uses u(x, t - dt, t) per step."""

    def __init__(self, policy, average=False):
        self.policy = policy
        self.average = average

    @property
    def level(self):
        return self.policy.level

    @property
    def noise_dim(self):
        return self.policy.noise_dim

    def __call__(self, x, r, t, cond=None):
        return velocity(self.policy, x, r if self.average else t, t, cond)


def ode_sample(field, s, y, steps, rng, batch=None):
    """Euler integration of dx/dt = field from t = 1 to t = 0 in ``steps`` equal steps."""
    if steps < 1:
        raise ContractViolation(f"ode_sample needs steps >= 1, got {steps}")
    cond = _condition(s, y)
    n = len(cond) if cond is not None else batch or 1
    x = rng.standard_normal((n, field.noise_dim)).astype(DTYPE)
    with ad.no_grad():
        for i in range(steps):
            t = DTYPE(1.0 - i / steps)
            r = DTYPE(1.0 - (i + 1) / steps)
            x = x - (t - r) * field(x, r, t, cond).values
    return _finish(field, x)


# --- level-specific fields ---


def high_fields(enc, batch, goal_input="raw"):
    """x0 = sg phi(s_h, s_{h+k}); cond = [s_h, g] (or [s_h, phi(g, g)])."""
    if goal_input not in GOAL_INPUTS:
        raise ContractViolation(f"goal input must be one of {GOAL_INPUTS}")
    with ad.no_grad():
        x0 = encode(enc, batch.s_h, batch.s_sub).values
        goal = batch.g if goal_input == "raw" else encode(enc, batch.g, batch.g).values
    return x0, _condition(batch.s_h, goal)


def low_fields(enc, batch):
    """x0 = a_h; cond = [s_h, sg phi(s_h, s_{h+k})]."""
    with ad.no_grad():
        sub = encode(enc, batch.s_h, batch.s_sub).values
    return np.asarray(batch.a_h, dtype=DTYPE), _condition(batch.s_h, sub)


def high_goal(enc, s, g, goal_input="raw"):
    """Condition block for the high policy at inference."""
    if goal_input == "raw":
        return np.atleast_2d(np.asarray(g, dtype=DTYPE))
    with ad.no_grad():
        g = np.atleast_2d(np.asarray(g, dtype=DTYPE))
        return encode(enc, g, g).values
