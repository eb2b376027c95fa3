"""Diagonal Gaussian policy heads for the AWR baselines."""

from __future__ import annotations

import numpy as np

from hifql import autodiff as ad
from hifql.autodiff import DTYPE
from hifql.errors import ContractViolation
from hifql.nn import MlpSpec, init, mlp_forward

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


class GaussianPolicy:
    """Maps a condition to a mean and a clipped log-std; ``squash`` puts tanh on the mean."""

    def __init__(self, spec, params, level, out_dim, squash):
        if spec.output_dim != 2 * out_dim:
            raise ContractViolation("Gaussian head needs 2 * out_dim outputs")
        self.spec = spec
        self.params = params
        self.level = level
        self.out_dim = out_dim
        self.squash = squash
        self.forward_calls = 0

    @property
    def cond_dim(self):
        return self.spec.input_dim

    def distribution(self, cond):
        self.forward_calls += 1
        out = mlp_forward(self.params, self.spec, ad.constant(np.atleast_2d(cond)))
        mean = ad.take_features(out, 0, self.out_dim)
        if self.squash:
            mean = ad.tanh(mean)
        log_std = ad.clip(ad.take_features(out, self.out_dim, 2 * self.out_dim),
                          LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std


def create_gaussian(level, out_dim, cond_dim, hidden_dims=(256, 256), activation="gelu",
                    layer_norm=False, squash=None, seed=0):
    spec = MlpSpec(cond_dim, tuple(hidden_dims), 2 * out_dim, activation, "none", layer_norm)
    if squash is None:
        squash = level == "low"
    return GaussianPolicy(spec, init(spec, seed), level, out_dim, squash)


def log_prob(mean, log_std, target):
    """Per-sample diagonal Gaussian log-density, shape [B]."""
    z = ad.subtract(ad.constant(target), mean)
    inv_var = ad.exp(ad.scale(log_std, -2.0))
    quad = ad.reduce_sum(ad.multiply(ad.square(z), inv_var), axis=-1)
    norm = ad.reduce_sum(log_std, axis=-1)
    d = mean.shape[-1]
    return ad.scale(ad.add(ad.scale(quad, 0.5), norm), -1.0) - ad.constant(
        np.full(quad.shape, d * _HALF_LOG_2PI, dtype=DTYPE)
    )


def awr_nll_loss(policy, cond, target, weights=None):
    """-mean_b w_b * log pi(target_b | cond_b)."""
    mean, log_std = policy.distribution(cond)
    logp = log_prob(mean, log_std, target)
    if weights is not None:
        logp = ad.multiply(logp, ad.constant(np.asarray(weights, dtype=DTYPE)))
    return ad.scale(ad.reduce_mean(logp), -1.0)


def act_mean(policy, cond):
    """Deterministic action (or subgoal): the head's mean."""
    with ad.no_grad():
        mean, _ = policy.distribution(cond)
    out = mean.values
    if policy.level == "low":
        out = np.clip(out, -1.0, 1.0)
    return out.astype(DTYPE)
