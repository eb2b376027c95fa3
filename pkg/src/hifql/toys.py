"""2-D toy problem: one-step mean-flow vs multi-step flow matching on an 8-Gaussian ring."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from hifql import autodiff as ad
from hifql import meanflow as mf
from hifql import reports
from hifql.autodiff import DTYPE
from hifql.metrics import energy_distance
from hifql.nn import AdamState, adam_step

logger = logging.getLogger(__name__)


def eight_gaussians(n, rng, radius=2.0, std=0.1):
    """Equal-weight mixture of 8 isotropic Gaussians placed evenly on a circle."""
    angles = rng.integers(8, size=n) * (np.pi / 4)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return (centers + std * rng.standard_normal((n, 2))).astype(DTYPE)


@dataclass
class ToyConfig:
    steps: int = 20_000
    batch_size: int = 256
    hidden_dims: tuple = (256, 256)
    activation: str = "gelu"
    lr: float = 1e-3
    rho_equal: float = 0.5
    seed: int = 0


def _fit(cfg, loss_fn, desc, progress):
    rng = np.random.default_rng(cfg.seed)
    policy = mf.create_policy("high", 2, 0, cfg.hidden_dims, cfg.activation, seed=cfg.seed)
    opt = AdamState.create(policy.params, cfg.lr)
    for step in tqdm(range(cfg.steps), desc=desc, disable=not progress):
        x0 = eight_gaussians(cfg.batch_size, rng)
        x1 = rng.standard_normal(x0.shape).astype(DTYPE)
        with ad.Tape() as tape:
            loss = loss_fn(policy, x0, x1, rng)
        policy.params.zero_grad()
        ad.backward(loss, tape)
        adam_step(opt, policy.params)
        if step % 1000 == 0:
            logger.debug("%s step %d loss %.4f", desc, step, loss.item())
    return policy


def train_meanflow(cfg=None, progress=False):
    cfg = cfg or ToyConfig()

    def loss_fn(policy, x0, x1, rng):
        tp = mf.sample_timepair(rng, cfg.rho_equal, size=len(x0))
        return mf.mean_flow_loss(policy, x0, x1, tp)

    return _fit(cfg, loss_fn, "mean-flow", progress)


def train_flow_matching(cfg=None, progress=False):
    cfg = cfg or ToyConfig()

    def loss_fn(policy, x0, x1, rng):
        return mf.fm_loss(policy, x0, x1, rng.random(len(x0)).astype(DTYPE))

    return _fit(cfg, loss_fn, "flow-matching", progress)


def sample_one_step(policy, n, rng):
    return mf.one_step_sample(policy, None, None, rng, batch=n)


def sample_ode(policy, n, rng, steps=64):
    return mf.ode_sample(mf.VelocityField(policy), None, None, steps, rng, batch=n)


def run_toy(cfg=None, n=2000, ode_steps=64, out_dir=None, progress=False):
    """Train both models and score one-step samples against the ODE oracle and the target."""
    cfg = cfg or ToyConfig()
    mean_flow = train_meanflow(cfg, progress)
    flow = train_flow_matching(cfg, progress)
    rng = np.random.default_rng(cfg.seed + 1)
    one_step = sample_one_step(mean_flow, n, rng)
    oracle = sample_ode(flow, n, rng, ode_steps)
    target = eight_gaussians(n, rng)
    result = {
        "one_step_vs_oracle": energy_distance(one_step, oracle),
        "one_step_vs_target": energy_distance(one_step, target),
        "oracle_vs_target": energy_distance(oracle, target),
    }
    logger.info("toy energy distances: %s", result)
    if out_dir is not None:
        groups = {"one-step": one_step.tolist(), f"{ode_steps}-step FM": oracle.tolist()}
        reports.svg_scatter(Path(out_dir) / "toy_samples.svg", groups, "8-Gaussian samples")
    return result
