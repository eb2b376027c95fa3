"""Shared goal encoder phi(s, g) and its LeJEPA objective.

The objective mixes a four-view prediction loss with SIGReg, a sketched
comparison between the empirical characteristic function of projected
embeddings and that of an isotropic Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hifql import autodiff as ad
from hifql.autodiff import DTYPE
from hifql.errors import ContractViolation
from hifql.nn import MlpSpec, init, mlp_forward

logger = logging.getLogger(__name__)

NUM_VIEWS = 4


@dataclass
class Encoder:
    spec: MlpSpec
    params: object

    @property
    def rep_dim(self):
        return self.spec.output_dim

    @property
    def obs_dim(self):
        return self.spec.input_dim // 2


def create_encoder(obs_dim, rep_dim, hidden_dims=(256, 256), activation="gelu",
                   layer_norm=True, seed=0):
    spec = MlpSpec(2 * obs_dim, tuple(hidden_dims), rep_dim, activation, "none", layer_norm)
    return Encoder(spec, init(spec, seed))


def encode(enc, s, g, params=None):
    """phi([s, g]); ``params`` overrides the encoder's own (used for the EMA copy)."""
    s, g = ad.constant(s), ad.constant(g)
    if s.shape != g.shape or s.shape[-1] != enc.obs_dim:
        raise ContractViolation(
            f"encode expects matching [.., {enc.obs_dim}] inputs, got {s.shape} and {g.shape}"
        )
    return mlp_forward(enc.params if params is None else params, enc.spec, ad.concat([s, g]))


@dataclass
class ViewSet:
    views: tuple

    def __post_init__(self):
        if len(self.views) != NUM_VIEWS:
            raise ContractViolation(f"expected {NUM_VIEWS} views, got {len(self.views)}")
        shapes = {v.shape for v in self.views}
        if len(shapes) != 1:
            raise ContractViolation(f"views differ in shape: {sorted(shapes)}")

    def __iter__(self):
        return iter(self.views)

    @property
    def batch_size(self):
        return self.views[0].shape[0]


def build_views(enc, batch, aug_noise, rng):
    """z1 = phi(s_h, g), z2 = phi(s_{h+k}, g), z3 = phi(s_h + n1, g), z4 = phi(s_h, g + n2)."""
    if aug_noise < 0:
        raise ContractViolation(f"aug_noise must be >= 0, got {aug_noise}")
    noise_s = rng.normal(0.0, aug_noise, size=batch.s_h.shape).astype(DTYPE)
    noise_g = rng.normal(0.0, aug_noise, size=batch.g.shape).astype(DTYPE)
    return ViewSet((
        encode(enc, batch.s_h, batch.g),
        encode(enc, batch.s_sub, batch.g),
        encode(enc, batch.s_h + noise_s, batch.g),
        encode(enc, batch.s_h, batch.g + noise_g),
    ))


def pred_loss(views):
    """Batch mean of the per-sample mean squared distance of each view to the view mean."""
    zs = list(views)
    total = zs[0]
    for z in zs[1:]:
        total = ad.add(total, z)
    center = ad.scale(total, 1.0 / len(zs))
    spread = None
    for z in zs:
        term = ad.reduce_sum(ad.square(ad.subtract(z, center)), axis=-1)
        spread = term if spread is None else ad.add(spread, term)
    return ad.reduce_mean(ad.scale(spread, 1.0 / len(zs)))


@dataclass(frozen=True)
class SigregConfig:
    num_projections: int = 8
    sigma: float = 1.0
    alpha: float = 0.5
    lam: float = 0.1
    num_nodes: int = 33

    def __post_init__(self):
        if self.num_projections < 1:
            raise ContractViolation("SIGReg needs at least one projection")
        if self.sigma <= 0 or self.num_nodes < 1:
            raise ContractViolation("SIGReg sigma and node count must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolation(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ContractViolation(f"lambda must be >= 0, got {self.lam}")

    def quadrature(self):
        """Gauss-Legendre nodes on [-6 sigma, 6 sigma] with exp(-w^2 / 2 sigma^2) folded in."""
        x, w = np.polynomial.legendre.leggauss(self.num_nodes)
        half = 6.0 * self.sigma
        omega = half * x
        weights = half * w * np.exp(-(omega**2) / (2.0 * self.sigma**2))
        return omega.astype(DTYPE), weights.astype(DTYPE)

    def target_cf(self):
        omega, _ = self.quadrature()
        return np.exp(-(omega.astype(np.float64) ** 2) / (2.0 * self.sigma**2)).astype(DTYPE)


def random_directions(rng, dim, count):
    """``count`` unit vectors in R^dim as the columns of a [dim, count] array."""
    a = rng.standard_normal((dim, count))
    a /= np.linalg.norm(a, axis=0, keepdims=True)
    return a.astype(DTYPE)


def sigreg(embeds, cfg, rng, directions=None):
    """(1/M) sum_m N sum_k w_k |ecf_m(omega_k) - exp(-omega_k^2 / 2 sigma^2)|^2."""
    embeds = ad.constant(embeds)
    if embeds.ndim != 2 or embeds.shape[0] < 2:
        raise ContractViolation(f"sigreg needs an [N >= 2, d] block, got {embeds.shape}")
    n, d = embeds.shape
    if directions is None:
        directions = random_directions(rng, d, cfg.num_projections)
    m = directions.shape[1]
    omega, weights = cfg.quadrature()
    k = omega.size

    proj = ad.matmul(embeds, ad.constant(directions))  # [N, M]
    phase = ad.matmul(ad.reshape(proj, (n * m, 1)), ad.constant(omega[None, :]))
    phase = ad.reshape(phase, (n, m * k))
    re = ad.reduce_mean(ad.cos(phase), axis=0)
    im = ad.reduce_mean(ad.sin(phase), axis=0)
    target = ad.constant(np.tile(cfg.target_cf(), m))
    err = ad.add(ad.square(ad.subtract(re, target)), ad.square(im))
    weighted = ad.multiply(err, ad.constant(np.tile(weights, m)))
    return ad.scale(ad.reduce_sum(weighted), float(n) / m)


def lejepa_components(views, cfg, rng):
    """Return ``(total, sigreg_mean, pred)``; projection directions are shared by all views."""
    d = views.views[0].shape[-1]
    directions = random_directions(rng, d, cfg.num_projections)
    sig = None
    for z in views:
        term = sigreg(z, cfg, rng, directions=directions)
        sig = term if sig is None else ad.add(sig, term)
    sig = ad.scale(sig, 1.0 / NUM_VIEWS)
    pred = pred_loss(views)
    total = ad.add(ad.scale(sig, cfg.alpha), ad.scale(pred, 1.0 - cfg.alpha))
    return total, sig, pred


def lejepa_loss(views, cfg, rng):
    return lejepa_components(views, cfg, rng)[0]
