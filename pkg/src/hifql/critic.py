"""Goal-conditioned value function trained by expectile regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hifql import autodiff as ad
from hifql.autodiff import DTYPE
from hifql.dataset import CURRENT
from hifql.errors import ContractViolation
from hifql.lejepa import encode
from hifql.nn import MlpSpec, init, mlp_forward


@dataclass
class CriticBundle:
    """V, its Polyak copy, and the Polyak copy of the encoder that feeds the copy."""

    spec: MlpSpec
    params: object
    target: object
    target_encoder: object
    kappa: float = 0.7
    gamma: float = 0.99
    epsilon: float = 0.5

    def __post_init__(self):
        if not 0.5 <= self.kappa < 1.0:
            raise ContractViolation(f"kappa must be in [0.5, 1), got {self.kappa}")
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation(f"gamma must be in (0, 1), got {self.gamma}")
        if self.target.names != self.params.names:
            raise ContractViolation("target value network does not match the online spec")


@dataclass
class AdvantagePair:
    high: np.ndarray
    low: np.ndarray


def create_critic(obs_dim, encoder, hidden_dims=(256, 256), activation="gelu",
                  layer_norm=True, kappa=0.7, gamma=0.99, epsilon=0.5, seed=0):
    spec = MlpSpec(obs_dim + encoder.rep_dim, tuple(hidden_dims), 1, activation, "none",
                   layer_norm)
    params = init(spec, seed)
    return CriticBundle(spec, params, params.copy(), encoder.params.copy(), kappa, gamma,
                        epsilon)


def value(bundle, s, z, params=None):
    """V(s, z) as a [B] tensor."""
    s = ad.constant(s)
    params = bundle.params if params is None else params
    out = mlp_forward(params, bundle.spec, ad.concat([s, ad.constant(z)]))
    return ad.reshape(out, out.shape[:-1])


def asymmetric_l2(residual, kappa):
    """mean(|kappa - 1{x < 0}| * x^2) for any kappa in (0, 1)."""
    if not 0.0 < kappa < 1.0:
        raise ContractViolation(f"kappa must be in (0, 1), got {kappa}")
    residual = ad.constant(residual)
    weight = np.where(residual.values < 0, 1.0 - kappa, kappa).astype(DTYPE)
    return ad.reduce_mean(ad.multiply(ad.constant(weight), ad.square(residual)))


def expectile_loss(residual, kappa):
    if not 0.5 <= kappa < 1.0:
        raise ContractViolation(f"expectile kappa must be in [0.5, 1), got {kappa}")
    return asymmetric_l2(residual, kappa)


def reward_and_mask(batch, epsilon):
    """Indicator reward on position distance and the matching bootstrap mask."""
    near_now = np.linalg.norm(batch.s_h[:, :2] - batch.g[:, :2], axis=-1) <= epsilon
    near_next = np.linalg.norm(batch.s_next[:, :2] - batch.g[:, :2], axis=-1) <= epsilon
    reward = ((batch.goal_source == CURRENT) | near_now | near_next).astype(DTYPE)
    return reward, 1.0 - reward


def bootstrap_target(bundle, phi, batch):
    """r + mask * gamma * Vbar(s_{h+1}, phibar(s_{h+1}, g)), as a plain array."""
    reward, mask = reward_and_mask(batch, bundle.epsilon)
    with ad.no_grad():
        z_next = encode(phi, batch.s_next, batch.g, params=bundle.target_encoder)
        v_next = value(bundle, batch.s_next, z_next, params=bundle.target).values
    return (reward + mask * DTYPE(bundle.gamma) * v_next).astype(DTYPE)


def value_loss(bundle, phi, batch):
    target = bootstrap_target(bundle, phi, batch)
    v = value(bundle, batch.s_h, encode(phi, batch.s_h, batch.g))
    return expectile_loss(ad.subtract(ad.constant(target), v), bundle.kappa)


def _v(bundle, phi, s, g):
    return value(bundle, s, encode(phi, s, g)).values


def advantages(bundle, phi, batch):
    """High: V(s_{h+k}, g) - V(s_h, g). Low: V(s_{h+1}, s_{h+k}) - V(s_h, s_{h+k})."""
    with ad.no_grad():
        high = _v(bundle, phi, batch.s_sub, batch.g) - _v(bundle, phi, batch.s_h, batch.g)
        low = (_v(bundle, phi, batch.s_next, batch.s_sub)
               - _v(bundle, phi, batch.s_h, batch.s_sub))
    return AdvantagePair(high=high, low=low)


def flat_advantage(bundle, phi, batch):
    """V(s_{h+1}, g) - V(s_h, g), for flat policies."""
    with ad.no_grad():
        return _v(bundle, phi, batch.s_next, batch.g) - _v(bundle, phi, batch.s_h, batch.g)


# --- action-value head (GCIQL baseline) ---


@dataclass
class QHead:
    """Q(s, a, z) and its Polyak copy; z is the shared goal embedding phi(s, g)."""

    spec: MlpSpec
    params: object
    target: object


def create_q_head(obs_dim, act_dim, encoder, hidden_dims=(256, 256), activation="gelu",
                  layer_norm=True, seed=0):
    spec = MlpSpec(obs_dim + act_dim + encoder.rep_dim, tuple(hidden_dims), 1, activation,
                   "none", layer_norm)
    params = init(spec, seed)
    return QHead(spec, params, params.copy())


def q_value(head, s, a, z, params=None):
    """Q(s, a, z) as a [B] tensor."""
    params = head.params if params is None else params
    x = ad.concat([ad.constant(s), ad.constant(a), ad.constant(z)])
    out = mlp_forward(params, head.spec, x)
    return ad.reshape(out, out.shape[:-1])


def q_loss(bundle, head, phi, batch):
    """Squared Bellman error of Q(s_h, a_h, g) against r + mask * gamma * Vbar(s_{h+1}, g)."""
    target = bootstrap_target(bundle, phi, batch)
    q = q_value(head, batch.s_h, batch.a_h, encode(phi, batch.s_h, batch.g))
    return ad.reduce_mean(ad.square(ad.subtract(ad.constant(target), q)))


def implicit_value_loss(bundle, head, phi, batch):
    """Expectile regression of V(s_h, g) toward the target Q of the dataset action."""
    with ad.no_grad():
        z_bar = encode(phi, batch.s_h, batch.g, params=bundle.target_encoder)
        q_bar = q_value(head, batch.s_h, batch.a_h, z_bar, params=head.target).values
    v = value(bundle, batch.s_h, encode(phi, batch.s_h, batch.g))
    return expectile_loss(ad.subtract(ad.constant(q_bar), v), bundle.kappa)


def q_advantage(bundle, head, phi, batch):
    """Q(s_h, a_h, g) - V(s_h, g), for flat AWR extraction."""
    with ad.no_grad():
        z = encode(phi, batch.s_h, batch.g)
        q = q_value(head, batch.s_h, batch.a_h, z).values
        return q - value(bundle, batch.s_h, z).values
