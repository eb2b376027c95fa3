"""Joint training loop: critic + encoder, then high and low policies, then Polyak targets."""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from hifql import autodiff as ad
from hifql import critic as critic_mod
from hifql import gaussian, maze_registry
from hifql import meanflow as mf
from hifql.config import RUN_CONTROL, TrainConfig
from hifql.dataset import load_dataset, sample_batch
from hifql.errors import CheckpointError, ConfigError, NumericFault
from hifql.lejepa import SigregConfig, build_views, create_encoder, lejepa_components
from hifql.nn import AdamState, MlpSpec, adam_step, ema_update, read_blob_dir, write_blob_dir

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step",
    "value_loss",
    "lejepa_loss",
    "sigreg",
    "pred_loss",
    "high_mf_loss",
    "low_mf_loss",
    "mean_abs_adv_high",
    "mean_abs_adv_low",
    "mean_awr_weight",
    "q_loss",
)
METRICS_FILE = "metrics.csv"
CHECKPOINT_FORMAT = "hifql-train"
CHECKPOINT_VERSION = 1

FLAT_ALGORITHMS = ("gcbc", "gcivl", "gciql")
MEANFLOW_ALGORITHMS = ("hifql", "fm-multistep")


@dataclass
class TrainState:
    cfg: TrainConfig
    step: int
    obs_dim: int
    act_dim: int
    subgoal_k: int
    encoder: object
    critic: object
    high: object
    low: object
    optimizers: dict
    rng: np.random.Generator
    metrics: deque
    q: object = None

    @property
    def sigreg_cfg(self):
        cfg = self.cfg
        return SigregConfig(cfg.num_projections, cfg.sigreg_sigma, cfg.alpha, cfg.lam,
                            cfg.quadrature_nodes)

    @property
    def awr(self):
        return mf.AwrConfig(self.cfg.beta, self.cfg.awr_clip)

    def networks(self):
        """Trainable parameter sets keyed like their optimizers."""
        nets = {"value": self.critic.params, "encoder": self.encoder.params}
        if self.high is not None:
            nets["high"] = self.high.params
        nets["low"] = self.low.params
        if self.q is not None:
            nets["q"] = self.q.params
        return nets


def resolve_subgoal_k(cfg):
    return cfg.subgoal_k if cfg.subgoal_k is not None else maze_registry.subgoal_k(cfg.env)


def resolve_epsilon(cfg):
    maze = maze_registry.get_maze(cfg.env)
    if maze is None:
        raise ConfigError(f"Maze '{cfg.env}' not found in registry")
    return float(maze["epsilon"])


def init_state(cfg, obs_dim, act_dim):
    """Fresh networks, optimizers and RNG stream, all derived from ``cfg.seed``."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    hidden, act, ln = tuple(cfg.hidden_dims), cfg.activation, cfg.value_layer_norm
    d = cfg.rep_dim
    encoder = create_encoder(obs_dim, d, hidden, act, ln, seed=seeds[0])
    critic = critic_mod.create_critic(obs_dim, encoder, hidden, act, ln, cfg.kappa, cfg.gamma,
                                      resolve_epsilon(cfg), seed=seeds[1])
    goal_dim = obs_dim if cfg.high_goal_input == "raw" else d

    high = None
    if cfg.algorithm in MEANFLOW_ALGORITHMS:
        high = mf.create_policy("high", d, obs_dim + goal_dim, hidden, act, seed=seeds[2])
        low = mf.create_policy("low", act_dim, obs_dim + d, hidden, act, seed=seeds[3])
    elif cfg.algorithm == "hiql-gaussian":
        high = gaussian.create_gaussian("high", d, obs_dim + goal_dim, hidden, act,
                                        seed=seeds[2])
        low = gaussian.create_gaussian("low", act_dim, obs_dim + d, hidden, act, seed=seeds[3])
    else:
        low = gaussian.create_gaussian("low", act_dim, 2 * obs_dim, hidden, act, seed=seeds[3])

    lrs = {"value": cfg.lr_value, "encoder": cfg.lr_encoder, "high": cfg.lr_high,
           "low": cfg.lr_low}
    q_head = None
    if cfg.algorithm == "gciql":
        q_head = critic_mod.create_q_head(obs_dim, act_dim, encoder, hidden, act, ln,
                                          seed=seeds[5])
        lrs["q"] = cfg.lr_value
    state = TrainState(
        cfg=cfg,
        step=0,
        obs_dim=obs_dim,
        act_dim=act_dim,
        subgoal_k=resolve_subgoal_k(cfg),
        encoder=encoder,
        critic=critic,
        high=high,
        low=low,
        optimizers={},
        rng=np.random.default_rng(seeds[4]),
        metrics=deque(maxlen=cfg.metrics_window),
        q=q_head,
    )
    state.optimizers = {
        name: AdamState.create(params, lrs[name]) for name, params in state.networks().items()
    }
    return state


# --- objectives ---


def critic_objective(state, batch):
    """L_V + lambda * L_LeJEPA; returns the loss tensor and its scalar parts.

    With a Q head, L_V is the expectile fit of V to the target Q plus the Bellman error of Q.
    """
    cfg = state.cfg
    q_part = 0.0
    if state.q is None:
        vloss = critic_mod.value_loss(state.critic, state.encoder, batch)
    else:
        qloss = critic_mod.q_loss(state.critic, state.q, state.encoder, batch)
        vloss = ad.add(critic_mod.implicit_value_loss(state.critic, state.q, state.encoder,
                                                      batch), qloss)
        q_part = qloss.item()
    views = build_views(state.encoder, batch, cfg.aug_noise, state.rng)
    lejepa, sig, pred = lejepa_components(views, state.sigreg_cfg, state.rng)
    loss = vloss
    if cfg.lam > 0:
        loss = ad.add(vloss, ad.scale(lejepa, cfg.lam))
    parts = {"value_loss": vloss.item(), "lejepa_loss": lejepa.item(), "sigreg": sig.item(),
             "pred_loss": pred.item(), "q_loss": q_part}
    return loss, parts


def high_objective(state, batch, adv):
    x0, cond = mf.high_fields(state.encoder, batch, state.cfg.high_goal_input)
    if state.cfg.algorithm == "fm-multistep":
        return mf.weighted_fm_loss(state.high, x0, cond, adv, state.awr, state.rng)
    return mf.weighted_mf_loss(state.high, x0, cond, adv, state.awr, state.rng,
                               state.cfg.rho_equal)


def low_objective(state, batch, adv):
    x0, cond = mf.low_fields(state.encoder, batch)
    if state.cfg.algorithm == "fm-multistep":
        return mf.weighted_fm_loss(state.low, x0, cond, adv, state.awr, state.rng)
    return mf.weighted_mf_loss(state.low, x0, cond, adv, state.awr, state.rng,
                               state.cfg.rho_equal)


def _check(name, loss, step):
    value = loss.item()
    if not np.isfinite(value):
        raise NumericFault(name, f"loss is {value}", step=step)
    return value


def _minimize(state, names, objective):
    """Record ``objective()`` on a fresh tape, backprop, and step the named optimizers."""
    with ad.Tape() as tape:
        loss, extra = objective()
    _check(names[0] + "_loss", loss, state.step)
    nets = state.networks()
    for name in names:
        nets[name].zero_grad()
    ad.backward(loss, tape)
    for name in names:
        adam_step(state.optimizers[name], nets[name])
    return loss.item(), extra


def critic_update(state, batch):
    names = ("value", "encoder", "q") if state.q is not None else ("value", "encoder")
    _, parts = _minimize(state, names, lambda: critic_objective(state, batch))
    return parts


def update_targets(state):
    ema_update(state.critic.target, state.critic.params, state.cfg.tau)
    ema_update(state.critic.target_encoder, state.encoder.params, state.cfg.tau)
    if state.q is not None:
        ema_update(state.q.target, state.q.params, state.cfg.tau)


def hifql_policy_update(state, batch):
    """Mean-flow (or flow-matching) updates of both levels on critic advantages."""
    adv = critic_mod.advantages(state.critic, state.encoder, batch)
    high_loss, w_high = _minimize(state, ("high",),
                                  lambda: high_objective(state, batch, adv.high))
    low_loss, w_low = _minimize(state, ("low",), lambda: low_objective(state, batch, adv.low))
    return _policy_metrics(high_loss, low_loss, adv.high, adv.low, w_high, w_low)


def hiql_gaussian_update(state, batch):
    """AWR log-likelihood at both levels, sharing the critic and encoder."""
    adv = critic_mod.advantages(state.critic, state.encoder, batch)
    w_high = mf.awr_weights(adv.high, state.awr, "high advantage")
    w_low = mf.awr_weights(adv.low, state.awr, "low advantage")
    x_high, cond_high = mf.high_fields(state.encoder, batch, state.cfg.high_goal_input)
    x_low, cond_low = mf.low_fields(state.encoder, batch)
    high_loss, _ = _minimize(
        state, ("high",),
        lambda: (gaussian.awr_nll_loss(state.high, cond_high, x_high, w_high), None),
    )
    low_loss, _ = _minimize(
        state, ("low",),
        lambda: (gaussian.awr_nll_loss(state.low, cond_low, x_low, w_low), None),
    )
    return _policy_metrics(high_loss, low_loss, adv.high, adv.low, w_high, w_low)


def flat_policy_update(state, batch, adv=None):
    """GCBC when ``adv`` is None, otherwise AWR on the given advantage (GCIVL, GCIQL)."""
    weights = None if adv is None else mf.awr_weights(adv, state.awr)
    cond = np.concatenate([batch.s_h, batch.g], axis=-1)
    loss, _ = _minimize(
        state, ("low",),
        lambda: (gaussian.awr_nll_loss(state.low, cond, batch.a_h, weights), None),
    )
    zeros = np.zeros(len(batch), dtype=np.float32)
    return _policy_metrics(0.0, loss, zeros, zeros if adv is None else adv, None, weights)


def _policy_metrics(high_loss, low_loss, adv_high, adv_low, w_high, w_low):
    weights = [w for w in (w_high, w_low) if w is not None]
    mean_w = float(np.mean(np.concatenate(weights))) if weights else 1.0
    return {
        "high_mf_loss": float(high_loss),
        "low_mf_loss": float(low_loss),
        "mean_abs_adv_high": float(np.mean(np.abs(adv_high))),
        "mean_abs_adv_low": float(np.mean(np.abs(adv_low))),
        "mean_awr_weight": mean_w,
    }


def train_step(state, ds, cfg=None):
    """One step of the joint loop on a single shared batch; returns the metrics record."""
    cfg = cfg or state.cfg
    with ad.check_numerics(cfg.debug_numerics):
        mix = cfg.actor_goal_mix if cfg.algorithm == "gcbc" else cfg.goal_mix
        batch = sample_batch(ds, cfg.batch_size, state.subgoal_k, mix, state.rng, cfg.gamma)
        if cfg.algorithm == "gcbc":
            record = {"value_loss": 0.0, "lejepa_loss": 0.0, "sigreg": 0.0, "pred_loss": 0.0,
                      "q_loss": 0.0}
            record.update(flat_policy_update(state, batch))
        else:
            record = critic_update(state, batch)
            if cfg.algorithm in MEANFLOW_ALGORITHMS:
                record.update(hifql_policy_update(state, batch))
            elif cfg.algorithm == "hiql-gaussian":
                record.update(hiql_gaussian_update(state, batch))
            elif cfg.algorithm == "gciql":
                adv = critic_mod.q_advantage(state.critic, state.q, state.encoder, batch)
                record.update(flat_policy_update(state, batch, adv))
            else:
                adv = critic_mod.flat_advantage(state.critic, state.encoder, batch)
                record.update(flat_policy_update(state, batch, adv))
            update_targets(state)
    state.step += 1
    record = {"step": state.step, **{k: float(record[k]) for k in METRIC_COLUMNS[1:]}}
    state.metrics.append(record)
    return record


# --- checkpoints ---


def checkpoint_dir(out_dir, step):
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}"


def save_checkpoint(state, path):
    arrays = {}
    for name, params in state.networks().items():
        arrays.update({f"{name}/{k}": v for k, v in params.arrays().items()})
        arrays.update({f"opt/{name}/{k}": v for k, v in state.optimizers[name].arrays().items()})
    arrays.update({f"value_target/{k}": v for k, v in state.critic.target.arrays().items()})
    arrays.update(
        {f"encoder_target/{k}": v for k, v in state.critic.target_encoder.arrays().items()}
    )
    if state.q is not None:
        arrays.update({f"q_target/{k}": v for k, v in state.q.target.arrays().items()})
    specs = {"value": state.critic.spec, "encoder": state.encoder.spec, "low": state.low.spec}
    if state.high is not None:
        specs["high"] = state.high.spec
    if state.q is not None:
        specs["q"] = state.q.spec
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "seed": state.cfg.seed,
        "obs_dim": state.obs_dim,
        "act_dim": state.act_dim,
        "config": state.cfg.to_dict(),
        "specs": {k: v.to_dict() for k, v in specs.items()},
        "optimizer_steps": {k: opt.step for k, opt in state.optimizers.items()},
        "rng_state": state.rng.bit_generator.state,
        "metrics": list(state.metrics),
    }
    return write_blob_dir(path, manifest, arrays)


def load_checkpoint(path):
    """Rebuild a TrainState, including its RNG stream and metric ring buffer."""
    manifest, arrays = read_blob_dir(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a training checkpoint")
    cfg = TrainConfig.from_dict(manifest["config"])
    state = init_state(cfg, manifest["obs_dim"], manifest["act_dim"])
    for name, spec in manifest["specs"].items():
        if MlpSpec.from_dict(spec) != _spec_of(state, name):
            raise CheckpointError(f"network '{name}' does not match the stored config")

    def section(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    for name, params in state.networks().items():
        params.load_arrays(section(f"{name}/"))
        state.optimizers[name].load_arrays(section(f"opt/{name}/"),
                                           manifest["optimizer_steps"][name])
    state.critic.target.load_arrays(section("value_target/"))
    state.critic.target_encoder.load_arrays(section("encoder_target/"))
    if state.q is not None:
        state.q.target.load_arrays(section("q_target/"))
    state.step = int(manifest["step"])
    state.rng.bit_generator.state = manifest["rng_state"]
    state.metrics.extend(manifest["metrics"])
    return state


def _spec_of(state, name):
    return {"value": state.critic.spec, "encoder": state.encoder.spec,
            "high": state.high.spec if state.high is not None else None,
            "low": state.low.spec, "q": state.q.spec if state.q is not None else None}[name]


# --- metrics file ---


def _format_row(record):
    return [record["step"], *(repr(float(record[k])) for k in METRIC_COLUMNS[1:])]


def _prepare_metrics(path, keep_until=None):
    """Start a fresh CSV, or keep rows up to ``keep_until`` when resuming."""
    rows = []
    if keep_until is not None and path.exists():
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) <= keep_until]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(rows)


def _flush_metrics(path, pending):
    if not pending:
        return
    with open(path, "a", newline="") as f:
        csv.writer(f).writerows(_format_row(r) for r in pending)
    pending.clear()


def read_metrics(path):
    """Metrics CSV as a list of dicts with float values."""
    with open(path, newline="") as f:
        return [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]


def train(cfg, resume=None, progress=True):
    """Run ``cfg.steps`` steps (on top of ``resume`` if given); return the last checkpoint."""
    dataset_path = Path(cfg.dataset)
    if not dataset_path.exists():
        raise FileNotFoundError(f"Dataset not found: {dataset_path}")
    ds = load_dataset(dataset_path)

    if resume is not None:
        state = load_checkpoint(resume)
        if state.cfg.learned_fields() != cfg.learned_fields():
            logger.warning("resuming with the checkpoint's hyperparameters; only %s are taken "
                           "from the new config", ", ".join(RUN_CONTROL))
        # state.cfg stays as stored so checkpoints keep describing the original run
        run_cfg = state.cfg.replace(**{k: getattr(cfg, k) for k in RUN_CONTROL})
    else:
        state = init_state(cfg, ds.obs_dim, ds.act_dim)
        run_cfg = cfg
    if (ds.obs_dim, ds.act_dim) != (state.obs_dim, state.act_dim):
        raise ConfigError(
            f"dataset dims ({ds.obs_dim}, {ds.act_dim}) do not match the networks "
            f"({state.obs_dim}, {state.act_dim})"
        )

    out_dir = Path(run_cfg.out_dir)
    metrics_path = out_dir / METRICS_FILE
    _prepare_metrics(metrics_path, keep_until=state.step if resume is not None else None)
    logger.info("training %s for %d steps from step %d into %s", run_cfg.algorithm,
                run_cfg.steps, state.step, out_dir)

    pending = []
    last = None
    bar = tqdm(range(run_cfg.steps), desc=run_cfg.algorithm, disable=not progress)
    for _ in bar:
        record = train_step(state, ds, run_cfg)
        pending.append(record)
        if state.step % 50 == 0:
            bar.set_postfix(v=f"{record['value_loss']:.3f}", hi=f"{record['high_mf_loss']:.3f}",
                            lo=f"{record['low_mf_loss']:.3f}")
        if state.step % run_cfg.checkpoint_every == 0:
            _flush_metrics(metrics_path, pending)
            last = save_checkpoint(state, checkpoint_dir(out_dir, state.step))
    _flush_metrics(metrics_path, pending)
    final = checkpoint_dir(out_dir, state.step)
    if last != final:
        last = save_checkpoint(state, final)
    logger.info("finished at step %d, checkpoint %s", state.step, last)
    return last
