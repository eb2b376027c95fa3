"""Fast oracle and invariant checks over the numerical core."""

import tempfile
from pathlib import Path

import numpy as np

from hifql import autodiff as ad
from hifql import meanflow as mf
from hifql.critic import expectile_loss
from hifql.dataset import collect, load_dataset, save_dataset
from hifql.lejepa import SigregConfig, sigreg
from hifql.maze_registry import make_env
from hifql.nn import AdamState, MlpSpec, ParamSet, adam_step, ema_update, init, mlp_forward

SIGREG_CONSTANT = np.sqrt(2 * np.pi) - 2 * np.sqrt(np.pi) + np.sqrt(2 * np.pi / 3)


def rel_err(a, b):
    a, b = np.ravel(a).astype(np.float64), np.ravel(b).astype(np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


def central_differences(f, x, h=1e-3):
    """Central differences of scalar f(v) around v = x, evaluated in float64."""
    v = np.array(x, dtype=np.float64)
    grad = np.zeros_like(v)
    with ad.precision(np.float64), ad.no_grad():
        for idx in np.ndindex(*v.shape):
            old = v[idx]
            v[idx] = old + h
            up = f(v)
            v[idx] = old - h
            down = f(v)
            v[idx] = old
            grad[idx] = (up - down) / (2 * h)
    return grad


def check_gradients(trials=100):
    """Reverse-mode gradient of a random 2-layer MLP loss vs float64 central differences."""
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        spec = MlpSpec(3, (8,), 2, "gelu")
        params = init(spec, trial)
        x = rng.standard_normal((4, 3)).astype(np.float32)

        def loss(weight, params=params, spec=spec, x=x):
            swapped = ParamSet({**dict(params.items()), "l0.weight": weight})
            return ad.reduce_sum(ad.square(mlp_forward(swapped, spec, x)))

        w = params["l0.weight"]
        with ad.Tape() as tape:
            root = loss(w)
        ad.backward(root, tape)
        numeric = central_differences(lambda v, loss=loss: loss(ad.constant(v)).item(),
                                       w.values)
        worst = max(worst, rel_err(w.grad, numeric))
    return worst < 1e-3, f"max rel err over {trials} trials {worst:.2e}"


def check_jvp(trials=100, eps=1e-3):
    """jvp along (v, 0, 1) vs a float64 directional central difference."""
    policy = mf.create_policy("high", 2, 0, (16, 16), "gelu", seed=1)
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        x = rng.standard_normal((8, 2))
        v = rng.standard_normal((8, 2))
        r = np.full((8, 1), 0.25)
        t = np.full((8, 1), 0.75)
        tangents = [v, np.zeros_like(r), np.ones_like(t)]
        _, tangent = ad.jvp(lambda *a: policy(*a), [x, r, t], tangents)
        with ad.no_grad(), ad.precision(np.float64):
            x32, v32 = (a.astype(np.float32).astype(np.float64) for a in (x, v))
            up = policy(x32 + eps * v32, r, ad.constant(t + eps)).values
            down = policy(x32 - eps * v32, r, ad.constant(t - eps)).values
        worst = max(worst, rel_err(tangent.values, (up - down) / (2 * eps)))
    return worst < 1e-3, f"max rel err over {trials} trials {worst:.2e}"


def check_expectile():
    a = expectile_loss(np.array([2.0]), 0.7).item()
    b = expectile_loss(np.array([-2.0]), 0.7).item()
    x = np.random.default_rng(0).standard_normal(64)
    c = expectile_loss(x, 0.5).item()
    ok = abs(a - 2.8) < 1e-6 and abs(b - 1.2) < 1e-6 and abs(c - 0.5 * np.mean(x**2)) < 1e-5
    return ok, f"L(2)={a:.4f}, L(-2)={b:.4f}"


def check_meanflow_boundary():
    """At r = t the mean-flow target collapses to x1 - x0."""
    rng = np.random.default_rng(0)
    policy = mf.create_policy("high", 2, 0, (16,), "gelu", seed=3)
    x0 = rng.standard_normal((16, 2)).astype(np.float32)
    x1 = rng.standard_normal((16, 2)).astype(np.float32)
    t = rng.random(16).astype(np.float32)
    target = mf.meanflow_target(policy, x0, x1, mf.TimePair(t, t))
    same = bool(np.array_equal(target, x1 - x0))
    return same, "bitwise" if same else "differs"


def check_sigreg(n=256):
    cfg = SigregConfig()
    rng = np.random.default_rng(0)
    value = sigreg(np.zeros((n, 4), dtype=np.float32), cfg, rng).item()
    expected = n * SIGREG_CONSTANT
    rel = abs(value - expected) / expected
    return rel < 1e-3, f"{value:.3f} vs {expected:.3f}"


def check_adam():
    params = ParamSet({"w": ad.parameter(np.zeros(1))})
    w = params["w"]
    opt = AdamState.create(params, 0.1)
    for _ in range(500):
        w.grad = 2 * (w.values - 3)
        adam_step(opt, params)
    gap = abs(float(w.values[0]) - 3.0)
    return gap < 1e-2, f"|w - 3| = {gap:.2e}"


def check_ema():
    spec = MlpSpec(2, (4,), 1, "relu")
    target, online = init(spec, 0), init(spec, 1)

    def dist():
        return np.sqrt(sum(np.sum((t.values.astype(np.float64) - o.values) ** 2)
                           for t, o in zip(target, online)))

    before = dist()
    ema_update(target, online, 0.25)
    after = dist()
    return abs(after - 0.75 * before) < 1e-5 * before, f"{after:.5f} vs {0.75 * before:.5f}"


def check_dataset_roundtrip():
    env = make_env("small")
    ds = collect(env, "waypoint-noisy", episodes=2, horizon=20, seed=0)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_dataset(ds, Path(tmp) / "data.bin")
        back = load_dataset(path)
    same = all(np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
               for a, b in zip(ds.trajectories, back.trajectories))
    return same, f"{len(back.trajectories)} trajectories"


CHECKS = (
    ("autodiff gradients", check_gradients),
    ("jvp directional derivative", check_jvp),
    ("expectile identities", check_expectile),
    ("mean-flow boundary", check_meanflow_boundary),
    ("sigreg constant embedding", check_sigreg),
    ("adam quadratic bowl", check_adam),
    ("ema contraction", check_ema),
    ("dataset round-trip", check_dataset_roundtrip),
)


def run_selftest(checks=CHECKS):
    """Run every check, printing one status line each; returns the number of misses."""
    misses = 0
    total = len(checks)
    for i, (name, check) in enumerate(checks, 1):
        print(f"  [{i}/{total}] ", end="", flush=True)
        try:
            ok, detail = check()
        except Exception as e:  # a crashing check is reported, not raised
            ok, detail = False, f"{type(e).__name__}: {e}"
        print(f"{'OK' if ok else 'MISS'} {name} ({detail})")
        misses += not ok
    print(f"\n{total - misses}/{total} checks passed")
    return misses
