"""MLPs, Adam, Polyak targets and the checkpoint blob format."""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hifql import autodiff as ad
from hifql.autodiff import DTYPE, Tensor
from hifql.errors import CheckpointError, ContractViolation

logger = logging.getLogger(__name__)

ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu}
FINAL_ACTIVATIONS = ("none", "tanh")

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
_BLOB_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class MlpSpec:
    """Shape and nonlinearity of a dense network."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "gelu"
    final_activation: str = "none"
    layer_norm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ContractViolation(f"all MLP dims must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation '{self.activation}'")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ContractViolation(f"unknown final activation '{self.final_activation}'")

    def layer_shapes(self):
        """(fan_in, fan_out) per dense layer, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self):
        return sum(i * o + o for i, o in self.layer_shapes())

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "final_activation": self.final_activation,
            "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_dims=tuple(data["hidden_dims"]),
            output_dim=int(data["output_dim"]),
            activation=data.get("activation", "gelu"),
            final_activation=data.get("final_activation", "none"),
            layer_norm=bool(data.get("layer_norm", False)),
        )


class ParamSet:
    """Named parameter tensors in a stable order (``l0.weight``, ``l0.bias``, ...)."""

    def __init__(self, tensors):
        self._tensors: dict[str, Tensor] = dict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    @property
    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self):
        return sum(t.values.size for t in self._tensors.values())

    def copy(self):
        """Detached deep copy, e.g. for target networks."""
        return ParamSet({n: ad.parameter(t.values.copy()) for n, t in self._tensors.items()})

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def arrays(self):
        return {n: t.values for n, t in self._tensors.items()}

    def load_arrays(self, arrays):
        for name, t in self._tensors.items():
            if name not in arrays:
                raise CheckpointError(f"missing tensor '{name}'")
            if arrays[name].shape != t.shape:
                raise CheckpointError(
                    f"tensor '{name}' has shape {arrays[name].shape}, expected {t.shape}"
                )
            t.values[...] = arrays[name]


def init(spec, seed):
    """Fan-in uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_shapes()):
        bound = np.sqrt(6.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)
        tensors[f"l{i}.weight"] = ad.parameter(weight)
        tensors[f"l{i}.bias"] = ad.parameter(np.zeros(fan_out, dtype=DTYPE))
    return ParamSet(tensors)


def mlp_forward(params, spec, x):
    """Batched forward pass; a 1-D input is treated as a batch of one."""
    x = ad.constant(x)
    if x.shape[-1] != spec.input_dim:
        raise ContractViolation(
            f"MLP expects input width {spec.input_dim}, got {x.shape[-1]}"
        )
    squeeze = x.ndim == 1
    h = ad.reshape(x, (1, spec.input_dim)) if squeeze else x
    activation = ACTIVATIONS[spec.activation]
    n_layers = len(spec.layer_shapes())
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, params[f"l{i}.weight"]), params[f"l{i}.bias"])
        if i < n_layers - 1:
            if spec.layer_norm:
                h = ad.layer_norm(h)
            h = activation(h)
    if spec.final_activation == "tanh":
        h = ad.tanh(h)
    if squeeze:
        h = ad.reshape(h, (spec.output_dim,))
    return h


# --- optimisation ---


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            m={n: np.zeros_like(t.values) for n, t in params.items()},
            v={n: np.zeros_like(t.values) for n, t in params.items()},
        )

    def arrays(self):
        out = {f"m/{n}": a for n, a in self.m.items()}
        out.update({f"v/{n}": a for n, a in self.v.items()})
        return out

    def load_arrays(self, arrays, step):
        for n in self.m:
            self.m[n] = np.array(arrays[f"m/{n}"], dtype=DTYPE)
            self.v[n] = np.array(arrays[f"v/{n}"], dtype=DTYPE)
        self.step = int(step)


def adam_step(state, params):
    """Bias-corrected Adam update in place, then clear every grad."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractViolation(f"adam_step: parameter '{name}' has no gradient")
        if name not in state.m:
            raise ContractViolation(f"adam_step: no moment buffers for '{name}'")
    state.step += 1
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    c1 = DTYPE(1.0 - state.beta1**state.step)
    c2 = DTYPE(1.0 - state.beta2**state.step)
    lr, eps = DTYPE(state.lr), DTYPE(state.eps)
    for name, p in params.items():
        g = p.grad
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        update = lr * (state.m[name] / c1) / (np.sqrt(state.v[name] / c2) + eps)
        p.values[...] = p.values - update
        p.grad = None


def ema_update(target, online, tau):
    """target <- (1 - tau) * target + tau * online, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ContractViolation(f"tau must be in [0, 1], got {tau}")
    if target.names != online.names:
        raise ContractViolation("ema_update: parameter sets do not match")
    keep, mix = DTYPE(1.0 - tau), DTYPE(tau)
    for name, t in target.items():
        o = online[name]
        if o.shape != t.shape:
            raise ContractViolation(f"ema_update: shape mismatch on '{name}'")
        t.values[...] = keep * t.values + mix * o.values


# --- checkpoint blobs ---


def write_blob_dir(path, manifest, arrays):
    """Write ``manifest.json`` + ``params.bin`` into ``path`` atomically.

    The directory is assembled next to its destination and renamed into place.
    An existing checkpoint at ``path`` is moved aside first and only deleted once
    the new one is in place, so some complete checkpoint exists at every moment.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, array in arrays.items():
        data = np.ascontiguousarray(array, dtype=_BLOB_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(array)), "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    doc = dict(manifest)
    doc["tensors"] = entries
    doc["blob_bytes"] = offset

    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    old = None
    try:
        with open(tmp / BLOB_NAME, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
        with open(tmp / MANIFEST_NAME, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        if path.exists():
            old = tmp.with_name(tmp.name + ".old")
            os.replace(path, old)
        os.replace(tmp, path)
    except BaseException:
        if old is not None and old.exists() and not path.exists():
            os.replace(old, path)
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)
    logger.debug("wrote %d tensors (%d bytes) to %s", len(entries), offset, path)
    return path


def read_blob_dir(path):
    """Return ``(manifest, arrays)`` from a directory written by ``write_blob_dir``."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"Checkpoint manifest not found: {manifest_path}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed manifest {manifest_path}: {e}") from e
    blob = (path / BLOB_NAME).read_bytes()
    if len(blob) != manifest.get("blob_bytes"):
        raise CheckpointError(
            f"blob size mismatch: {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}"
        )
    arrays = {}
    for entry in manifest["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        flat = np.frombuffer(blob[start:stop], dtype=_BLOB_DTYPE).astype(DTYPE)
        arrays[entry["name"]] = flat.reshape(entry["shape"])
    return manifest, arrays


def save_params(path, params, spec, seed=None, step=0):
    """Checkpoint a single network."""
    manifest = {"spec": spec.to_dict(), "names": params.names, "seed": seed, "step": step}
    return write_blob_dir(path, manifest, params.arrays())


def load_params(path):
    """Inverse of ``save_params``; returns ``(spec, params, manifest)``."""
    manifest, arrays = read_blob_dir(path)
    spec = MlpSpec.from_dict(manifest["spec"])
    params = init(spec, 0)
    if manifest["names"] != params.names:
        raise CheckpointError(f"parameter names {manifest['names']} do not match spec")
    params.load_arrays(arrays)
    return spec, params, manifest
