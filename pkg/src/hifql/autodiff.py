"""Dense-array autodiff engine.

Tensors wrap float32 numpy buffers, or float64 inside ``precision(np.float64)``
for reference computations such as gradient checks. Every primitive computes its value and,
when any input carries a tangent, the forward-mode tangent in the same call
(dual-number style). Reverse-mode nodes are appended to the innermost active
``Tape`` while recording is enabled; ``backward`` replays that tape.

Broadcasting is limited to a leading batch dimension: two operands must have
equal shapes, or one shape must equal the other's shape without its first
axis. Anything else is an explicit op (``reshape``, ``concat``, ...).
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from hifql.errors import ContractViolation, NumericFault

DTYPE = np.float32

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715

_local = threading.local()


def _tapes() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _recording() -> bool:
    return getattr(_local, "recording", True) and bool(_tapes())


def _checking() -> bool:
    return getattr(_local, "check", True)


def _dtype():
    return getattr(_local, "dtype", DTYPE)


@contextmanager
def no_grad():
    """Suspend tape recording for the current thread."""
    previous = getattr(_local, "recording", True)
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = previous


@contextmanager
def check_numerics(enabled: bool):
    """Turn the per-op finiteness scan on or off for the current thread."""
    previous = _checking()
    _local.check = enabled
    try:
        yield
    finally:
        _local.check = previous


@contextmanager
def precision(dtype):
    """Compute in ``dtype`` (float32 or float64) for the current thread."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractViolation(f"unsupported precision {np.dtype(dtype).name}")
    previous = _dtype()
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """A float32 array with optional reverse-mode ``grad`` and forward-mode ``tangent``."""

    __slots__ = ("values", "grad", "tangent", "requires_grad", "is_leaf")

    def __init__(self, values, requires_grad=False, tangent=None):
        self.values = np.asarray(values, dtype=_dtype())
        self.grad: np.ndarray | None = None
        self.tangent: np.ndarray | None = None
        if tangent is not None:
            tangent = np.asarray(tangent, dtype=_dtype())
            if tangent.shape != self.values.shape:
                raise ContractViolation(
                    f"tangent shape {tangent.shape} does not match values {self.values.shape}"
                )
            self.tangent = tangent
        self.requires_grad = requires_grad
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flags = " requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(values) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    if isinstance(values, Tensor):
        return values
    return Tensor(values)


def parameter(values) -> Tensor:
    """Wrap an array as a leaf that receives gradients."""
    return Tensor(np.array(values, dtype=_dtype()), requires_grad=True)


@dataclass(eq=False)
class Node:
    """One recorded primitive: inputs, output and the adjoint map."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered record of primitives, replayed in reverse by ``backward``.

    A tape is single-owner. Use it as a context manager; nested tapes record
    into the innermost one only.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)
        return False


def _emit(op, value, inputs, vjp, tangent=None) -> Tensor:
    value = np.asarray(value, dtype=_dtype())
    if _checking() and not np.all(np.isfinite(value)):
        raise NumericFault(op)
    requires = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=requires)
    out.is_leaf = False
    if tangent is not None:
        out.tangent = np.asarray(tangent, dtype=_dtype())
    if requires:
        _tapes()[-1].nodes.append(Node(op, tuple(inputs), out, vjp))
    return out


def _has_tangent(*xs: Tensor) -> bool:
    return any(x.tangent is not None for x in xs)


def _tan(x: Tensor) -> np.ndarray:
    return x.tangent if x.tangent is not None else np.zeros_like(x.values)


def _conform(op: str, a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return
    raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


# --- elementwise binary ---


def add(a: Tensor, b: Tensor) -> Tensor:
    _conform("add", a, b)
    tangent = _tan(a) + _tan(b) if _has_tangent(a, b) else None
    return _emit(
        "add",
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        tangent,
    )


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _conform("subtract", a, b)
    tangent = _tan(a) - _tan(b) if _has_tangent(a, b) else None
    return _emit(
        "subtract",
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        tangent,
    )


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _conform("multiply", a, b)
    av, bv = a.values, b.values
    tangent = _tan(a) * bv + av * _tan(b) if _has_tangent(a, b) else None
    return _emit(
        "multiply",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
        tangent,
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = _dtype()(c)
    tangent = x.tangent * c if x.tangent is not None else None
    return _emit("scale", x.values * c, (x,), lambda g: (g * c,), tangent)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.values, b.values
    tangent = _tan(a) @ bv + av @ _tan(b) if _has_tangent(a, b) else None
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), tangent)


# --- elementwise unary ---


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.values)
    tangent = y * x.tangent if x.tangent is not None else None
    return _emit("exp", y, (x,), lambda g: (g * y,), tangent)


def log(x: Tensor) -> Tensor:
    xv = x.values
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xv)
    tangent = x.tangent / xv if x.tangent is not None else None
    return _emit("log", y, (x,), lambda g: (g / xv,), tangent)


def square(x: Tensor) -> Tensor:
    xv = x.values
    tangent = 2.0 * xv * x.tangent if x.tangent is not None else None
    return _emit("square", xv * xv, (x,), lambda g: (2.0 * xv * g,), tangent)


def relu(x: Tensor) -> Tensor:
    mask = (x.values > 0).astype(_dtype())
    tangent = x.tangent * mask if x.tangent is not None else None
    return _emit("relu", x.values * mask, (x,), lambda g: (g * mask,), tangent)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xv = x.values
    th = np.tanh(_GELU_C * (xv + _GELU_A * xv**3))
    y = 0.5 * xv * (1.0 + th)
    dy = 0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * _GELU_C * (1.0 + 3.0 * _GELU_A * xv * xv)
    tangent = dy * x.tangent if x.tangent is not None else None
    return _emit("gelu", y, (x,), lambda g: (g * dy,), tangent)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    dy = 1.0 - y * y
    tangent = dy * x.tangent if x.tangent is not None else None
    return _emit("tanh", y, (x,), lambda g: (g * dy,), tangent)


def cos(x: Tensor) -> Tensor:
    s = np.sin(x.values)
    tangent = -s * x.tangent if x.tangent is not None else None
    return _emit("cos", np.cos(x.values), (x,), lambda g: (-g * s,), tangent)


def sin(x: Tensor) -> Tensor:
    c = np.cos(x.values)
    tangent = c * x.tangent if x.tangent is not None else None
    return _emit("sin", np.sin(x.values), (x,), lambda g: (g * c,), tangent)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    xv = x.values
    mask = ((xv >= low) & (xv <= high)).astype(_dtype())
    tangent = x.tangent * mask if x.tangent is not None else None
    return _emit("clip", np.clip(xv, low, high), (x,), lambda g: (g * mask,), tangent)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine parameters)."""
    xv = x.values
    centered = xv - xv.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    y = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gy) * inv,)

    tangent = None
    if x.tangent is not None:
        dc = x.tangent - x.tangent.mean(axis=-1, keepdims=True)
        tangent = (dc - y * (y * dc).mean(axis=-1, keepdims=True)) * inv
    return _emit("layer_norm", y, (x,), vjp, tangent)


# --- reductions and shape ops ---


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(_dtype()),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(_dtype()),)

    tangent = x.tangent.sum(axis=axis) if x.tangent is not None else None
    return _emit("sum", x.values.sum(axis=axis), (x,), vjp, tangent)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    count = x.values.size if axis is None else shape[axis]

    def vjp(g):
        g = g / _dtype()(count)
        if axis is None:
            return (np.broadcast_to(g, shape).astype(_dtype()),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(_dtype()),)

    tangent = x.tangent.mean(axis=axis) if x.tangent is not None else None
    return _emit("mean", x.values.mean(axis=axis), (x,), vjp, tangent)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last (feature) axis."""
    if not tensors:
        raise ContractViolation("concat: no inputs")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.shape[:-1] != lead:
            raise ContractViolation(
                f"concat: leading shapes differ ({t.shape[:-1]} vs {lead})"
            )
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=-1))

    tangent = None
    if _has_tangent(*tensors):
        tangent = np.concatenate([_tan(t) for t in tensors], axis=-1)
    value = np.concatenate([t.values for t in tensors], axis=-1)
    return _emit("concat", value, tuple(tensors), vjp, tangent)


def take_features(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[..., start:stop]`` of the feature axis."""
    width = x.shape[-1]
    if not 0 <= start < stop <= width:
        raise ContractViolation(f"slice [{start}:{stop}] out of range for width {width}")
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=_dtype())
        full[..., start:stop] = g
        return (full,)

    tangent = x.tangent[..., start:stop] if x.tangent is not None else None
    return _emit("slice", x.values[..., start:stop], (x,), vjp, tangent)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape
    value = x.values.reshape(shape)
    tangent = x.tangent.reshape(shape) if x.tangent is not None else None
    return _emit("reshape", value, (x,), lambda g: (g.reshape(original),), tangent)


# --- drivers ---


def backward(root: Tensor, tape: Tape | None = None):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf on the tape."""
    if root.shape != ():
        raise ContractViolation(f"backward needs a scalar root, got shape {root.shape}")
    if tape is None:
        stack = _tapes()
        if not stack:
            raise ContractViolation("backward called without a tape")
        tape = stack[-1]
    adjoints: dict[int, np.ndarray] = {id(root): np.ones((), dtype=_dtype())}
    owners: dict[int, Tensor] = {id(root): root}
    for node in reversed(tape.nodes):
        g = adjoints.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + gi
            else:
                adjoints[key] = gi
                owners[key] = inp
    for key, g in adjoints.items():
        leaf = owners[key]
        if not (leaf.is_leaf and leaf.requires_grad):
            continue
        g = np.asarray(g, dtype=_dtype())
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def jvp(f: Callable[..., Tensor], primals: Sequence, tangents: Sequence):
    """Evaluate ``f`` and its directional derivative in one forward pass.

    Returns ``(f(primals), J_f . tangents)`` as tensors. Recording is
    suspended, so the result never depends on an active tape and no gradient
    flows through the tangent.
    """
    if len(primals) != len(tangents):
        raise ContractViolation(f"jvp: {len(primals)} primals but {len(tangents)} tangents")
    duals = []
    for p, t in zip(primals, tangents):
        pv = p.values if isinstance(p, Tensor) else np.asarray(p, dtype=_dtype())
        tv = t.values if isinstance(t, Tensor) else np.asarray(t, dtype=_dtype())
        if tv.shape != pv.shape:
            raise ContractViolation(f"jvp: tangent shape {tv.shape} != primal shape {pv.shape}")
        duals.append(Tensor(pv, tangent=tv))
    with no_grad():
        out = f(*duals)
    tangent = out.tangent if out.tangent is not None else np.zeros_like(out.values)
    return Tensor(out.values), Tensor(tangent)
