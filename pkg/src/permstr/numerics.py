"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a C-contiguous numpy array of dtype float32 or float64.
An operation whose inputs require gradients records a :class:`Node` on its
output; :func:`backward` orders those nodes into a :class:`Tape` and replays
them in reverse.

Broadcasting is deliberately narrow: only a bias whose shape equals the last
axis of the other operand may be broadcast in :func:`add`. Any other shape
mismatch raises :class:`DimensionError`.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


class NoValidTargetError(ContractError):
    """Every target of a masked loss was ignored."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on this thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass
class Node:
    op: str
    inputs: tuple
    backward: Callable  # grad_out -> tuple of grads (or None) aligned with inputs


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None
        self._node = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, node: Node | None = None) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = node is not None
        t.grad = None
        t._node = node
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t: Tensor):
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=like.dtype if like is not None else np.float32))


def _make(out: np.ndarray, op: str, inputs: tuple, bwd: Callable) -> Tensor:
    if grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor._wrap(out, Node(op, inputs, bwd))
    return Tensor._wrap(out)


def _check_dtypes(op: str, *ts: Tensor) -> None:
    if len({t.dtype for t in ts}) > 1:
        raise DimensionError(f"{op}: dtype mismatch {[str(t.dtype) for t in ts]}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias over the last axis of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_dtypes("add", a, b)
    if a.shape == b.shape:
        return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return _make(
            a.data + b.data, "add_bias", (a, b), lambda g: (g, g.reshape(-1, g.shape[-1]).sum(axis=0))
        )
    raise DimensionError(f"add: shapes {a.shape} and {b.shape} are incompatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_dtypes("sub", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} are incompatible")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    _check_dtypes("mul", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _make(out, "gelu", (x,), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return _make(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    return _make(out, "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), "transpose", (x,), lambda g: (np.transpose(g, inv),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the first axis."""
    parts = tuple(parts)
    _check_dtypes("concat_rows", *parts)
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1 or parts[0].ndim != 2:
        raise DimensionError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bwd(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), "concat_rows", parts, bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; the gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.intp).reshape(-1)
    n_rows = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= n_rows)]
        if bad.size:
            raise IndexError(f"gather_rows: id {int(bad[0])} out of range for {n_rows} rows")
    out = table.data[ids]

    def bwd(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, ids, g)
        return (acc,)

    return _make(out, "gather_rows", (table,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supports ``[..., m, k] @ [k, n]`` (a shared weight applied over leading
    axes) and ``[..., m, k] @ [..., k, n]`` with identical leading axes.
    """
    _check_dtypes("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k, n = bd.shape
        flat = ad.reshape(-1, k)
        out = (flat @ bd).reshape(ad.shape[:-1] + (n,))

        def bwd(g):
            g2 = g.reshape(-1, n)
            return (g @ bd.T, flat.T @ g2)

        return _make(out, "matmul", (a, b), bwd)
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch shapes {a.shape} and {b.shape} differ")

    def bwd_batched(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, "matmul", (a, b), bwd_batched)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# normalisation and attention pieces
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; entries equal to ``-inf`` get weight 0."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    e = np.exp(xd - m)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, "softmax", (x,), bwd)


def masked_fill(x: Tensor, keep: np.ndarray, value: float = -np.inf) -> Tensor:
    """Replace entries where ``keep`` is False by ``value``.

    ``keep`` is a constant boolean array broadcastable to ``x``; it carries no
    gradient and filled entries pass no gradient back.
    """
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
    out = np.where(keep, x.data, x.dtype.type(value))
    return _make(out, "masked_fill", (x,), lambda g: (np.where(keep, g, 0).astype(g.dtype, copy=False),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: last extent {d} vs gamma {gamma.shape}, beta {beta.shape}")
    _check_dtypes("layer_norm", x, gamma, beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    gd = gamma.data

    def bwd(g):
        lead = g.reshape(-1, d)
        dgamma = (lead * xhat.reshape(-1, d)).sum(axis=0)
        dbeta = lead.sum(axis=0)
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _make(xhat * gd + beta.data, "layer_norm", (x, gamma, beta), bwd)


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def masked_cross_entropy(logits: Tensor, targets, ignore: int) -> Tensor:
    """Mean negative log-likelihood over positions whose target is not ``ignore``."""
    if logits.ndim != 2:
        raise DimensionError(f"masked_cross_entropy: logits must be N x C, got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    if targets.shape[0] != n or n < 1:
        raise DimensionError(f"masked_cross_entropy: {n} logit rows vs {targets.shape[0]} targets")
    valid = targets != ignore
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoValidTargetError("masked_cross_entropy: every target is the ignore id")
    bad = targets[valid & ((targets < 0) | (targets >= c))]
    if bad.size:
        raise IndexError(f"masked_cross_entropy: target {int(bad[0])} out of range for {c} classes")
    rows = np.nonzero(valid)[0]
    cols = targets[rows]
    logp = log_softmax_np(logits.data[rows])
    loss = -logp[np.arange(rows.size), cols].sum() / n_valid
    out = np.asarray(loss, dtype=logits.dtype)

    def bwd(g):
        grad = np.zeros_like(logits.data)
        p = np.exp(logp)
        p[np.arange(rows.size), cols] -= 1.0
        grad[rows] = p * (g / n_valid)
        return (grad,)

    return _make(out, "masked_cross_entropy", (logits,), bwd)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Nodes reachable from a root, in topological (forward) order."""

    nodes: list = field(default_factory=list)  # list[(Tensor, Node)]

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t._node is None:
                continue
            if expanded:
                order.append((t, t._node))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t._node.inputs:
                if parent._node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring grad")
    tape = Tape.from_root(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for out, node in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    record: list | None = None,
) -> float:
    """Largest relative gap between tape and central-difference gradients.

    ``f`` re-evaluates a scalar loss from ``params`` (float64). With
    ``max_coords`` set, each parameter is probed at that many coordinates drawn
    from ``rng`` instead of at every coordinate. ``record``, when given,
    receives ``(param_index, flat_index, analytic, numeric)`` per probe.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ContractError("grad_check requires float64 parameters")
        p.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NumericalError(f"grad_check: non-finite loss at perturbed coordinate {i}")
                num = (fp - fm) / (2 * h)
                ana = float(analytic.reshape(-1)[i])
                if record is not None:
                    record.append((k, int(i), ana, num))
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst
