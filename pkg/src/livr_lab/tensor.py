"""Dense f64 tensors with reverse-mode automatic differentiation.

Every op is a plain function that takes ``Tensor`` inputs, computes the
forward value with numpy, and (when any input requires gradients) attaches a
closure that propagates the output gradient back to its inputs.  Broadcasting
is limited to leading dimensions: a right operand may match the trailing
shape of the left operand (biases, shared weights), nothing more.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
MASK_VALUE = -1e30


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised on misuse of the compute graph (double backward, bad loss)."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops inside record no graph."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routes go through the functional ops below
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite output from {op}")


def _make(out: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = op
    t._consumed = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the leading axes that were broadcast."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead < 0 or g.shape[lead:] != shape:
        raise ValueError(f"cannot reduce gradient {g.shape} to {shape}")
    return g.sum(axis=tuple(range(lead)))


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim == 0:
        return
    if big.shape[big.ndim - small.ndim:] != small.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "add")
    out = a.data + b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _make(out, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _make(out, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def backward(g):
        _accumulate(a, g * c)

    return _make(out, (a,), backward, "scale")


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    k = math.sqrt(2.0 / math.pi)
    inner = k * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = k * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner
        _accumulate(a, g * d)

    return _make(out, (a,), backward, "gelu")


def masked_fill(a: Tensor, mask: np.ndarray, value: float = MASK_VALUE) -> Tensor:
    """Replace entries where ``mask`` is True by ``value``.

    ``mask`` is a boolean array broadcastable to ``a``.  Filled entries pass
    no gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, a.shape)
    except ValueError as exc:
        raise ValueError(f"masked_fill: mask {mask.shape} not broadcastable to {a.shape}") from exc
    out = np.where(full, value, a.data)

    def backward(g):
        _accumulate(a, np.where(full, 0.0, g))

    return _make(out, (a,), backward, "masked_fill")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, gb)

    return _make(out, (a, b), backward, "matmul")


# ---------------------------------------------------------------- normalization

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accumulate(a, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (a,), backward, "softmax")


def layernorm(a: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
              eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = tuple(t for t in (a, gamma, beta) if t is not None)

    def backward(g):
        gx = g * gamma.data if gamma is not None else g
        if a.requires_grad:
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accumulate(a, dx)
        if gamma is not None and gamma.requires_grad:
            _accumulate(gamma, _reduce_to(g * xhat, gamma.shape))
        if beta is not None and beta.requires_grad:
            _accumulate(beta, _reduce_to(g, beta.shape))

    return _make(out, parents, backward, "layernorm")


# ---------------------------------------------------------------- indexing and shape

def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embed: id out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
            _accumulate(table, gt)

    return _make(out, (table,), backward, "embed")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(out, (a,), backward, "transpose")


def take(a: Tensor, index) -> Tensor:
    """Indexing with slices, ints or integer arrays (repeats accumulate)."""
    out = a.data[index]

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, index, g)
            _accumulate(a, ga)

    return _make(np.array(out, copy=True), (a,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.take(g, i, axis=axis))

    return _make(out, tensors, backward, "stack")


def total(a: Tensor) -> Tensor:
    """Sum of all entries (a scalar)."""
    out = np.array(a.data.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), backward, "sum")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = rng.random(a.shape) >= p
    factor = keep / (1.0 - p)
    out = a.data * factor

    def backward(g):
        _accumulate(a, g * factor)

    return _make(out, (a,), backward, "dropout")


# ---------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """Weighted sum of per-position negative log-likelihoods.

    ``logits`` is ``[..., V]``; ``targets`` are integer ids with the leading
    shape; ``weights`` has the same leading shape.  Positions with weight 0
    contribute exactly nothing, whatever their target (out-of-range targets
    are allowed there).
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=DTYPE)
    lead = logits.shape[:-1]
    if targets.shape != lead or weights.shape != lead:
        raise ValueError(f"cross_entropy: targets {targets.shape}/weights {weights.shape} vs logits {logits.shape}")
    active = weights != 0
    V = logits.shape[-1]
    if np.any(active & ((targets < 0) | (targets >= V))):
        raise IndexError("cross_entropy: target out of range at a weighted position")
    safe_t = np.where(active, targets, 0)
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(x - m).sum(axis=-1))
    picked = np.take_along_axis(x, safe_t[..., None], axis=-1)[..., 0]
    nll = np.where(active, lse - picked, 0.0)
    out = np.array((nll * weights).sum())

    def backward(g):
        p = np.exp(x - lse[..., None])
        np.put_along_axis(p, safe_t[..., None],
                          np.take_along_axis(p, safe_t[..., None], axis=-1) - 1.0, axis=-1)
        w = np.where(active, weights, 0.0)
        _accumulate(logits, p * (w * g)[..., None])

    return _make(out, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- graph traversal

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | dict[str, Tensor] | None = None):
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Returns a gradient map for ``params`` (a dict or a sequence); leaves that
    the loss does not depend on get exact zeros.  The graph is consumed: a
    second call on the same loss raises ``GraphError``.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward called twice on the same graph; re-run forward")
    order = topological_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones((), dtype=DTYPE)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        node._consumed = True
        if node._backward is not None:
            # intermediate buffers are released; leaves keep their grads
            node._backward = None
            node._parents = ()
            node.grad = None
    if params is None:
        return None
    items = params.items() if isinstance(params, dict) else enumerate(params)
    grads = {}
    for key, p in items:
        grads[key] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads
