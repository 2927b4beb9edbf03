"""Minimal dense tensor with reverse-mode automatic differentiation.

Only the operations needed by the gesture model are provided.  Every
differentiable op records its parents and a backward closure on the
output tensor; :func:`backward` replays the recorded ops in exact reverse
execution order.  The tape is rebuilt on each forward pass.

Storage is a numpy array.  Training runs in 32-bit floats; the
``wide_precision`` context switches newly created tensors to 64-bit for
gradient checks.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_state = threading.local()
_seq = itertools.count()

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    pass


class EmptyAxisError(ValueError):
    pass


class RankError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def wide_precision():
    """Create new tensors in float64 inside the block."""
    prev = default_dtype()
    _state.dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _state.dtype = prev


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense n-d array with an optional gradient.

    ``data`` is a C-contiguous numpy array; ``grad`` (when populated) has the
    same shape.  Tensors produced by recorded ops keep references to their
    parents until :func:`backward` consumes the graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = np.dtype(dtype) if dtype is not None else default_dtype()
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)
        self._consumed = False

    # -- introspection --------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def transpose(self, ax1: int = -1, ax2: int = -2) -> "Tensor":
        return transpose(self, ax1, ax2)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = default_dtype()
    return Tensor(np.asarray(x), dtype=dtype)


def _record(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    out._consumed = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), fn)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), fn)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _record(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _record(out, (x,), lambda g: (g * (out > 0),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    out = (xd * cdf).astype(x.dtype, copy=False)

    def fn(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return ((g * (cdf + xd * pdf)).astype(x.dtype, copy=False),)

    return _record(out, (x,), fn)


# -- shape ops --------------------------------------------------------------

def transpose(x: Tensor, ax1: int = -1, ax2: int = -2) -> Tensor:
    out = np.ascontiguousarray(np.swapaxes(x.data, ax1, ax2))
    return _record(out, (x,), lambda g: (np.swapaxes(g, ax1, ax2),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from exc
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != ax and n != m for i, (n, m) in enumerate(zip(ref.shape, t.shape))
        ):
            raise ShapeError(f"cannot concatenate shapes {ref.shape} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(out, tensors, fn)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``."""
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _record(out, (a, b), fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., in] @ weight[out, in].T + bias[out]`` as one recorded op."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input width {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out += bias.data
    out = out.reshape(lead + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record(out, parents, fn)


# -- normalization ----------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise EmptyAxisError("layer_norm over an empty last axis")
    if eps <= 0:
        raise ValueError("eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def fn(g):
        gxhat = g * gamma.data
        gx = rstd * (
            gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _record(out.astype(x.dtype, copy=False), (x, gamma, beta), fn)


# -- reductions -------------------------------------------------------------

def max_reduce(x: Tensor, axis: int = -2, with_index: bool = True) -> tuple[Tensor, np.ndarray | None]:
    """Max over ``axis``; gradient goes to the first (lowest-index) maximum.

    ``with_index=False`` skips the argmax (slow along strided axes) and
    returns ``None`` in its place.
    """
    ax = axis % x.ndim
    if x.shape[ax] == 0:
        raise EmptyAxisError(f"max_reduce over empty axis {axis} of shape {x.shape}")
    vals = x.data.max(axis=ax)
    idx = np.argmax(x.data, axis=ax) if with_index else None

    def fn(g):
        hit = x.data == np.expand_dims(vals, ax)
        if np.any(hit.sum(axis=ax) > 1):  # ties: keep the first maximum only
            first = idx if idx is not None else np.argmax(x.data, axis=ax)
            hit = np.zeros_like(hit)
            np.put_along_axis(hit, np.expand_dims(first, ax), True, axis=ax)
        return ((hit * np.expand_dims(g, ax)).astype(x.dtype, copy=False),)

    return _record(vals, (x,), fn), idx


def sum_all(x: Tensor) -> Tensor:
    return _record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return _record(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),)
    )


def mean_axis(x: Tensor, axis: int) -> Tensor:
    ax = axis % x.ndim
    n = x.shape[ax]
    out = x.data.mean(axis=ax)
    return _record(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, ax) / n, x.shape).copy(),))


# -- losses -----------------------------------------------------------------

def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean softmax cross-entropy of ``logits[..., C]`` against integer ``labels[...]``.

    ``weights`` (broadcastable to ``labels``) turns the mean into a weighted
    mean; all-zero weights give a zero loss.
    """
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if c < 2:
        raise ShapeError(f"need at least two classes, got logits of shape {logits.shape}")
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    logp = log_softmax_np(logits.data)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    if weights is None:
        w = np.full(picked.shape, 1.0 / picked.size)
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=np.float64), picked.shape)
        total = w.sum()
        w = w / total if total > 0 else np.zeros(picked.shape)
    out = np.asarray(-(w * picked).sum(), dtype=logits.dtype)

    def fn(g):
        p = np.exp(logp)
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        return ((p * (g * w)[..., None]).astype(logits.dtype, copy=False),)

    return _record(out, (logits,), fn)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of a single logit vector ``[C]`` against class ``label``."""
    if logits.ndim != 1:
        raise ShapeError(f"expected logits of shape [C], got {logits.shape}")
    return cross_entropy(logits, np.asarray(label))


# -- backward ---------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the graph."""
    if loss.ndim != 0:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this graph; rebuild it with a new forward pass")
    if loss._backward is None:
        raise GraphError("loss is not attached to a recorded graph (no input requires grad)")

    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    # reverse execution order
    nodes.sort(key=lambda t: t._seq, reverse=True)

    for t in nodes:
        if t._backward is not None:
            t.grad = None
    loss.grad = np.ones((), dtype=loss.dtype)
    for t in nodes:
        fn = t._backward
        if fn is None or t.grad is None:
            continue
        grads = fn(t.grad)
        for p, g in zip(t._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=p.dtype, copy=True)
            else:
                p.grad += g
        t._backward = None
        t._parents = ()
        t._consumed = True
