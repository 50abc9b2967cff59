"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Tensor` wraps an ndarray and, when produced by an op, carries a
closure that routes the output gradient to its parents.  ``backward`` walks
the tape once in reverse topological order.  Only the ops the network needs
exist here; fused ops (softmax, layer/batch norm, convolution, pooling)
carry hand-derived backward rules validated by finite differences in the
test suite.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import NonFiniteGradient

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; leaf grads accumulate in ``.grad``."""
    if loss.data.size != 1:
        raise ValueError("backward() expects a scalar loss")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node.grad = None  # free intermediate grads; leaves keep theirs


def gradients(loss: Tensor, params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    """Per-parameter gradients of a scalar loss; frozen params yield zeros."""
    for p in params.values():
        p.grad = None
    backward(loss)
    out = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient for {name} is not finite")
        out[name] = g
    return out


# --- elementwise / structural ops ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(a.data @ b.data, (a, b), backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward_fn(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward_fn)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    def backward_fn(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _make(np.swapaxes(a.data, ax1, ax2), (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward_fn)


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        scale = 1.0 / a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        scale = 1.0 / np.prod([a.data.shape[i] for i in axes])

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g * scale, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g * scale, a.data.shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward_fn)


def sqrt_(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def backward_fn(g):
        # subgradient 0 at y == 0 keeps a perfect reconstruction finite
        _accumulate(a, np.where(y > 0.0, 0.5 * g / np.where(y > 0.0, y, 1.0), 0.0))

    return _make(y, (a,), backward_fn)


def exp_(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward_fn(g):
        _accumulate(a, g * y)

    return _make(y, (a,), backward_fn)


def log_(a: Tensor) -> Tensor:
    def backward_fn(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward_fn)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI

    def backward_fn(g):
        _accumulate(a, g * (cdf + x * pdf))

    return _make(x * cdf, (a,), backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _make(y, (a,), backward_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logz
    soft = np.exp(y)

    def backward_fn(g):
        _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(y, (a,), backward_fn)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[..., ] = a[..., idx[...]] for integer idx of a.shape[:-1]."""
    idx = np.asarray(idx)
    taken = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        _accumulate(a, full)

    return _make(taken, (a,), backward_fn)


# --- fused layers ------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def backward_fn(g):
        _accumulate(beta, _unbroadcast(g, beta.data.shape))
        _accumulate(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (dxhat - m1 - xhat * m2))

    return _make(y, (x, gamma, beta), backward_fn)


def batch_norm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """BatchNorm over (batch, time) of a (B, F, L) tensor using batch stats.

    Returns (output, batch_mean, batch_var) so the caller can update running
    buffers outside the graph.
    """
    mu = x.data.mean(axis=(0, 2))
    xc = x.data - mu[None, :, None]
    var = (xc * xc).mean(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]
    m = x.data.shape[0] * x.data.shape[2]

    def backward_fn(g):
        _accumulate(beta, g.sum(axis=(0, 2)))
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        dxhat = g * gamma.data[None, :, None]
        s1 = dxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        _accumulate(x, inv[None, :, None] / m * (m * dxhat - s1 - xhat * s2))

    return _make(y, (x, gamma, beta), backward_fn), mu, var


def batch_norm_eval(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward_fn(g):
        _accumulate(beta, g.sum(axis=(0, 2)))
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        _accumulate(x, g * (gamma.data * inv)[None, :, None])

    return _make(y, (x, gamma, beta), backward_fn)


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution of (B, L) with (F, K) filters -> (B, F, L)."""
    y = kernels.conv1d_same_fwd(
        np.ascontiguousarray(x.data),
        np.ascontiguousarray(w.data),
        np.ascontiguousarray(b.data),
    )

    def backward_fn(g):
        gx, gw, gb = kernels.conv1d_same_bwd(
            np.ascontiguousarray(x.data),
            np.ascontiguousarray(w.data),
            np.ascontiguousarray(g),
        )
        _accumulate(x, gx)
        _accumulate(w, gw)
        _accumulate(b, gb)

    return _make(y, (x, w, b), backward_fn)


def maxpool_rate(x: Tensor, rate: int) -> Tensor:
    """Max pool (B, F, L) -> (B, F, L // rate) with kernel = stride = rate."""
    y, idx = kernels.maxpool_fwd(np.ascontiguousarray(x.data), rate)

    def backward_fn(g):
        _accumulate(x, kernels.maxpool_bwd(np.ascontiguousarray(g), idx, rate))

    return _make(y, (x,), backward_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    if not train or p <= 0.0:
        return x
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.data.shape) >= p) * scale

    def backward_fn(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), backward_fn)


def drop_path(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Randomly zero whole residual branches per batch element."""
    if not train or p <= 0.0:
        return x
    keep_shape = (x.data.shape[0],) + (1,) * (x.data.ndim - 1)
    mask = (rng.random(keep_shape) >= p) / (1.0 - p)

    def backward_fn(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, (x,), backward_fn)
