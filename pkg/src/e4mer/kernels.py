"""Hot numeric kernels: same-padded 1-D convolution and rate max-pooling.

Two interchangeable implementations exist for every kernel: a JIT-compiled
numba version (default when numba imports) and a vectorized pure-numpy
fallback.  Selection happens once at import from the E4MER_NUMBA environment
variable: "0"/"false"/"off" forces numpy, "1"/"true"/"on" requires numba,
anything else (or unset) auto-detects.  Both variants stay importable for
the benchmark under ``benchmarks/bench_kernels.py``.

All kernels take and return float64 C-contiguous arrays.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USE_NUMBA",
    "conv1d_same_fwd",
    "conv1d_same_bwd",
    "maxpool_fwd",
    "maxpool_bwd",
]


def _env_choice() -> str:
    raw = os.environ.get("E4MER_NUMBA", "auto").strip().lower()
    if raw in ("0", "false", "off", "no"):
        return "numpy"
    if raw in ("1", "true", "on", "yes"):
        return "numba"
    return "auto"


# --- pure-numpy implementations --------------------------------------------


def conv1d_same_fwd_np(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y[n,f,t] = b[f] + sum_k w[f,k] * x[n, t - (K-1)//2 + k], zero padded."""
    n_batch, length = x.shape
    n_filters, kernel = w.shape
    pad = (kernel - 1) // 2
    xp = np.zeros((n_batch, length + kernel - 1), dtype=np.float64)
    xp[:, pad : pad + length] = x
    y = np.broadcast_to(b[None, :, None], (n_batch, n_filters, length)).copy()
    for k in range(kernel):
        y += w[None, :, k, None] * xp[:, None, k : k + length]
    return y


def conv1d_same_bwd_np(x, w, gy):
    n_batch, length = x.shape
    n_filters, kernel = w.shape
    pad = (kernel - 1) // 2
    xp = np.zeros((n_batch, length + kernel - 1), dtype=np.float64)
    xp[:, pad : pad + length] = x
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for k in range(kernel):
        gw[:, k] = np.tensordot(gy, xp[:, k : k + length], axes=([0, 2], [0, 1]))
        gxp[:, k : k + length] += (gy * w[None, :, k, None]).sum(axis=1)
    gb = gy.sum(axis=(0, 2))
    return gxp[:, pad : pad + length], gw, gb


def maxpool_fwd_np(x: np.ndarray, rate: int):
    """Non-overlapping max pool with kernel = stride = rate; length % rate == 0."""
    n_batch, n_filters, length = x.shape
    n_out = length // rate
    v = x.reshape(n_batch, n_filters, n_out, rate)
    idx = v.argmax(axis=3)
    out = np.take_along_axis(v, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool_bwd_np(g_out: np.ndarray, idx: np.ndarray, rate: int) -> np.ndarray:
    n_batch, n_filters, n_out = g_out.shape
    gv = np.zeros((n_batch, n_filters, n_out, rate), dtype=np.float64)
    np.put_along_axis(gv, idx[..., None], g_out[..., None], axis=3)
    return gv.reshape(n_batch, n_filters, n_out * rate)


# --- numba implementations ---------------------------------------------------

_choice = _env_choice()
_have_numba = False
if _choice in ("numba", "auto"):
    try:
        from numba import njit

        _have_numba = True
    except ImportError:
        if _choice == "numba":
            raise

if _have_numba:

    @njit(cache=True)
    def conv1d_same_fwd_nb(x, w, b):  # pragma: no cover - exercised via dispatch
        n_batch, length = x.shape
        n_filters, kernel = w.shape
        pad = (kernel - 1) // 2
        y = np.empty((n_batch, n_filters, length), dtype=np.float64)
        for n in range(n_batch):
            for f in range(n_filters):
                for t in range(length):
                    lo = pad - t if t < pad else 0
                    hi = length + pad - t
                    if hi > kernel:
                        hi = kernel
                    acc = b[f]
                    base = t - pad
                    for k in range(lo, hi):
                        acc += w[f, k] * x[n, base + k]
                    y[n, f, t] = acc
        return y

    @njit(cache=True)
    def conv1d_same_bwd_nb(x, w, gy):  # pragma: no cover
        n_batch, length = x.shape
        n_filters, kernel = w.shape
        pad = (kernel - 1) // 2
        gx = np.zeros((n_batch, length), dtype=np.float64)
        gw = np.zeros((n_filters, kernel), dtype=np.float64)
        gb = np.zeros(n_filters, dtype=np.float64)
        for n in range(n_batch):
            for f in range(n_filters):
                for t in range(length):
                    g = gy[n, f, t]
                    gb[f] += g
                    lo = pad - t if t < pad else 0
                    hi = length + pad - t
                    if hi > kernel:
                        hi = kernel
                    base = t - pad
                    for k in range(lo, hi):
                        gx[n, base + k] += w[f, k] * g
                        gw[f, k] += x[n, base + k] * g
        return gx, gw, gb

    @njit(cache=True)
    def maxpool_fwd_nb(x, rate):  # pragma: no cover
        n_batch, n_filters, length = x.shape
        n_out = length // rate
        out = np.empty((n_batch, n_filters, n_out), dtype=np.float64)
        idx = np.empty((n_batch, n_filters, n_out), dtype=np.int64)
        for n in range(n_batch):
            for f in range(n_filters):
                for t in range(n_out):
                    best = x[n, f, t * rate]
                    best_k = 0
                    for k in range(1, rate):
                        v = x[n, f, t * rate + k]
                        if v > best:
                            best = v
                            best_k = k
                    out[n, f, t] = best
                    idx[n, f, t] = best_k
        return out, idx

    @njit(cache=True)
    def maxpool_bwd_nb(g_out, idx, rate):  # pragma: no cover
        n_batch, n_filters, n_out = g_out.shape
        gx = np.zeros((n_batch, n_filters, n_out * rate), dtype=np.float64)
        for n in range(n_batch):
            for f in range(n_filters):
                for t in range(n_out):
                    gx[n, f, t * rate + idx[n, f, t]] = g_out[n, f, t]
        return gx


USE_NUMBA = _have_numba

if USE_NUMBA:
    conv1d_same_fwd = conv1d_same_fwd_nb
    conv1d_same_bwd = conv1d_same_bwd_nb
    maxpool_fwd = maxpool_fwd_nb
    maxpool_bwd = maxpool_bwd_nb
else:
    conv1d_same_fwd = conv1d_same_fwd_np
    conv1d_same_bwd = conv1d_same_bwd_np
    maxpool_fwd = maxpool_fwd_np
    maxpool_bwd = maxpool_bwd_np
