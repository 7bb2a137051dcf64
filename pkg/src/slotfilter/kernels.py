"""Row-wise kernels behind softmax, L2 normalization and layer norm.

Every kernel takes a C-contiguous 2-D float64 array and reduces along its last
axis. Two implementations exist for each: a vectorized numpy one and a numba
``@njit`` loop that fuses the passes. ``NUMPY`` and ``NUMBA`` hold them by
name; the module-level functions dispatch to whichever backend is active.
"""
import numpy as np

from ._backend import USE_NUMBA

# --------------------------------------------------------------------------
# numpy reference path


def _softmax_fwd_np(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_bwd_np(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def _l2n_fwd_np(x, eps):
    norm = np.sqrt((x * x).sum(axis=1))
    return x / np.maximum(norm, eps)[:, None], norm


def _l2n_bwd_np(y, norm, g, eps):
    big = norm >= eps
    denom = np.maximum(norm, eps)[:, None]
    proj = np.where(big[:, None], y * (g * y).sum(axis=1, keepdims=True), 0.0)
    return (g - proj) / denom


def _ln_fwd_np(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(np.maximum(var, eps))
    return xc * rstd[:, None], rstd


def _ln_bwd_np(xhat, rstd, g, eps):
    n = xhat.shape[1]
    var_live = (1.0 / (rstd * rstd)) > eps
    gm = g.sum(axis=1, keepdims=True) / n
    gx = (g * xhat).sum(axis=1, keepdims=True) / n
    gx = np.where(var_live[:, None], gx, 0.0)
    return rstd[:, None] * (g - gm - xhat * gx)


NUMPY = {
    "softmax_fwd": _softmax_fwd_np,
    "softmax_bwd": _softmax_bwd_np,
    "l2n_fwd": _l2n_fwd_np,
    "l2n_bwd": _l2n_bwd_np,
    "ln_fwd": _ln_fwd_np,
    "ln_bwd": _ln_bwd_np,
}

# --------------------------------------------------------------------------
# numba path

NUMBA = {}

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _softmax_fwd_nb(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(cols):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax_bwd_nb(y, g):
        rows, cols = y.shape
        out = np.empty_like(y)
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += g[i, j] * y[i, j]
            for j in range(cols):
                out[i, j] = y[i, j] * (g[i, j] - dot)
        return out

    @njit(cache=True)
    def _l2n_fwd_nb(x, eps):
        rows, cols = x.shape
        out = np.empty_like(x)
        norm = np.empty(rows)
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += x[i, j] * x[i, j]
            n = np.sqrt(s)
            norm[i] = n
            d = n if n > eps else eps
            for j in range(cols):
                out[i, j] = x[i, j] / d
        return out, norm

    @njit(cache=True)
    def _l2n_bwd_nb(y, norm, g, eps):
        rows, cols = y.shape
        out = np.empty_like(y)
        for i in range(rows):
            if norm[i] >= eps:
                dot = 0.0
                for j in range(cols):
                    dot += g[i, j] * y[i, j]
                for j in range(cols):
                    out[i, j] = (g[i, j] - y[i, j] * dot) / norm[i]
            else:
                for j in range(cols):
                    out[i, j] = g[i, j] / eps
        return out

    @njit(cache=True)
    def _ln_fwd_nb(x, eps):
        rows, cols = x.shape
        out = np.empty_like(x)
        rstd = np.empty(rows)
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                d = x[i, j] - mu
                out[i, j] = d
                var += d * d
            var /= cols
            r = 1.0 / np.sqrt(var if var > eps else eps)
            rstd[i] = r
            for j in range(cols):
                out[i, j] *= r
        return out, rstd

    @njit(cache=True)
    def _ln_bwd_nb(xhat, rstd, g, eps):
        rows, cols = xhat.shape
        out = np.empty_like(xhat)
        for i in range(rows):
            gm = 0.0
            gx = 0.0
            for j in range(cols):
                gm += g[i, j]
                gx += g[i, j] * xhat[i, j]
            gm /= cols
            gx /= cols
            if 1.0 / (rstd[i] * rstd[i]) <= eps:
                gx = 0.0
            for j in range(cols):
                out[i, j] = rstd[i] * (g[i, j] - gm - xhat[i, j] * gx)
        return out

    NUMBA = {
        "softmax_fwd": _softmax_fwd_nb,
        "softmax_bwd": _softmax_bwd_nb,
        "l2n_fwd": _l2n_fwd_nb,
        "l2n_bwd": _l2n_bwd_nb,
        "ln_fwd": _ln_fwd_nb,
        "ln_bwd": _ln_bwd_nb,
    }

ACTIVE = NUMBA if USE_NUMBA else NUMPY

softmax_fwd = ACTIVE["softmax_fwd"]
softmax_bwd = ACTIVE["softmax_bwd"]
l2n_fwd = ACTIVE["l2n_fwd"]
l2n_bwd = ACTIVE["l2n_bwd"]
ln_fwd = ACTIVE["ln_fwd"]
ln_bwd = ACTIVE["ln_bwd"]
