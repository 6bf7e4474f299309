"""Row-wise numeric kernels used by the autograd engine and the audio frontend.

Every kernel has a pure-numpy implementation and, when numba is importable and
``LLAST_NUMBA`` is not ``0``, an ``@njit`` twin. Both paths compute the same
quantities; the numba path fuses the per-row loops.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def dec(f):
            return f

        return dec if not args or not callable(args[0]) else args[0]


USE_NUMBA = HAS_NUMBA and os.environ.get("LLAST_NUMBA", "1") != "0"

_GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def np_layer_norm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def np_layer_norm_bwd(g, xhat, rstd, gamma):
    n = xhat.shape[1]
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gx = g * gamma
    dx = (rstd[:, None] / n) * (
        n * gx - gx.sum(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def np_gelu_fwd(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def np_gelu_bwd(x, g):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def np_softmax_fwd(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def np_softmax_bwd(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def np_fir_resample(x, h, up, down, out_len, delay):
    # zero-stuff, filter, decimate; output sample n sits at upsampled index n*down + delay
    xu = np.zeros(len(x) * up, dtype=np.float64)
    xu[::up] = x
    full = np.convolve(xu, h)
    idx = np.arange(out_len) * down + delay
    out = np.zeros(out_len, dtype=np.float64)
    ok = idx < len(full)
    out[ok] = full[idx[ok]]
    return out


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def nb_layer_norm_fwd(x, gamma, beta, eps):
    rows, n = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        m = 0.0
        for j in range(n):
            m += x[i, j]
        m /= n
        v = 0.0
        for j in range(n):
            d = x[i, j] - m
            v += d * d
        v /= n
        r = 1.0 / math.sqrt(v + eps)
        rstd[i] = r
        for j in range(n):
            xh = (x[i, j] - m) * r
            xhat[i, j] = xh
            y[i, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def nb_layer_norm_bwd(g, xhat, rstd, gamma):
    rows, n = g.shape
    dx = np.empty_like(g)
    dgamma = np.zeros(n, dtype=g.dtype)
    dbeta = np.zeros(n, dtype=g.dtype)
    for i in range(rows):
        s1 = 0.0
        s2 = 0.0
        for j in range(n):
            gx = g[i, j] * gamma[j]
            s1 += gx
            s2 += gx * xhat[i, j]
            dgamma[j] += g[i, j] * xhat[i, j]
            dbeta[j] += g[i, j]
        r = rstd[i] / n
        for j in range(n):
            dx[i, j] = r * (n * g[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


@njit(cache=True)
def nb_gelu_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        out[i] = 0.5 * v * (1.0 + math.tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)))
    return out.reshape(x.shape)


@njit(cache=True)
def nb_gelu_bwd(x, g):
    xf = x.ravel()
    gf = g.ravel()
    out = np.empty_like(xf)
    for i in range(xf.size):
        v = xf[i]
        t = math.tanh(0.7978845608028654 * (v + 0.044715 * v * v * v))
        du = 0.7978845608028654 * (1.0 + 3 * 0.044715 * v * v)
        out[i] = gf[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out.reshape(x.shape)


@njit(cache=True)
def nb_softmax_fwd(x):
    rows, n = x.shape
    y = np.empty_like(x)
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, n):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(n):
            e = math.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        for j in range(n):
            y[i, j] /= s
    return y


@njit(cache=True)
def nb_softmax_bwd(y, g):
    rows, n = y.shape
    dx = np.empty_like(y)
    for i in range(rows):
        s = 0.0
        for j in range(n):
            s += g[i, j] * y[i, j]
        for j in range(n):
            dx[i, j] = y[i, j] * (g[i, j] - s)
    return dx


@njit(cache=True)
def nb_fir_resample(x, h, up, down, out_len, delay):
    # polyphase: phase p keeps taps h[p], h[p+up], ... reversed, so each output is one forward dot
    nh = h.size
    L = (nh + up - 1) // up
    hr = np.zeros((up, L))
    for p in range(up):
        for j in range((nh - p + up - 1) // up):
            hr[p, L - 1 - j] = h[p + j * up]
    out = np.zeros(out_len)
    nx = x.size
    for n in range(out_len):
        m = n * down + delay
        p = m % up
        src0 = (m - p) // up  # input sample under tap h[p]
        lo = max(src0 - (L - 1), 0)
        hi = min(src0, nx - 1)
        if hi >= lo:
            off = L - 1 - src0
            out[n] = np.dot(hr[p, lo + off : hi + off + 1], x[lo : hi + 1])
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _c(a):
    return np.ascontiguousarray(a)


def layer_norm_fwd(x, gamma, beta, eps):
    if USE_NUMBA:
        return nb_layer_norm_fwd(_c(x), _c(gamma), _c(beta), x.dtype.type(eps))
    return np_layer_norm_fwd(x, gamma, beta, eps)


def layer_norm_bwd(g, xhat, rstd, gamma):
    if USE_NUMBA:
        return nb_layer_norm_bwd(_c(g), _c(xhat), _c(rstd), _c(gamma))
    return np_layer_norm_bwd(g, xhat, rstd, gamma)


def gelu_fwd(x):
    return nb_gelu_fwd(_c(x)) if USE_NUMBA else np_gelu_fwd(x)


def gelu_bwd(x, g):
    return nb_gelu_bwd(_c(x), _c(g)) if USE_NUMBA else np_gelu_bwd(x, g)


def softmax_fwd(x):
    return nb_softmax_fwd(_c(x)) if USE_NUMBA else np_softmax_fwd(x)


def softmax_bwd(y, g):
    return nb_softmax_bwd(_c(y), _c(g)) if USE_NUMBA else np_softmax_bwd(y, g)


def fir_resample(x, h, up, down, out_len, delay):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if USE_NUMBA:
        return nb_fir_resample(_c(x), _c(h), up, down, out_len, delay)
    return np_fir_resample(x, h, up, down, out_len, delay)
