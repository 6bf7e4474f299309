"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap a row-major numpy array. Any operation whose inputs require
gradients appends a node to a global tape; :func:`backward` replays the tape
in reverse execution order and clears it.

Training runs in float32. Gradient checks switch to float64 with
:func:`float64_mode`, which changes the dtype of newly created tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import DegenerateBatchError, ShapeError, StaleTapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class Tape:
    """Ordered record of differentiable operations since the last backward."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple, Callable]] = []
        self.generation = 0

    def record(self, out, inputs, fn):
        out._gen = self.generation
        self.nodes.append((out, inputs, fn))

    def clear(self):
        self.nodes = []
        self.generation += 1

    def __len__(self):
        return len(self.nodes)


TAPE = Tape()


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def float64_mode():
    prev = _DEFAULT_DTYPE
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_gen", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor shape must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._gen = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._gen is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named model tensor. Only trainable parameters take part in the tape."""

    __slots__ = ("name",)

    def __init__(self, data, name="", trainable=True):
        super().__init__(np.array(data, dtype=_DEFAULT_DTYPE) if not isinstance(data, np.ndarray) else data)
        self.name = name
        self.requires_grad = trainable

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None

    @property
    def value(self):
        return self.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def tensor(x, requires_grad=False, dtype=None):
    return Tensor(np.array(x, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, inputs, fn):
    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        TAPE.record(out, inputs, fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "add")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "sub")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        c = a.data.dtype.type(b)
        return _make(a.data * c, (a,), lambda g: (g * c,))
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "mul")

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return mul(a, 1.0 / b)
    a = as_tensor(a, like=b)
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bwd(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bwd)


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def gelu(x):
    """Tanh-approximated GELU."""
    return _make(K.gelu_fwd(x.data), (x,), lambda g: (K.gelu_bwd(x.data, g),))


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def linear(x, w, b=None):
    """``x @ w.T + b`` with ``w`` stored as ``[d_out, d_in]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ w.data.T
    if b is not None:
        y = y + b.data
    out_shape = x.shape[:-1] + (w.shape[0],)

    def bwd(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _make(y.reshape(out_shape), inputs, bwd)


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis=0):
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bwd)


def _basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def slice_(x, idx):
    out = x.data[idx]
    basic = _basic_index(idx)

    def bwd(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out, copy=True) if basic else out, (x,), bwd)


def embedding(table, ids):
    """Row gather ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, (table,), bwd)


# ---------------------------------------------------------------------------
# reductions and normalizers
# ---------------------------------------------------------------------------


def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=x.dtype), (x,), bwd)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


def softmax(x, axis=-1):
    ax = axis % x.ndim
    xt = np.moveaxis(x.data, ax, -1)
    y = K.softmax_fwd(xt.reshape(-1, xt.shape[-1])).reshape(xt.shape)

    def bwd(g):
        gt = np.moveaxis(g, ax, -1)
        dx = K.softmax_bwd(y.reshape(-1, y.shape[-1]), gt.reshape(-1, y.shape[-1]))
        return (np.moveaxis(dx.reshape(y.shape), -1, ax),)

    return _make(np.moveaxis(y, -1, ax), (x,), bwd)


def log_softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gamma.shape}/bias {beta.shape} vs features {d}")
    x2 = x.data.reshape(-1, d)
    y, xhat, rstd = K.layer_norm_fwd(x2, gamma.data, beta.data, eps)

    def bwd(g):
        dx, dg, db = K.layer_norm_bwd(g.reshape(-1, d), xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dg, db

    return _make(y.reshape(x.shape), (x, gamma, beta), bwd)


def masked_cross_entropy(logits, targets, mask, reduction="mean"):
    """Token NLL over positions where ``mask`` is true.

    ``logits`` is ``[..., V]``; ``targets`` and ``mask`` match its leading
    shape. Unmasked positions contribute nothing, whatever their target.
    With ``reduction="sum"`` the summed NLL is returned instead of the mean.
    """
    V = logits.shape[-1]
    lead = logits.shape[:-1]
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != lead or mask.shape != lead:
        raise ShapeError(f"masked_cross_entropy: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise DegenerateBatchError("masked_cross_entropy: no masked-in positions")
    z = logits.data.reshape(-1, V)
    rows = np.flatnonzero(mask.ravel())
    tg = targets.ravel()[rows]
    zr = z[rows]
    m = zr.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zr - m).sum(axis=1)) + m[:, 0]
    nll = lse - zr[np.arange(len(rows)), tg]
    total = nll.sum()
    scale = 1.0 / count if reduction == "mean" else 1.0

    def bwd(g):
        p = np.exp(zr - lse[:, None])
        p[np.arange(len(rows)), tg] -= 1.0
        gz = np.zeros_like(z)
        gz[rows] = p * (g * scale)
        return (gz.reshape(logits.shape),)

    return _make(np.asarray(total * scale, dtype=logits.dtype), (logits,), bwd)


# ---------------------------------------------------------------------------
# backward and verification
# ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf reachable from ``loss``; clears the tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._gen != TAPE.generation or not TAPE.nodes:
        raise StaleTapeError("tape already consumed; run the forward pass again before backward")
    grads = {id(loss): np.ones_like(loss.data)}
    try:
        for out, inputs, fn in reversed(TAPE.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._gen is None:
                    inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
    finally:
        TAPE.clear()


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_per_param: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error between backward() gradients and central differences.

    ``f`` recomputes a scalar from ``params`` (which must be float64 for a
    meaningful check). ``max_per_param`` samples that many coordinates per
    tensor; ``None`` checks all of them. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)
    zero_grad(params)
    TAPE.clear()
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_per_param is not None and flat.size > max_per_param:
                idx = rng.choice(flat.size, size=max_per_param, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                a = float(ga.reshape(-1)[i])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    zero_grad(params)
    return worst
