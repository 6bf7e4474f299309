"""Module tree, LoRA-capable linear maps, and transformer blocks."""

from __future__ import annotations

import hashlib
import math

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def derive_seed(root: int, name: str) -> int:
    """Stable per-module seed from a root seed and a module name."""
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Module:
    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = name
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for _, p in self.named_parameters() if p.trainable]

    def state_dict(self):
        return {n: p.data for n, p in self.named_parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self, trainable_only=False):
        return sum(p.data.size for p in self.parameters() if p.trainable or not trainable_only)


class Linear(Module):
    """``y = x W^T + b``, optionally with a LoRA branch attached as ``lora``."""

    def __init__(self, d_in, d_out, rng, bias=True, std=None):
        std = 1.0 / math.sqrt(d_in) if std is None else std
        dt = ag.default_dtype()
        self.weight = Parameter(rng.normal(0.0, std, size=(d_out, d_in)).astype(dt))
        self.bias = Parameter(np.zeros(d_out, dtype=dt)) if bias else None
        self.lora = None
        self.d_in = d_in
        self.d_out = d_out

    def __call__(self, x):
        y = ag.linear(x, self.weight, self.bias)
        if self.lora is not None and not self.lora.merged:
            y = ag.add(y, self.lora(x))
        return y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        dt = ag.default_dtype()
        self.gain = Parameter(np.ones(d, dtype=dt))
        self.shift = Parameter(np.zeros(d, dtype=dt))
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gain, self.shift, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, rng):
        self.n_heads = n_heads
        self.wq = Linear(d_model, d_model, rng)
        # a key bias only shifts each score row by a constant, which softmax ignores
        self.wk = Linear(d_model, d_model, rng, bias=False)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, x, bias):
        """``x`` is ``[B, L, d]``; ``bias`` is an additive mask broadcastable to ``[B, H, L, L]``."""
        B, L, d = x.shape
        H = self.n_heads
        dh = d // H

        def heads(t):
            return ag.transpose(ag.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.wq(x)), heads(self.wk(x)), heads(self.wv(x))
        scores = ag.mul(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(dh))
        attn = ag.softmax(ag.add(scores, Tensor(bias.astype(x.dtype, copy=False))), axis=-1)
        ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (B, L, d))
        return self.wo(ctx)


class FeedForward(Module):
    def __init__(self, d_model, mult, rng):
        self.w1 = Linear(d_model, d_model * mult, rng)
        self.w2 = Linear(d_model * mult, d_model, rng)

    def __call__(self, x):
        return self.w2(ag.gelu(self.w1(x)))


class Block(Module):
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(self, d_model, n_heads, ff_mult, rng):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_mult, rng)

    def __call__(self, x, bias):
        x = ag.add(x, self.attn(self.ln1(x), bias))
        return ag.add(x, self.ff(self.ln2(x)))


NEG_INF = -1e9


def causal_bias(L, valid=None):
    """Additive mask ``[B or 1, 1, L, L]`` hiding future keys and padded keys."""
    m = np.triu(np.full((L, L), NEG_INF), k=1)[None, None]
    if valid is not None:
        m = m + key_padding_bias(valid, L)
    return m


def key_padding_bias(valid, L):
    valid = np.asarray(valid)
    keep = np.arange(L)[None, :] < valid[:, None]
    return np.where(keep, 0.0, NEG_INF)[:, None, None, :]


def sinusoidal_positions(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2 + d % 2)[None, :]
    ang = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(ang)[:, : (d + 1) // 2]
    out[:, 1::2] = np.cos(ang)[:, : d // 2]
    return out
