"""Transformer speech encoder: strided subsampling, sinusoidal positions, bidirectional blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, LengthError, ShapeError
from .frontend import AcousticFeatures
from .nn import Block, LayerNorm, Linear, Module, derive_seed, key_padding_bias, sinusoidal_positions


@dataclass
class EncoderConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    subsample_factor: int = 4
    max_frames: int = 3000
    n_mels: int = 80

    def __post_init__(self):
        if min(self.d_model, self.n_layers, self.n_heads, self.ff_mult, self.max_frames, self.n_mels) < 1:
            raise ConfigError(f"encoder dims must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"encoder d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.subsample_factor not in (1, 2, 4):
            raise ConfigError(f"subsample_factor must be 1, 2 or 4, got {self.subsample_factor}")

    def out_frames(self, T):
        return -(-T // self.subsample_factor)


@dataclass
class EncoderOutput:
    states: Tensor  # [T', d_model]
    T_prime: int


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        s = cfg.subsample_factor
        # kernel == stride, so the conv is a linear map over stacked frames
        self.subsample = Linear(s * cfg.n_mels, cfg.d_model, rng)
        self.blocks = [Block(cfg.d_model, cfg.n_heads, cfg.ff_mult, rng) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)
        self._pos = sinusoidal_positions(cfg.out_frames(cfg.max_frames), cfg.d_model)

    def __call__(self, frames: np.ndarray, lengths):
        """``frames`` is ``[B, T, n_mels]`` right-padded; returns ``([B, T', d], T'_lengths)``."""
        cfg = self.cfg
        B, T, n_mels = frames.shape
        if n_mels != cfg.n_mels:
            raise ShapeError(f"encoder expects {cfg.n_mels} mel bins, got {n_mels}")
        if T > cfg.max_frames:
            raise LengthError(f"{T} frames exceeds the encoder limit of {cfg.max_frames}")
        s = cfg.subsample_factor
        Tp = cfg.out_frames(T)
        x = np.zeros((B, Tp * s, n_mels), dtype=ag.default_dtype())
        x[:, :T] = frames
        h = ag.gelu(self.subsample(Tensor(x.reshape(B, Tp, s * n_mels))))
        h = ag.add(h, Tensor(self._pos[:Tp].astype(h.dtype)))
        out_lens = np.array([cfg.out_frames(int(n)) for n in lengths])
        bias = key_padding_bias(out_lens, Tp)
        for blk in self.blocks:
            h = blk(h, bias)
        return self.ln_f(h), out_lens


def build_encoder(cfg: EncoderConfig, seed: int) -> Encoder:
    return Encoder(cfg, np.random.default_rng(derive_seed(seed, "encoder")))


def pad_features(feats):
    """Stack a list of ``[T_i, n_mels]`` arrays into ``[B, T_max, n_mels]``."""
    lengths = [f.shape[0] for f in feats]
    out = np.zeros((len(feats), max(lengths), feats[0].shape[1]), dtype=ag.default_dtype())
    for i, f in enumerate(feats):
        out[i, : f.shape[0]] = f
    return out, lengths


def encode(enc: Encoder, x: AcousticFeatures) -> EncoderOutput:
    frames = x.frames.astype(ag.default_dtype())[None]
    states, lens = enc(frames, [x.T])
    return EncoderOutput(ag.reshape(states, states.shape[1:]), int(lens[0]))


def layer_param_count(d, ff_mult):
    """Weights and biases of one block: 4 attention maps (no key bias), 2 feed-forward maps, 2 norms."""
    f = d * ff_mult
    return 4 * d * d + 3 * d + (d * f + f) + (f * d + d) + 2 * (2 * d)


def encoder_param_count(cfg: EncoderConfig):
    sub = cfg.subsample_factor * cfg.n_mels * cfg.d_model + cfg.d_model
    return sub + cfg.n_layers * layer_param_count(cfg.d_model, cfg.ff_mult) + 2 * cfg.d_model
