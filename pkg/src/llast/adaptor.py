"""Three-layer MLP projecting encoder states into the LM embedding space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, ShapeError
from .nn import Linear, Module, derive_seed


@dataclass
class AdaptorConfig:
    in_dim: int = 32
    hidden_dim: int = 64
    out_dim: int = 32
    n_layers: int = 3

    def __post_init__(self):
        if self.n_layers != 3:
            raise ConfigError(f"the adaptor has exactly 3 affine layers, got n_layers={self.n_layers}")
        if min(self.in_dim, self.hidden_dim, self.out_dim) < 1:
            raise ConfigError(f"adaptor dims must be positive: {self}")

    def param_count(self):
        i, h, o = self.in_dim, self.hidden_dim, self.out_dim
        return i * h + h + h * h + h + h * o + o


class Adaptor(Module):
    def __init__(self, cfg: AdaptorConfig, rng):
        self.cfg = cfg
        self.fc1 = Linear(cfg.in_dim, cfg.hidden_dim, rng)
        self.fc2 = Linear(cfg.hidden_dim, cfg.hidden_dim, rng)
        self.fc3 = Linear(cfg.hidden_dim, cfg.out_dim, rng)

    def __call__(self, z):
        if z.shape[-1] != self.cfg.in_dim:
            raise ShapeError(f"adaptor expects width {self.cfg.in_dim}, got {z.shape}")
        return self.fc3(ag.gelu(self.fc2(ag.gelu(self.fc1(z)))))


def build_adaptor(cfg: AdaptorConfig, seed: int) -> Adaptor:
    return Adaptor(cfg, np.random.default_rng(derive_seed(seed, "adaptor")))


def adapt(a: Adaptor, z):
    """Map an :class:`EncoderOutput` (or a states tensor) to ``[T', out_dim]``."""
    states = getattr(z, "states", z)
    return a(states)
