"""Low-rank adapters on frozen linear maps (encoder-side and LM-side)."""

from __future__ import annotations

from dataclasses import dataclass
from fnmatch import fnmatchcase

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import ConfigError, StateError
from .nn import Linear, Module, derive_seed

S_LORA = "S-LoRA"
L_LORA = "L-LoRA"
_SCOPE_ROOT = {S_LORA: "encoder", L_LORA: "lm"}
DEFAULT_RANK = {S_LORA: 8, L_LORA: 16}


@dataclass
class LoRAConfig:
    rank: int = 8
    alpha: float | None = None
    targets: tuple = ("*.attn.wq", "*.attn.wv")
    scope: str = S_LORA
    seed: int = 0
    init_std: float = 0.02

    def __post_init__(self):
        if self.scope not in _SCOPE_ROOT:
            raise ConfigError(f"LoRA scope must be {S_LORA} or {L_LORA}, got {self.scope!r}")
        if int(self.rank) < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {self.rank}")
        if self.alpha is None:
            self.alpha = float(self.rank)
        self.targets = tuple(self.targets)

    @property
    def scaling(self):
        return self.alpha / self.rank


class LoRAAdapter(Module):
    """Branch ``scaling * B (A x)`` beside a host weight ``W``; ``B`` starts at zero."""

    def __init__(self, host: Linear, rank, alpha, rng, base_ref="", init_std=0.02):
        dt = host.weight.dtype
        self.A = Parameter(rng.normal(0.0, init_std, size=(rank, host.d_in)).astype(dt))
        self.B = Parameter(np.zeros((host.d_out, rank), dtype=dt))
        self.rank = rank
        self.alpha = float(alpha)
        self.scaling = self.alpha / rank
        self.merged = False
        self.base_ref = base_ref
        self._host = host

    def __call__(self, x):
        return ag.mul(ag.linear(ag.linear(x, self.A), self.B), self.scaling)

    def delta(self):
        return self.scaling * (self.B.data.astype(np.float64) @ self.A.data.astype(np.float64))


def _scope_module(model, scope):
    root = _SCOPE_ROOT[scope]
    return (getattr(model, root), root + ".") if hasattr(model, root) else (model, "")


def inject(model: Module, cfg: LoRAConfig) -> int:
    """Attach adapters to every linear map matching ``cfg.targets`` within the scope."""
    sub, prefix = _scope_module(model, cfg.scope)
    matches = [
        (name, mod)
        for name, mod in sub.named_modules()
        if isinstance(mod, Linear) and any(fnmatchcase(name, pat) for pat in cfg.targets)
    ]
    if not matches:
        raise ConfigError(f"LoRA targets {list(cfg.targets)} matched no linear map under {prefix or 'model'}")
    for name, mod in matches:
        if cfg.rank > min(mod.d_in, mod.d_out):
            raise ConfigError(f"LoRA rank {cfg.rank} exceeds min dims of {prefix}{name} ({mod.d_out}x{mod.d_in})")
        if mod.lora is not None:
            raise StateError(f"{prefix}{name} already carries an adapter")
    for name, mod in matches:
        full = prefix + name
        rng = np.random.default_rng(derive_seed(cfg.seed, f"lora:{full}"))
        mod.lora = LoRAAdapter(mod, cfg.rank, cfg.alpha, rng, base_ref=full + ".weight", init_std=cfg.init_std)
    return len(matches)


def adapters(model: Module):
    return [(name, mod.lora) for name, mod in model.named_modules() if isinstance(mod, Linear) and mod.lora is not None]


def merge(adapter: LoRAAdapter):
    if adapter.merged:
        raise StateError(f"adapter on {adapter.base_ref} is already merged")
    w = adapter._host.weight
    w.data = (w.data.astype(np.float64) + adapter.delta()).astype(w.dtype)
    adapter.merged = True


def unmerge(adapter: LoRAAdapter):
    if not adapter.merged:
        raise StateError(f"adapter on {adapter.base_ref} is not merged")
    w = adapter._host.weight
    w.data = (w.data.astype(np.float64) - adapter.delta()).astype(w.dtype)
    adapter.merged = False


def merge_all(model: Module) -> int:
    n = 0
    for _, a in adapters(model):
        if not a.merged:
            merge(a)
            n += 1
    return n


def strip_adapters(model: Module):
    """Drop adapters whose deltas are already merged into the host weights."""
    for name, mod in model.named_modules():
        if isinstance(mod, Linear) and mod.lora is not None:
            if not mod.lora.merged:
                raise StateError(f"cannot drop unmerged adapter on {name}")
            mod.lora = None


def freeze_base(model: Module, trainable_prefixes=("adaptor.",)):
    """Freeze everything except the adaptor and every LoRA ``A``/``B``."""
    for name, p in model.named_parameters():
        is_lora = ".lora." in f".{name}"
        p.trainable = is_lora or name.startswith(tuple(trainable_prefixes))


def lora_param_count(d_in, d_out, rank):
    return rank * (d_in + d_out)


MODES = {"none": (), "s": (S_LORA,), "l": (L_LORA,), "dual": (S_LORA, L_LORA)}


def prepare_adaptation(model: Module, mode="dual", ranks=None, alphas=None,
                       targets=("*.attn.wq", "*.attn.wv"), seed=0) -> int:
    """Freeze the base and attach adapters for ``mode`` in ``none|s|l|dual``.

    Returns the number of adapted linear maps; the adaptor always stays trainable.
    """
    if mode not in MODES:
        raise ConfigError(f"adaptation mode must be one of {sorted(MODES)}, got {mode!r}")
    ranks = {**DEFAULT_RANK, **(ranks or {})}
    alphas = alphas or {}
    n = 0
    for scope in MODES[mode]:
        n += inject(model, LoRAConfig(rank=ranks[scope], alpha=alphas.get(scope), targets=targets, scope=scope, seed=seed))
    freeze_base(model)
    return n
