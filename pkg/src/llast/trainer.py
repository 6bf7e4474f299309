"""Masked autoregressive training with AdamW and a warmup/linear-decay schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .data import MixPolicy, SampleRecord, asr_augment, build_prompt
from .errors import ConfigError, DegenerateBatchError, NumericError
from .frontend import FrontendConfig, extract, load_audio

log = logging.getLogger("llast.trainer")


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    peak_lr: float = 2e-4
    clip_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta1 < self.beta2 < 1.0:
            raise ConfigError(f"need 0 < beta1 < beta2 < 1, got {self.beta1}, {self.beta2}")
        if self.peak_lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("peak_lr and eps must be positive, weight_decay non-negative")


@dataclass
class ScheduleConfig:
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ConfigError(f"need 0 < warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")

    @classmethod
    def for_total(cls, total_steps, warmup_frac=0.1):
        if total_steps < 2:
            raise ConfigError(f"total_steps must be at least 2, got {total_steps}")
        warm = min(max(1, int(round(warmup_frac * total_steps))), total_steps - 1)
        return cls(warm, total_steps)


def lr_at(s: ScheduleConfig, o: OptimizerConfig, step: int) -> float:
    if not 0 <= step <= s.total_steps:
        raise ConfigError(f"step {step} outside [0, {s.total_steps}]")
    if step <= s.warmup_steps:
        return o.peak_lr * step / s.warmup_steps
    return o.peak_lr * (s.total_steps - step) / (s.total_steps - s.warmup_steps)


class AdamW:
    """Bias-corrected Adam moments with decoupled weight decay."""

    def __init__(self, named_params, cfg: OptimizerConfig):
        self.cfg = cfg
        self.params = [(n, p) for n, p in named_params if p.trainable]
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr: float):
        c = self.cfg
        grads = {}
        for n, p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {n}")
            grads[n] = g
        if c.clip_norm:
            norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
            if norm > c.clip_norm:
                scale = c.clip_norm / norm
                grads = {n: g * scale for n, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for n, p in self.params:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            p.data = (p.data * (1.0 - lr * c.weight_decay) - lr * update).astype(p.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def adamw_step(params, lr, cfg: OptimizerConfig, state: AdamW | None = None) -> AdamW:
    """One update of ``params`` (a list of ``(name, Parameter)``) using their ``.grad``."""
    state = state or AdamW(params, cfg)
    state.step(lr)
    return state


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    epochs: int = 1
    max_steps: int = 0  # 0 = derive from epochs
    warmup_frac: float = 0.1
    ckpt_every: int = 0
    log_every: int = 50
    asr_ratio: float = 0.5
    train_transcript: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.max_steps < 0:
            raise ConfigError(f"bad training sizes: {self}")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must lie in (0, 1)")


@dataclass
class TrainState:
    step: int
    model: object
    optimizer: AdamW
    schedule: ScheduleConfig
    rng_seed: int
    trace: list = field(default_factory=list)


class FeatureStore:
    """Memoized frontend features per audio path."""

    def __init__(self, cfg: FrontendConfig):
        self.cfg = cfg
        self._cache = {}

    def __call__(self, path):
        f = self._cache.get(path)
        if f is None:
            f = extract(load_audio(path), self.cfg).frames
            self._cache[path] = f
        return f


def examples_for(records: Sequence[SampleRecord], features: FeatureStore, include_transcript=True):
    out = []
    for r in records:
        prompt, target = build_prompt(r, "train", include_transcript)
        out.append((features(r.audio_path), prompt, target))
    return out


def compute_loss(model, batch):
    """Mean token NLL over all masked target positions of a batch of examples."""
    if not batch:
        raise DegenerateBatchError("empty batch")
    return model.loss(batch)


def total_steps_for(n_records, tcfg: TrainConfig):
    if tcfg.max_steps:
        return tcfg.max_steps
    per_epoch = math.ceil(n_records * (1.0 + tcfg.asr_ratio) / tcfg.batch_size)
    return max(2, per_epoch * tcfg.epochs)


def train(model, records: Sequence[SampleRecord], ocfg: OptimizerConfig, tcfg: TrainConfig,
          out_dir=None, features: FeatureStore | None = None, meta=None, language_weights=None) -> TrainState:
    """Run training; returns the final state with the ``(step, loss, lr)`` trace.

    With ``out_dir``, writes ``loss.csv``, periodic ``ckpt_step*.llst`` and
    ``final.llst``.
    """
    from .checkpoint import save_checkpoint

    features = features or FeatureStore(model.cfg.frontend)
    policy = MixPolicy(asr_ratio=tcfg.asr_ratio, language_weights=dict(language_weights or {}), shuffle_seed=tcfg.seed)
    total = total_steps_for(len(records), tcfg)
    sched = ScheduleConfig.for_total(total, tcfg.warmup_frac)
    opt = AdamW(model.named_parameters(), ocfg)
    state = TrainState(0, model, opt, sched, tcfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    csv = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv = open(out / "loss.csv", "w", encoding="utf-8")
        csv.write("step,loss,lr\n")
    try:
        epoch = 0
        while state.step < total:
            stream = asr_augment(records, policy, epoch)
            for i in range(0, len(stream), tcfg.batch_size):
                if state.step >= total:
                    break
                batch = examples_for(stream[i : i + tcfg.batch_size], features, tcfg.train_transcript)
                lr = lr_at(sched, ocfg, state.step + 1)
                opt.zero_grad()
                ag.TAPE.clear()
                loss = compute_loss(model, batch)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at step {state.step + 1}")
                ag.backward(loss)
                opt.step(lr)
                state.step += 1
                state.trace.append((state.step, value, lr))
                if csv is not None:
                    csv.write(f"{state.step},{value:.8g},{lr:.8g}\n")
                if tcfg.log_every and state.step % tcfg.log_every == 0:
                    log.info("step %d loss %.4f lr %.3g", state.step, value, lr)
                if out is not None and tcfg.ckpt_every and state.step % tcfg.ckpt_every == 0:
                    save_checkpoint(out / f"ckpt_step{state.step}.llst", model, opt, meta=meta)
            epoch += 1
        if out is not None:
            save_checkpoint(out / "final.llst", model, opt, meta=meta)
    finally:
        if csv is not None:
            csv.close()
    opt.zero_grad()
    return state
