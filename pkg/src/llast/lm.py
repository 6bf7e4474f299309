"""Decoder-only causal LM over mixed token / audio-embedding sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError, LengthError, ShapeError
from .nn import Block, LayerNorm, Module, causal_bias, derive_seed
from .vocab import AUDIO_PLACEHOLDER, BOS, EOS, PAD, SPECIALS, Vocabulary


@dataclass
class LMConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    vocab_size: int = 512
    max_seq_len: int = 256

    def __post_init__(self):
        if min(self.d_model, self.n_layers, self.n_heads, self.ff_mult, self.vocab_size, self.max_seq_len) < 1:
            raise ConfigError(f"LM dims must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"LM d_model={self.d_model} is not divisible by n_heads={self.n_heads}")


@dataclass
class TextSegment:
    ids: list[int]

    def __len__(self):
        return len(self.ids)


@dataclass
class AudioSegment:
    rows: Tensor  # [T', d_model]

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class PromptSequence:
    segments: list
    loss_mask: np.ndarray = field(default=None)
    targets: np.ndarray = field(default=None)  # next-token ids; PAD where the mask is false

    def __post_init__(self):
        n_audio = sum(isinstance(s, AudioSegment) for s in self.segments)
        if n_audio != 1:
            raise ShapeError(f"a prompt holds exactly one audio segment, found {n_audio}")
        L = len(self)
        if self.loss_mask is None:
            self.loss_mask = np.zeros(L, dtype=bool)
        if self.targets is None:
            self.targets = np.full(L, PAD, dtype=np.int64)
        if self.loss_mask.shape != (L,) or self.targets.shape != (L,):
            raise ShapeError(f"mask/targets must cover all {L} positions")

    def __len__(self):
        return sum(len(s) for s in self.segments)

    @property
    def target_ids(self):
        return self.targets[self.loss_mask]

    def text_ids(self):
        return [i for s in self.segments if isinstance(s, TextSegment) for i in s.ids]


def assemble(vocab: Vocabulary, prompt_text: str, audio_rows: Tensor, target_text: str | None = None,
             extra_ids: Sequence[int] = ()) -> PromptSequence:
    """Splice ``audio_rows`` at ``<AudioInputs>``, append BOS, then (train) target + EOS.

    The input carries ``target`` tokens but not EOS; the loss mask covers the
    BOS position through the last target position, whose next tokens are
    ``target + [EOS]``. ``extra_ids`` are appended after BOS (decoding prefixes).
    """
    ids = vocab.tokenize(prompt_text)
    if ids.count(AUDIO_PLACEHOLDER) != 1:
        raise ShapeError(f"prompt must contain {SPECIALS[AUDIO_PLACEHOLDER]} exactly once")
    k = ids.index(AUDIO_PLACEHOLDER)
    head, tail = ids[:k], ids[k + 1 :] + [BOS] + list(extra_ids)
    tgt = vocab.tokenize(target_text) if target_text else []
    segments = [TextSegment(head), AudioSegment(audio_rows), TextSegment(tail + tgt)]
    seq = PromptSequence(segments)
    if target_text is not None:
        start = len(seq) - len(tgt) - 1
        seq.loss_mask[start:] = True
        seq.targets[start:] = tgt + [EOS]
    return seq


class DecoderLM(Module):
    def __init__(self, cfg: LMConfig, rng):
        self.cfg = cfg
        dt = ag.default_dtype()
        self.tok_emb = Parameter(rng.normal(0.0, 0.02, size=(cfg.vocab_size, cfg.d_model)).astype(dt))
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(cfg.max_seq_len, cfg.d_model)).astype(dt))
        self.blocks = [Block(cfg.d_model, cfg.n_heads, cfg.ff_mult, rng) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.d_model)

    def embed(self, prompts: Sequence[PromptSequence]):
        """Input embeddings ``[B, L_max, d]`` via one gather over token rows, audio rows and a zero row."""
        V, d = self.cfg.vocab_size, self.cfg.d_model
        L = max(len(p) for p in prompts)
        if L > self.cfg.max_seq_len:
            raise LengthError(f"sequence of {L} positions exceeds max_seq_len={self.cfg.max_seq_len}")
        audio = []
        n_audio = 0
        idx = np.empty((len(prompts), L), dtype=np.int64)
        pads = []
        for b, p in enumerate(prompts):
            row = []
            for seg in p.segments:
                if isinstance(seg, TextSegment):
                    if seg.ids and (min(seg.ids) < 0 or max(seg.ids) >= V):
                        raise ShapeError(f"token id outside vocabulary of {V}")
                    row.extend(seg.ids)
                else:
                    if seg.rows.ndim != 2 or seg.rows.shape[1] != d:
                        raise ShapeError(f"audio rows {seg.rows.shape} do not match LM width {d}")
                    audio.append(seg.rows)
                    row.extend(range(V + n_audio, V + n_audio + len(seg)))
                    n_audio += len(seg)
            pads.append(L - len(row))
            idx[b, : len(row)] = row
        zero_row = V + n_audio
        for b, n in enumerate(pads):
            if n:
                idx[b, L - n :] = zero_row
        source = ag.concat([self.tok_emb, *audio, Tensor(np.zeros((1, d), dtype=self.tok_emb.dtype))], axis=0)
        x = ag.embedding(source, idx)
        return ag.add(x, self.pos_emb[:L])

    def __call__(self, prompts: Sequence[PromptSequence]):
        x = self.embed(prompts)
        bias = causal_bias(x.shape[1])
        for blk in self.blocks:
            x = blk(x, bias)
        x = self.ln_f(x)
        return ag.linear(x, self.tok_emb)


def build_lm(cfg: LMConfig, seed: int) -> DecoderLM:
    return DecoderLM(cfg, np.random.default_rng(derive_seed(seed, "lm")))


def lm_forward(lm: DecoderLM, p: PromptSequence):
    """Logits ``[L, V]`` for a single prompt."""
    logits = lm([p])
    return ag.reshape(logits, logits.shape[1:])


def batch_targets(prompts: Sequence[PromptSequence]):
    L = max(len(p) for p in prompts)
    mask = np.zeros((len(prompts), L), dtype=bool)
    tgt = np.full((len(prompts), L), PAD, dtype=np.int64)
    for b, p in enumerate(prompts):
        mask[b, : len(p)] = p.loss_mask
        tgt[b, : len(p)] = p.targets
    return tgt, mask
