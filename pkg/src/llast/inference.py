"""Beam-search decoding and the end-to-end translate call."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .data import ST, SampleRecord, build_prompt
from .errors import ConfigError, LengthError
from .frontend import AudioWaveform, extract
from .lm import assemble
from .vocab import EOS


@dataclass
class DecodeConfig:
    beam_size: int = 5
    max_new_tokens: int = 32
    length_norm_alpha: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1 or self.max_new_tokens < 1:
            raise ConfigError(f"beam_size and max_new_tokens must be >= 1: {self}")
        if self.length_norm_alpha < 0:
            raise ConfigError("length_norm_alpha must be non-negative")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    logprob: float
    finished: bool
    truncated: bool = False

    def score(self, alpha=0.0):
        if alpha == 0.0 or not self.tokens:
            return self.logprob
        return self.logprob / len(self.tokens) ** alpha


def _rank_key(alpha):
    return lambda h: (-h.score(alpha), h.tokens)


def beam_search(step_fn: Callable[[Sequence[tuple]], np.ndarray], cfg: DecodeConfig, eos: int = EOS):
    """Generic beam search.

    ``step_fn(prefixes)`` returns next-token log-probs ``[len(prefixes), V]``.
    Each step keeps the best ``beam_size`` of all one-token extensions; those
    ending in ``eos`` retire to the finished pool. Returns up to ``beam_size``
    hypotheses ranked by normalized score, ties broken by token ids.
    """
    alpha = cfg.length_norm_alpha
    key = _rank_key(alpha)
    alive = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(cfg.max_new_tokens):
        lp = np.asarray(step_fn([h.tokens for h in alive]), dtype=np.float64)
        V = lp.shape[1]
        total = np.array([h.logprob for h in alive])[:, None] + lp
        # cheap pre-selection before the exact (score, tokens) ordering
        flat = total.ravel()
        k = min(flat.size, cfg.beam_size)
        if flat.size > 4 * k:
            cut = np.partition(flat, flat.size - k)[flat.size - k]
            idx = np.nonzero(flat >= cut)[0]
        else:
            idx = np.arange(flat.size)
        cands = [Hypothesis(alive[i // V].tokens + (int(i % V),), float(flat[i]), int(i % V) == eos) for i in idx]
        cands.sort(key=lambda h: (-h.logprob, h.tokens))
        alive = []
        for h in cands[:k]:
            (finished if h.finished else alive).append(h)
        if not alive:
            break
        if alpha == 0.0 and len(finished) >= cfg.beam_size:
            # extensions only lose probability, so nothing alive can enter the top list
            finished.sort(key=key)
            if finished[cfg.beam_size - 1].logprob >= max(h.logprob for h in alive):
                break
    if not finished:
        finished = [Hypothesis(h.tokens, h.logprob, False, True) for h in alive]
    finished.sort(key=key)
    return finished[: cfg.beam_size]


def greedy(step_fn, max_new_tokens: int, eos: int = EOS) -> Hypothesis:
    tokens, total = (), 0.0
    for _ in range(max_new_tokens):
        lp = np.asarray(step_fn([tokens]), dtype=np.float64)[0]
        best = int(np.argmax(lp))  # first maximum, so the lowest id wins ties
        tokens += (best,)
        total += float(lp[best])
        if best == eos:
            return Hypothesis(tokens, total, True)
    return Hypothesis(tokens, total, False, True)


def _log_softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def model_step_fn(model, features: np.ndarray, prompt_text: str):
    """Next-token log-prob function for one utterance; audio rows are computed once."""
    with ag.no_grad():
        rows = model.audio_rows([features])[0]
    rows = ag.Tensor(rows.data)

    def step(prefixes):
        with ag.no_grad():
            prompts = [assemble(model.vocab, prompt_text, rows, None, extra_ids=p) for p in prefixes]
            logits = model.lm(prompts).data
        last = np.array([len(p) - 1 for p in prompts])
        return _log_softmax(logits[np.arange(len(prompts)), last].astype(np.float64))

    return step


def decode_features(model, features: np.ndarray, prompt_text: str, cfg: DecodeConfig) -> list[Hypothesis]:
    step = model_step_fn(model, features, prompt_text)
    # the placeholder becomes T' rows and BOS follows the prompt
    n_prompt = len(model.vocab.tokenize(prompt_text)) + model.cfg.encoder.out_frames(len(features))
    if n_prompt + cfg.max_new_tokens > model.cfg.lm.max_seq_len:
        raise LengthError(f"prompt of {n_prompt} positions leaves no room for {cfg.max_new_tokens} new tokens")
    return beam_search(step, cfg)


def hypothesis_text(model, h: Hypothesis) -> str:
    return model.vocab.decode_text(h.tokens)


def translate(model, audio: AudioWaveform, src_lang: str, tgt_lang: str, cfg: DecodeConfig | None = None,
              include_transcript=False, transcript="") -> str:
    """Frontend, encoder, adaptor, inference prompt, beam search, detokenized best hypothesis."""
    cfg = cfg or DecodeConfig()
    feats = extract(audio, model.cfg.frontend).frames
    rec = SampleRecord("", "", src_lang, tgt_lang, transcript, "", ST)
    prompt, _ = build_prompt(rec, "infer", include_transcript)
    return hypothesis_text(model, decode_features(model, feats, prompt, cfg)[0])
