"""Corpus BLEU with mteval-13a tokenization (SacreBLEU-compatible defaults)."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError, ShapeError

MAX_ORDER = 4
SMOOTHING = ("exp", "none")

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),  # period/comma unless preceded by a digit
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),  # period/comma unless followed by a digit
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),  # dash after a digit
]
_ENTITIES = {"&quot;": '"', "&amp;": "&", "&lt;": "<", "&gt;": ">"}


def tokenize_13a(text: str) -> list[str]:
    norm = text.replace("<skipped>", "").replace("\n", " ")
    for ent, ch in _ENTITIES.items():
        norm = norm.replace(ent, ch)
    norm = f" {norm} "
    for pat, rep in _13A_RULES:
        norm = pat.sub(rep, norm)
    return norm.split()


def ngrams(tokens, max_order=MAX_ORDER) -> Counter:
    out = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            out[tuple(tokens[i : i + n])] += 1
    return out


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple  # p1..p4 as fractions in [0, 1]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    correct: tuple = ()
    total: tuple = ()

    def __str__(self):
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return f"BLEU = {self.score:.2f} {ps} (BP = {self.brevity_penalty:.3f} hyp_len = {self.hyp_len} ref_len = {self.ref_len})"


def bleu_from_stats(correct, total, hyp_len, ref_len, smoothing="exp") -> BleuScore:
    if smoothing not in SMOOTHING:
        raise ConfigError(f"smoothing must be one of {SMOOTHING}, got {smoothing!r}")
    precisions = [0.0] * MAX_ORDER
    factor = 1.0
    for n in range(MAX_ORDER):
        if total[n] == 0:
            break
        if correct[n]:
            precisions[n] = correct[n] / total[n]
        elif smoothing == "exp":
            factor *= 2.0
            precisions[n] = 1.0 / (factor * total[n])
    if hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len) if hyp_len else 0.0
    if min(precisions) > 0:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    else:
        score = 0.0
    return BleuScore(score, tuple(precisions), bp, hyp_len, ref_len, tuple(correct), tuple(total))


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], smoothing="exp") -> BleuScore:
    """Single-reference corpus BLEU over clipped 1..4-gram counts."""
    if len(hyps) != len(refs):
        raise ShapeError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ShapeError("empty corpus")
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = tokenize_13a(h), tokenize_13a(r)
        hyp_len += len(ht)
        ref_len += len(rt)
        hc, rc = ngrams(ht), ngrams(rt)
        for g, c in hc.items():
            n = len(g) - 1
            total[n] += c
            correct[n] += min(c, rc.get(g, 0))
    return bleu_from_stats(correct, total, hyp_len, ref_len, smoothing)


REPORT_HEADER = ["pair", "bleu", "p1", "p2", "p3", "p4", "bp", "hyp_len", "ref_len"]


def report_rows(by_pair: dict) -> list[str]:
    """TSV lines (header first) for ``{pair: BleuScore}``, pairs sorted."""
    rows = ["\t".join(REPORT_HEADER)]
    for pair in sorted(by_pair):
        s = by_pair[pair]
        vals = [f"{s.score:.4f}", *(f"{p:.6f}" for p in s.precisions), f"{s.brevity_penalty:.6f}", str(s.hyp_len), str(s.ref_len)]
        rows.append("\t".join([pair, *vals]))
    return rows


def write_report(path, by_pair: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_rows(by_pair)) + "\n")


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split("\t") != REPORT_HEADER:
        raise ShapeError(f"{path}: not a BLEU report")
    out = {}
    for ln in lines[1:]:
        pair, *vals = ln.split("\t")
        out[pair] = dict(zip(REPORT_HEADER[1:], map(float, vals)))
    return out
