"""Word-and-punctuation tokenizer with byte fallback."""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable

from .errors import IntegrityError

PAD, BOS, EOS, AUDIO_OPEN, AUDIO_CLOSE, AUDIO_PLACEHOLDER = range(6)
SPECIALS = ["<pad>", "<s>", "</s>", "<audio>", "</audio>", "<AudioInputs>"]
BYTE_BASE = len(SPECIALS)
BYTE_TOKENS = [f"<0x{b:02X}>" for b in range(256)]

_SPECIAL_SPLIT = re.compile("(" + "|".join(re.escape(s) for s in SPECIALS) + ")")
_PIECE = re.compile(r" ?\w+| ?[^\w\s]|\s+(?!\S)|\s+")

_ESC = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESC = {v: k for k, v in _ESC.items()}


def pieces(text: str) -> list[str]:
    out = []
    for chunk in _SPECIAL_SPLIT.split(text):
        if not chunk:
            continue
        if chunk in SPECIALS:
            out.append(chunk)
        else:
            out.extend(_PIECE.findall(chunk))
    return out


class Vocabulary:
    """Ids: six specials, then 256 byte tokens, then corpus pieces."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(SPECIALS)] != SPECIALS or tokens[BYTE_BASE : BYTE_BASE + 256] != BYTE_TOKENS:
            raise IntegrityError("vocabulary must start with the fixed specials and byte tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise IntegrityError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        counts = Counter()
        for t in texts:
            counts.update(p for p in pieces(t) if p not in SPECIALS)
        fixed = set(SPECIALS) | set(BYTE_TOKENS)
        corpus = sorted((p for p in counts if p not in fixed), key=lambda p: (-counts[p], p))
        return cls(SPECIALS + BYTE_TOKENS + corpus)

    def __len__(self):
        return len(self.tokens)

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for p in pieces(text):
            i = self.index.get(p)
            if i is not None:
                ids.append(i)
            else:
                ids.extend(BYTE_BASE + b for b in p.encode("utf-8"))
        return ids

    def detokenize(self, ids: Iterable[int]) -> str:
        out, pending = [], bytearray()
        for i in ids:
            i = int(i)
            if BYTE_BASE <= i < BYTE_BASE + 256:
                pending.append(i - BYTE_BASE)
                continue
            if pending:
                out.append(pending.decode("utf-8", errors="replace"))
                pending = bytearray()
            out.append(self.tokens[i])
        if pending:
            out.append(pending.decode("utf-8", errors="replace"))
        return "".join(out)

    def decode_text(self, ids: Iterable[int]) -> str:
        """Detokenize with BOS/EOS/PAD removed."""
        return self.detokenize(i for i in ids if int(i) not in (PAD, BOS, EOS))

    def to_lines(self) -> list[str]:
        return ["".join(_ESC.get(c, c) for c in t) for t in self.tokens]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        return cls([re.sub(r"\\[\\ntr]", lambda m: _UNESC[m.group(0)], ln) for ln in lines])

    def save(self, path):
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_lines(text.split("\n")[:-1])
