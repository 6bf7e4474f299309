"""Manifests, prompt templates, ASR augmentation, language mixing, synthetic corpora."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, RegistryError
from .frontend import AudioWaveform, mel_center_hz, write_raw
from .nn import derive_seed

MANIFEST_HEADER = ["id", "audio", "src_lang", "tgt_lang", "src_text", "tgt_text"]
ST, ASR = "ST", "ASR"

ST_TEMPLATE = "<audio><AudioInputs></audio> Translate the {src} sentence to {tgt}."
ASR_TEMPLATE = "<audio><AudioInputs></audio> Transcribe the {src} sentence to {src}."
TRANSCRIPT_HINT = ' Transcripts of AudioInputs is "{text}"'


# ---------------------------------------------------------------------------
# language registry
# ---------------------------------------------------------------------------


def load_languages(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("llast").joinpath("data/langs.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    langs = {}
    for ln in text.splitlines():
        if ln.strip() and not ln.startswith("#"):
            code, name = ln.split("\t")
            langs[code.strip()] = name.strip()
    return langs


LANGUAGES = load_languages()


def language_name(code: str, registry=None) -> str:
    reg = LANGUAGES if registry is None else registry
    try:
        return reg[code]
    except KeyError:
        raise RegistryError(f"unknown language code {code!r}; registered: {', '.join(sorted(reg))}") from None


def parse_pair(pair: str) -> tuple[str, str]:
    try:
        src, tgt = pair.split("-")
    except ValueError:
        raise ConfigError(f"language pair must look like fr-en, got {pair!r}") from None
    language_name(src)
    language_name(tgt)
    return src, tgt


# ---------------------------------------------------------------------------
# records and manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    id: str
    audio_path: str
    src_lang: str
    tgt_lang: str
    src_text: str
    tgt_text: str
    task: str = ST

    @property
    def target(self):
        return self.src_text if self.task == ASR else self.tgt_text

    @property
    def pair(self):
        return f"{self.src_lang}-{self.tgt_lang}"


def load_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    base = path.parent
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].split("\t") != MANIFEST_HEADER:
        raise ParseError(f"{path}:1: expected tab-separated header " + " ".join(MANIFEST_HEADER))
    records, seen = [], set()
    for lineno, ln in enumerate(lines[1:], start=2):
        cols = ln.split("\t")
        if len(cols) != len(MANIFEST_HEADER):
            raise ParseError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} columns, got {len(cols)}")
        rid, audio, src, tgt, src_text, tgt_text = cols
        if not rid:
            raise ParseError(f"{path}:{lineno}: empty id")
        if rid in seen:
            raise ParseError(f"{path}:{lineno}: duplicate id {rid!r}")
        seen.add(rid)
        language_name(src)
        language_name(tgt)
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        records.append(SampleRecord(rid, str(audio_path), src, tgt, src_text, tgt_text))
    return records


def _check_field(s):
    if "\t" in s or "\n" in s or "\r" in s:
        raise ConfigError(f"manifest fields cannot contain tabs or newlines: {s!r}")
    return s


def write_manifest(path, records: Iterable[SampleRecord], relative_to=None):
    path = Path(path)
    rel = Path(relative_to) if relative_to is not None else path.parent
    rows = ["\t".join(MANIFEST_HEADER)]
    for r in records:
        audio = Path(r.audio_path)
        try:
            audio = audio.relative_to(rel)
        except ValueError:
            pass
        fields = [r.id, str(audio), r.src_lang, r.tgt_lang, r.src_text, r.tgt_text]
        rows.append("\t".join(_check_field(f) for f in fields))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------


def build_prompt(r: SampleRecord, mode="train", include_transcript=None) -> tuple[str, str]:
    """Return ``(prompt_text, target_text)``; the target is empty in ``infer`` mode.

    ``include_transcript`` defaults to true for training and false for inference.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"prompt mode must be train or infer, got {mode!r}")
    if include_transcript is None:
        include_transcript = mode == "train"
    src = language_name(r.src_lang)
    if r.task == ASR:
        prompt = ASR_TEMPLATE.format(src=src)
    else:
        prompt = ST_TEMPLATE.format(src=src, tgt=language_name(r.tgt_lang))
    if include_transcript:
        prompt += TRANSCRIPT_HINT.format(text=r.src_text)
    return prompt, (r.target if mode == "train" else "")


def vocab_texts(records: Iterable[SampleRecord]) -> list[str]:
    """Every text a model sees for ``records``: both sides plus ST and ASR prompts."""
    out = []
    for r in records:
        out += [r.src_text, r.tgt_text]
        out += [build_prompt(replace(r, task=t), "train", True)[0] for t in (ST, ASR)]
    return out


# ---------------------------------------------------------------------------
# mixing and ASR augmentation
# ---------------------------------------------------------------------------


@dataclass
class MixPolicy:
    asr_ratio: float = 0.5
    language_weights: dict = field(default_factory=dict)
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.asr_ratio <= 1.0:
            raise ConfigError(f"asr_ratio must lie in [0, 1], got {self.asr_ratio}")
        if any(w < 0 for w in self.language_weights.values()):
            raise ConfigError("language weights must be non-negative")
        total = sum(self.language_weights.values())
        if self.language_weights and total <= 0:
            raise ConfigError("language weights sum to zero")
        if total:
            self.language_weights = {k: v / total for k, v in self.language_weights.items()}

    def weight(self, pair):
        if not self.language_weights:
            return 1.0
        return self.language_weights.get(pair, 0.0)


def mix_languages(records: Sequence[SampleRecord], policy: MixPolicy, epoch=0) -> list[SampleRecord]:
    """Interleave per-pair record lists; every record appears exactly once.

    Each pair's list is shuffled, then the next record is drawn from pair ``p``
    with probability proportional to ``weight(p) * remaining(p)``.
    """
    rng = np.random.default_rng(derive_seed(policy.shuffle_seed, f"mix:{epoch}"))
    groups = defaultdict(list)
    for r in records:
        groups[r.pair].append(r)
    pairs = sorted(groups)
    queues = []
    for p in pairs:
        g = groups[p]
        queues.append([g[i] for i in rng.permutation(len(g))])
    weights = np.array([policy.weight(p) for p in pairs], dtype=np.float64)
    weights = np.where(weights > 0, weights, 1e-12)
    pos = [0] * len(pairs)
    out = []
    while len(out) < len(records):
        remaining = np.array([len(q) - i for q, i in zip(queues, pos)], dtype=np.float64)
        prob = weights * remaining
        k = int(rng.choice(len(pairs), p=prob / prob.sum()))
        out.append(queues[k][pos[k]])
        pos[k] += 1
    return out


def asr_augment(records: Sequence[SampleRecord], policy: MixPolicy, epoch=0) -> list[SampleRecord]:
    """ST records plus ASR clones of a seeded ``asr_ratio`` fraction, interleaved."""
    st = [r for r in records if r.task == ST]
    rng = np.random.default_rng(derive_seed(policy.shuffle_seed, f"asr:{epoch}"))
    k = int(math.floor(policy.asr_ratio * len(st) + 0.5))
    chosen = sorted(rng.choice(len(st), size=k, replace=False)) if k else []
    clones = [replace(st[i], id=st[i].id + "#asr", task=ASR) for i in chosen]
    return mix_languages(st + clones, policy, epoch)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

# concept -> word per language; English is the target side
LEXICON = {
    "en": {"det": "the", "nouns": ["cat", "dog", "bird", "fish", "horse", "child", "farmer", "teacher"],
           "verbs": ["sees", "likes", "eats", "follows", "finds", "hears"],
           "adjs": ["small", "big", "red", "old"], "advs": ["today", "often", "now"]},
    "fr": {"det": "le", "nouns": ["chat", "chien", "oiseau", "poisson", "cheval", "enfant", "fermier", "professeur"],
           "verbs": ["voit", "aime", "mange", "suit", "trouve", "entend"],
           "adjs": ["petit", "grand", "rouge", "vieux"], "advs": ["aujourd'hui", "souvent", "maintenant"]},
    "de": {"det": "der", "nouns": ["Katze", "Hund", "Vogel", "Fisch", "Pferd", "Kind", "Bauer", "Lehrer"],
           "verbs": ["sieht", "mag", "isst", "folgt", "findet", "hört"],
           "adjs": ["kleine", "große", "rote", "alte"], "advs": ["heute", "oft", "jetzt"]},
    "es": {"det": "el", "nouns": ["gato", "perro", "pájaro", "pez", "caballo", "niño", "granjero", "maestro"],
           "verbs": ["ve", "quiere", "come", "sigue", "encuentra", "oye"],
           "adjs": ["pequeño", "grande", "rojo", "viejo"], "advs": ["hoy", "siempre", "ahora"]},
    "it": {"det": "il", "nouns": ["gatto", "cane", "uccello", "pesce", "cavallo", "bambino", "contadino", "maestro"],
           "verbs": ["vede", "ama", "mangia", "segue", "trova", "sente"],
           "adjs": ["piccolo", "grande", "rosso", "vecchio"], "advs": ["oggi", "spesso", "adesso"]},
}

TONE_S = 0.1
SYNTH_RATE = 16000
_TONE_BINS = list(range(20, 76, 2))


def _sentence(lang, concepts):
    lex = LEXICON[lang]
    adj, n1, v, n2, adv = concepts
    words = [lex["det"]] + ([lex["adjs"][adj]] if adj is not None else []) + [lex["nouns"][n1], lex["verbs"][v],
             lex["det"], lex["nouns"][n2]] + ([lex["advs"][adv]] if adv is not None else [])
    text = " ".join(words)
    return text[0].upper() + text[1:] + "."


def source_words(lang) -> list[str]:
    lex = LEXICON[lang]
    return [lex["det"]] + lex["nouns"] + lex["verbs"] + lex["adjs"] + lex["advs"]


def tone_map(seed: int, lang: str) -> dict[str, float]:
    """Seeded assignment of each source word to the DFT-bin frequency nearest a mel-bin centre."""
    step = SYNTH_RATE / 400
    return {w: round(mel_center_hz(b) / step) * step for w, b in tone_bins(seed, lang).items()}


def tone_bins(seed: int, lang: str) -> dict[str, int]:
    words = source_words(lang)
    rng = np.random.default_rng(derive_seed(seed, f"tones:{lang}"))
    return dict(zip(words, (int(b) for b in rng.choice(_TONE_BINS, size=len(words), replace=False))))


def audio_tokens(text: str) -> list[str]:
    """Source words rendered as tones: lowercase-initial words, punctuation dropped."""
    words = text.rstrip(".").split(" ")
    return [words[0][0].lower() + words[0][1:]] + words[1:]


def render_tones(tokens, tones, rate=SYNTH_RATE, amp=0.5):
    n = int(round(TONE_S * rate))
    ramp = int(0.005 * rate)
    env = np.ones(n)
    env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[-ramp:] = env[:ramp][::-1]
    t = np.arange(n) / rate
    return np.concatenate([amp * env * np.sin(2 * np.pi * tones[w] * t) for w in tokens]).astype(np.float32)


def synth_corpus(out_dir, seed: int, n_items: int, langs: Sequence[str] = ("fr-en",), prefix="") -> list[SampleRecord]:
    """Write ``manifest.tsv`` and ``audio/*.raw`` under ``out_dir``; returns the records.

    Items are spread round-robin over ``langs``; sentences are unique per pair.
    """
    if n_items < 1:
        raise ConfigError("n_items must be >= 1")
    pairs = [parse_pair(p) for p in langs]
    for src, tgt in pairs:
        if src not in LEXICON or tgt != "en" or src == "en":
            raise ConfigError(f"no synthetic grammar for {src}-{tgt}; supported sources: fr, de, es, it into en")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(seed, "synth"))
    used = defaultdict(set)
    records = []
    tones = {src: tone_map(seed, src) for src, _ in pairs}
    for i in range(n_items):
        src, tgt = pairs[i % len(pairs)]
        while True:
            concepts = (
                int(rng.integers(4)) if rng.random() < 0.5 else None,
                int(rng.integers(8)),
                int(rng.integers(6)),
                int(rng.integers(8)),
                int(rng.integers(3)) if rng.random() < 0.5 else None,
            )
            if concepts not in used[src]:
                used[src].add(concepts)
                break
        src_text, tgt_text = _sentence(src, concepts), _sentence(tgt, concepts)
        rid = f"{prefix}{src}{tgt}-{i:05d}"
        path = out / "audio" / f"{rid}.raw"
        write_raw(path, AudioWaveform(render_tones(audio_tokens(src_text), tones[src]), SYNTH_RATE))
        records.append(SampleRecord(rid, str(path), src, tgt, _check_field(src_text), _check_field(tgt_text)))
    write_manifest(out / "manifest.tsv", records)
    return records


def write_language_registry(path, registry=None):
    reg = LANGUAGES if registry is None else registry
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for code in reg:
            w.writerow([code, reg[code]])
