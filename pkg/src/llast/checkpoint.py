"""Binary checkpoints: named f32 tensors plus key=value config blocks.

Layout (little-endian)::

    b"LLST" | version u32 | crc32(payload) u32 | payload
    payload = n_tensors u32, then per tensor:
                  name_len u32, name utf-8, ndim u32, dims u32*ndim, f32 data
              n_blocks u32, then per block: len u32, utf-8 text "[section]\\nkey=value\\n..."
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .adaptor import AdaptorConfig
from .encoder import EncoderConfig
from .errors import IntegrityError
from .frontend import FrontendConfig
from .lm import LMConfig
from .lora import L_LORA, S_LORA, LoRAConfig, adapters, inject
from .model import ModelConfig, SpeechTranslator
from .vocab import Vocabulary

MAGIC = b"LLST"
VERSION = 1


def _pack_tensors(named):
    parts = [struct.pack("<I", len(named))]
    for name, arr in named:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())
    return b"".join(parts)


def _fmt_block(section, items):
    return f"[{section}]\n" + "".join(f"{k}={v}\n" for k, v in items)


def _dc_block(section, dc):
    return _fmt_block(section, asdict(dc).items())


def _coerce(dc_type, kv):
    out = {}
    for f in fields(dc_type):
        if f.name not in kv:
            continue
        raw = kv[f.name]
        default = f.default
        if isinstance(default, bool):
            out[f.name] = raw == "True"
        elif isinstance(default, int):
            out[f.name] = int(raw)
        elif isinstance(default, float):
            out[f.name] = float(raw)
        else:
            out[f.name] = raw
    return dc_type(**out)


def save_checkpoint(path, model: SpeechTranslator, optimizer=None, meta=None):
    named = [(n, p.data) for n, p in model.named_parameters()]
    if optimizer is not None:
        named += [(f"optim.m/{n}", m) for n, m in optimizer.m.items()]
        named += [(f"optim.v/{n}", v) for n, v in optimizer.v.items()]
    cfg = model.cfg
    blocks = [
        _dc_block("frontend", cfg.frontend),
        _dc_block("encoder", cfg.encoder),
        _dc_block("adaptor", cfg.adaptor),
        _dc_block("lm", cfg.lm),
        _fmt_block("lora", [(n, f"rank={a.rank} alpha={a.alpha!r} merged={int(a.merged)}") for n, a in adapters(model)]),
        _fmt_block("trainable", [(n, int(p.trainable)) for n, p in model.named_parameters()]),
        _fmt_block("vocab", enumerate(model.vocab.to_lines())),
    ]
    if optimizer is not None:
        blocks.append(_fmt_block("optimizer", [("t", optimizer.t)] + list(asdict(optimizer.cfg).items())))
    if meta:
        blocks.append(_fmt_block("meta", meta.items()))
    payload = _pack_tensors(named)
    payload += struct.pack("<I", len(blocks))
    for b in blocks:
        bb = b.encode("utf-8")
        payload += struct.pack("<I", len(bb)) + bb
    header = MAGIC + struct.pack("<II", VERSION, zlib.crc32(payload))
    Path(path).write_bytes(header + payload)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise IntegrityError("checkpoint payload ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path):
    """Return ``(tensors: dict name -> f32 array, blocks: dict section -> dict)``."""
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise IntegrityError(f"{path}: not an LLST checkpoint")
    version, crc = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise IntegrityError(f"{path}: checkpoint version {version}, expected {VERSION}")
    payload = buf[12:]
    if zlib.crc32(payload) != crc:
        raise IntegrityError(f"{path}: checksum mismatch (corrupt or truncated)")
    r = _Reader(payload)
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    blocks = {}
    for _ in range(r.u32()):
        text = r.take(r.u32()).decode("utf-8")
        head, *lines = text.split("\n")
        section = head.strip("[]")
        kv = {}
        for ln in lines:
            if ln:
                k, _, v = ln.partition("=")
                kv[k] = v
        blocks[section] = kv
    if r.pos != len(payload):
        raise IntegrityError(f"{path}: trailing bytes after payload")
    return tensors, blocks


def load_checkpoint(path):
    """Rebuild the model (with adapters and flags). Returns ``(model, optimizer_state, meta)``.

    ``optimizer_state`` is ``None`` or a dict with ``t``, ``m``, ``v``, ``cfg``.
    """
    tensors, blocks = read_checkpoint(path)
    cfg = ModelConfig(
        frontend=_coerce(FrontendConfig, blocks["frontend"]),
        encoder=_coerce(EncoderConfig, blocks["encoder"]),
        adaptor=_coerce(AdaptorConfig, blocks["adaptor"]),
        lm=_coerce(LMConfig, blocks["lm"]),
    )
    vocab_kv = blocks["vocab"]
    vocab = Vocabulary.from_lines(vocab_kv[str(i)] for i in range(len(vocab_kv)))
    model = SpeechTranslator(cfg, vocab, seed=0)
    merged = {}
    for name, spec in blocks.get("lora", {}).items():
        opts = dict(item.split("=") for item in spec.split())
        scope = S_LORA if name.startswith("encoder.") else L_LORA
        target = name.split(".", 1)[1]
        inject(model, LoRAConfig(rank=int(opts["rank"]), alpha=float(opts["alpha"]), targets=(target,), scope=scope))
        merged[name] = opts["merged"] == "1"
    for name, a in adapters(model):
        a.merged = merged[name]
    params = dict(model.named_parameters())
    missing = set(params) - set(tensors)
    if missing:
        raise IntegrityError(f"{path}: missing tensors {sorted(missing)[:5]}")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise IntegrityError(f"{path}: {name} has shape {tensors[name].shape}, model expects {p.shape}")
        p.data = tensors[name].copy()
        p.trainable = blocks["trainable"].get(name, "1") == "1"
    opt = None
    if "optimizer" in blocks:
        kv = blocks["optimizer"]
        opt = {
            "t": int(kv["t"]),
            "m": {k[len("optim.m/") :]: v for k, v in tensors.items() if k.startswith("optim.m/")},
            "v": {k[len("optim.v/") :]: v for k, v in tensors.items() if k.startswith("optim.v/")},
            "cfg": {k: v for k, v in kv.items() if k != "t"},
        }
    return model, opt, blocks.get("meta", {})
