import struct

import numpy as np
import pytest

from llast import autograd as ag
from llast.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from llast.errors import IntegrityError
from llast.lora import adapters, merge, prepare_adaptation
from llast.trainer import AdamW, OptimizerConfig

from conftest import random_feats

PROMPT = "<audio><AudioInputs></audio> Translate the French sentence to English."


def forward(model, seed=0):
    rng = np.random.default_rng(seed)
    with ag.no_grad():
        return model.lm(model.prompts([(random_feats(rng, 33), PROMPT, "The cat."), (random_feats(rng, 20), PROMPT, None)])).data


def test_roundtrip_bitwise_forward(tiny_model, tmp_path):
    before = forward(tiny_model)
    save_checkpoint(tmp_path / "m.llst", tiny_model)
    loaded, opt, meta = load_checkpoint(tmp_path / "m.llst")
    assert opt is None and meta == {}
    assert np.array_equal(forward(loaded), before)
    assert loaded.vocab.tokens == tiny_model.vocab.tokens
    assert loaded.cfg == tiny_model.cfg


def test_layout_header(tiny_model, tmp_path):
    save_checkpoint(tmp_path / "m.llst", tiny_model)
    raw = (tmp_path / "m.llst").read_bytes()
    assert raw[:4] == MAGIC and struct.unpack("<I", raw[4:8])[0] == 1


def test_truncated_rejected(tiny_model, tmp_path):
    p = tmp_path / "m.llst"
    save_checkpoint(p, tiny_model)
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(IntegrityError):
        load_checkpoint(p)


def test_bitflip_rejected(tiny_model, tmp_path):
    p = tmp_path / "m.llst"
    save_checkpoint(p, tiny_model)
    raw = bytearray(p.read_bytes())
    raw[200] ^= 1
    p.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="checksum"):
        load_checkpoint(p)


def test_version_mismatch_rejected(tiny_model, tmp_path):
    p = tmp_path / "m.llst"
    save_checkpoint(p, tiny_model)
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="version"):
        load_checkpoint(p)


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(IntegrityError):
        read_checkpoint(tmp_path / "x")


def test_adapters_and_merged_flags_restored(tiny_model, tmp_path):
    prepare_adaptation(tiny_model, "dual")
    rng = np.random.default_rng(0)
    for _, a in adapters(tiny_model):
        a.B.data = rng.normal(0, 0.1, size=a.B.shape).astype(np.float32)
    first = adapters(tiny_model)[0][1]
    merge(first)
    before = forward(tiny_model)
    save_checkpoint(tmp_path / "m.llst", tiny_model)
    loaded, _, _ = load_checkpoint(tmp_path / "m.llst")
    got = {n: (a.rank, a.alpha, a.merged) for n, a in adapters(loaded)}
    want = {n: (a.rank, a.alpha, a.merged) for n, a in adapters(tiny_model)}
    assert got == want and sum(m for _, _, m in got.values()) == 1
    assert np.array_equal(forward(loaded), before)
    assert {n for n, p in loaded.named_parameters() if p.trainable} == {
        n for n, p in tiny_model.named_parameters() if p.trainable
    }


def test_optimizer_state_roundtrip(tiny_model, tmp_path):
    opt = AdamW(tiny_model.named_parameters(), OptimizerConfig())
    ex = [(random_feats(np.random.default_rng(0), 30), PROMPT, "The dog.")]
    ag.backward(tiny_model.loss(ex))
    opt.step(1e-3)
    save_checkpoint(tmp_path / "m.llst", tiny_model, opt, meta={"seed": 3})
    _, state, meta = load_checkpoint(tmp_path / "m.llst")
    assert state["t"] == 1 and meta == {"seed": "3"}
    for n in opt.m:
        assert np.array_equal(state["m"][n], opt.m[n]) and np.array_equal(state["v"][n], opt.v[n])
