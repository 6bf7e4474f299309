import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llast import autograd as ag
from llast.errors import LengthError, ShapeError
from llast.lm import LMConfig, assemble, batch_targets, build_lm, lm_forward
from llast.vocab import AUDIO_OPEN, BOS, EOS, SPECIALS, Vocabulary

V = Vocabulary.build(["Bonjour le monde.", "Hello world.", "Translate the French sentence to English."])


def test_vocab_layout():
    assert V.tokens[:6] == SPECIALS
    assert V.tokens[6] == "<0x00>" and V.tokens[261] == "<0xFF>"


def test_tokenize_examples():
    assert V.tokenize("") == [] and V.detokenize([]) == ""
    assert V.tokenize("<audio>") == [AUDIO_OPEN]
    assert V.detokenize(V.tokenize("Bonjour le monde.")) == "Bonjour le monde."


@settings(max_examples=100, deadline=None)
@given(st.text())
def test_roundtrip_any_text(s):
    assert V.detokenize(V.tokenize(s)) == s


def test_vocab_file_roundtrip(tmp_path):
    v = Vocabulary.build(["a\tb", "back\\slash", "line\nbreak", "x\r"])
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w.tokens == v.tokens


def test_build_is_frequency_then_lexicographic():
    v = Vocabulary.build(["b a", "b c"])
    assert v.tokens[262:] == ["b", " a", " c"]


def rows(rng, n, d=16):
    return ag.tensor(rng.normal(size=(n, d)).astype(np.float32))


def small_lm(seed=0, **kw):
    cfg = LMConfig(d_model=16, n_layers=2, n_heads=2, ff_mult=2, vocab_size=len(V), max_seq_len=64, **kw)
    return build_lm(cfg, seed)


def test_empty_text_after_audio_shape():
    lm = small_lm()
    Tp = 7
    p = assemble(V, "<audio><AudioInputs></audio>", rows(np.random.default_rng(0), Tp))
    with ag.no_grad():
        assert lm_forward(lm, p).shape == (Tp + 3, len(V))


def test_assemble_mask_counts():
    r = rows(np.random.default_rng(0), 5)
    target = "Hello world."
    p = assemble(V, "<audio><AudioInputs></audio> Translate the French sentence to English.", r, target)
    assert p.loss_mask.sum() == len(V.tokenize(target)) + 1
    assert list(p.target_ids) == V.tokenize(target) + [EOS]
    # BOS sits right before the target in the input, and is the first masked position
    first = int(np.argmax(p.loss_mask))
    assert p.segments[-1].ids[-len(V.tokenize(target)) - 1] == BOS
    assert first == len(p) - len(V.tokenize(target)) - 1


def test_prompt_needs_placeholder():
    with pytest.raises(ShapeError):
        assemble(V, "<audio></audio> no slot", rows(np.random.default_rng(0), 2))


def test_causality_bitwise():
    lm = small_lm()
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = assemble(V, "<audio><AudioInputs></audio> Translate", rows(rng, 6), "Hello world.")
        L = len(p)
        j = int(rng.integers(1, L))
        with ag.no_grad():
            x = lm.embed([p]).data
            base = _logits_from_embedding(lm, x)
            x2 = x.copy()
            x2[0, j] += rng.normal(size=x.shape[-1]).astype(x.dtype)
            pert = _logits_from_embedding(lm, x2)
        assert np.array_equal(base[0, :j], pert[0, :j])
        assert not np.array_equal(base[0, j:], pert[0, j:])


def _logits_from_embedding(lm, x):
    from llast.nn import causal_bias

    h = ag.tensor(x)
    for blk in lm.blocks:
        h = blk(h, causal_bias(x.shape[1]))
    return ag.linear(lm.ln_f(h), lm.tok_emb).data


def test_forward_deterministic():
    lm = small_lm()
    p = assemble(V, "<audio><AudioInputs></audio>", rows(np.random.default_rng(0), 4), "Hello")
    with ag.no_grad():
        assert np.array_equal(lm([p]).data, lm([p]).data)


def test_right_padding_does_not_change_logits():
    lm = small_lm()
    rng = np.random.default_rng(2)
    a = assemble(V, "<audio><AudioInputs></audio>", rows(rng, 3), "Hello")
    b = assemble(V, "<audio><AudioInputs></audio> Translate the French", rows(rng, 9), "Hello world.")
    with ag.no_grad():
        both = lm([a, b]).data
        alone = lm([a]).data
    np.testing.assert_allclose(both[0, : len(a)], alone[0], atol=1e-5)


def test_max_seq_len_enforced():
    lm = small_lm()
    p = assemble(V, "<audio><AudioInputs></audio>", rows(np.random.default_rng(0), 70))
    with pytest.raises(LengthError):
        lm([p])


def test_out_of_range_token_rejected():
    lm = small_lm()
    p = assemble(V, "<audio><AudioInputs></audio>", rows(np.random.default_rng(0), 2), None, extra_ids=[len(V) + 3])
    with pytest.raises(ShapeError):
        lm([p])


def test_chain_product_matches_mean_loss():
    with ag.float64_mode():
        lm = small_lm()
        p = assemble(V, "<audio><AudioInputs></audio> Translate", ag.tensor(np.random.default_rng(0).normal(size=(5, 16))), "Hello world.")
        logits = lm_forward(lm, p).data
        tgt, mask = batch_targets([p])
        loss = ag.masked_cross_entropy(ag.tensor(logits[None]), tgt, mask).item()
    z = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    pos = np.nonzero(p.loss_mask)[0]
    chain = np.prod(probs[pos, p.targets[pos]])
    assert abs(chain - np.exp(-len(pos) * loss)) <= 1e-5 * max(chain, 1e-300)


def test_gradcheck_lm():
    with ag.float64_mode():
        cfg = LMConfig(d_model=8, n_layers=2, n_heads=2, ff_mult=2, vocab_size=len(V), max_seq_len=32)
        lm = build_lm(cfg, 0)
        r = ag.Parameter(np.random.default_rng(0).normal(size=(3, 8)))
        p = assemble(V, "<audio><AudioInputs></audio>", r, "Hello world.")
        tgt, mask = batch_targets([p])

        def f():
            return ag.masked_cross_entropy(lm([p]), tgt, mask)

        err = ag.finite_difference_check(f, lm.parameters() + [r], h=1e-5, max_per_param=8)
    assert err < 1e-4
