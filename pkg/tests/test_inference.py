import numpy as np
import pytest

from llast.errors import ConfigError, RegistryError
from llast.frontend import load_audio
from llast.inference import DecodeConfig, Hypothesis, beam_search, greedy, translate

from toy_lm import exhaustive_best, toy_step_fn


def test_decode_config_invariants():
    with pytest.raises(ConfigError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ConfigError):
        DecodeConfig(max_new_tokens=0)
    assert DecodeConfig().beam_size == 5


def test_vocab4_len4_matches_enumeration():
    for seed in range(10):
        step = toy_step_fn(4, seed)
        best, score = exhaustive_best(step, 4, 4)
        top = beam_search(step, DecodeConfig(beam_size=4**4, max_new_tokens=4), eos=0)[0]
        assert top.tokens == best and abs(top.logprob - score) < 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_beam1_is_greedy(seed):
    rng = np.random.default_rng(seed)
    V, L = int(rng.integers(2, 7)), int(rng.integers(1, 6))
    step = toy_step_fn(V, seed)
    g = greedy(step, L, eos=0)
    b = beam_search(step, DecodeConfig(beam_size=1, max_new_tokens=L), eos=0)[0]
    assert (b.tokens, b.finished) == (g.tokens, g.finished)
    assert abs(b.logprob - g.logprob) < 1e-12


def test_tie_break_lower_id_first():
    def step(prefixes):
        out = []
        for p in prefixes:
            if not p:
                out.append(np.log([0.1, 0.45, 0.45]))
            else:
                out.append(np.log([0.9, 0.05, 0.05]))
        return np.array(out)

    for _ in range(3):
        hyps = beam_search(step, DecodeConfig(beam_size=2, max_new_tokens=3), eos=0)
        assert hyps[0].tokens == (1, 0) and hyps[1].tokens == (2, 0)


def test_ranked_and_finished_never_extended():
    step = toy_step_fn(5, 3)
    hyps = beam_search(step, DecodeConfig(beam_size=5, max_new_tokens=4), eos=0)
    scores = [h.score() for h in hyps]
    assert scores == sorted(scores, reverse=True)
    for a, b in zip(hyps, hyps[1:]):
        assert (-a.score(), a.tokens) < (-b.score(), b.tokens)
    for h in hyps:
        assert h.finished and h.tokens.count(0) == 1 and h.tokens[-1] == 0


def test_truncated_when_nothing_finishes():
    def step(prefixes):
        return np.tile(np.log([1e-12, 0.5, 0.5 - 1e-12]), (len(prefixes), 1))

    hyps = beam_search(step, DecodeConfig(beam_size=2, max_new_tokens=2), eos=0)
    assert hyps and all(h.truncated and not h.finished for h in hyps)
    assert len(hyps[0].tokens) == 2


def test_length_normalization_changes_ranking():
    def step(prefixes):
        out = []
        for p in prefixes:
            out.append(np.log([0.6, 0.4]) if not p else np.log([0.99, 0.01]))
        return np.array(out)

    raw = beam_search(step, DecodeConfig(beam_size=2, max_new_tokens=3), eos=0)[0]
    norm = beam_search(step, DecodeConfig(beam_size=2, max_new_tokens=3, length_norm_alpha=1.0), eos=0)[0]
    assert raw.tokens == (0,)
    assert norm.tokens == (1, 0)


def test_logprob_non_increasing():
    step = toy_step_fn(4, 9)
    for h in beam_search(step, DecodeConfig(beam_size=8, max_new_tokens=4), eos=0):
        partial = np.cumsum([step([h.tokens[:i]])[0][t] for i, t in enumerate(h.tokens)])
        assert np.all(np.diff(partial) <= 0)
        assert abs(partial[-1] - h.logprob) < 1e-9


def test_translate_deterministic_and_registry(tiny_model, corpus):
    wave = load_audio(corpus[0].audio_path)
    cfg = DecodeConfig(beam_size=2, max_new_tokens=4)
    assert translate(tiny_model, wave, "fr", "en", cfg) == translate(tiny_model, wave, "fr", "en", cfg)
    with pytest.raises(RegistryError):
        translate(tiny_model, wave, "xx", "en", cfg)


def test_hypothesis_score():
    h = Hypothesis((3, 4, 0), -3.0, True)
    assert h.score() == -3.0 and h.score(1.0) == -1.0
