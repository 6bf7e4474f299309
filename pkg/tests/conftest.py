import numpy as np
import pytest

from llast.adaptor import AdaptorConfig
from llast.data import synth_corpus, vocab_texts
from llast.encoder import EncoderConfig
from llast.lm import LMConfig
from llast.model import ModelConfig, SpeechTranslator
from llast.vocab import Vocabulary


def tiny_config(d=16, layers=2, heads=2, hidden=32, max_seq_len=128):
    return ModelConfig(
        encoder=EncoderConfig(d_model=d, n_layers=layers, n_heads=heads, ff_mult=2),
        adaptor=AdaptorConfig(in_dim=d, hidden_dim=hidden, out_dim=d),
        lm=LMConfig(d_model=d, n_layers=layers, n_heads=heads, ff_mult=2, max_seq_len=max_seq_len),
    )


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return synth_corpus(out, 0, 8)


@pytest.fixture(scope="session")
def vocab(corpus):
    return Vocabulary.build(vocab_texts(corpus))


@pytest.fixture
def tiny_model(vocab):
    return SpeechTranslator(tiny_config(), vocab, seed=0)


def random_feats(rng, T, n_mels=80):
    return rng.normal(size=(T, n_mels)).astype(np.float32)


ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(n, title, ok, detail):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
