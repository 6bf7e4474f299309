import math

import numpy as np
import pytest

from llast import autograd as ag
from llast.autograd import Parameter
from llast.errors import ConfigError, DegenerateBatchError, NumericError
from llast.trainer import (
    AdamW, FeatureStore, OptimizerConfig, ScheduleConfig, TrainConfig, adamw_step, compute_loss, examples_for, lr_at,
    train,
)

from conftest import random_feats

PROMPT = "<audio><AudioInputs></audio> Translate the French sentence to English."


def test_lr_examples():
    o = OptimizerConfig()
    s = ScheduleConfig(warmup_steps=100, total_steps=1000)
    assert lr_at(s, o, 0) == 0.0
    assert lr_at(s, o, 100) == 0.0002
    assert abs(lr_at(s, o, 550) - 0.0001) < 1e-12
    assert lr_at(s, o, 1000) == 0.0
    with pytest.raises(ConfigError):
        lr_at(s, o, 1001)
    with pytest.raises(ConfigError):
        lr_at(s, o, -1)


def test_lr_piecewise_linear_peak():
    o = OptimizerConfig()
    s = ScheduleConfig(37, 400)
    lrs = np.array([lr_at(s, o, k) for k in range(401)])
    assert int(np.argmax(lrs)) == 37
    d2 = np.diff(lrs, 2)
    assert np.count_nonzero(np.abs(d2) > 1e-15) == 1  # a single kink at the peak


def test_config_invariants():
    with pytest.raises(ConfigError):
        OptimizerConfig(beta1=0.99, beta2=0.98)
    with pytest.raises(ConfigError):
        ScheduleConfig(10, 10)
    assert ScheduleConfig.for_total(1000).warmup_steps == 100


def one_param(w, g):
    p = Parameter(np.array([w], dtype=np.float64))
    p.grad = np.array([g], dtype=np.float64)
    return p


def test_adamw_closed_form_step():
    p = one_param(1.0, 0.5)
    adamw_step([("w", p)], 0.1, OptimizerConfig(weight_decay=0.01))
    assert abs(p.data[0] - 0.899) < 1e-6


def test_adamw_zero_grad_no_decay():
    p = one_param(1.7, 0.0)
    adamw_step([("w", p)], 0.1, OptimizerConfig(weight_decay=0.0))
    assert p.data[0] == 1.7


def test_adamw_decay_only():
    p = one_param(2.0, 0.0)
    adamw_step([("w", p)], 0.1, OptimizerConfig(weight_decay=0.01))
    assert abs(p.data[0] - 2.0 * (1 - 0.001)) < 1e-12


def test_adamw_nan_names_parameter():
    p = one_param(1.0, float("nan"))
    with pytest.raises(NumericError, match="enc.w"):
        adamw_step([("enc.w", p)], 0.1, OptimizerConfig())


def test_adamw_moments_only_for_trainables():
    a, b = one_param(1.0, 0.1), one_param(1.0, 0.1)
    b.trainable = False
    opt = AdamW([("a", a), ("b", b)], OptimizerConfig())
    assert set(opt.m) == {"a"}
    opt.step(0.1)
    assert b.data[0] == 1.0


def test_clipping_bounds_global_norm():
    p = one_param(0.0, 100.0)
    opt = AdamW([("w", p)], OptimizerConfig(weight_decay=0.0, clip_norm=1.0))
    opt.step(0.1)
    assert abs(opt.m["w"][0] - 0.1 * 1.0) < 1e-12


def test_uniform_model_loss_is_log_v(tiny_model):
    rng = np.random.default_rng(0)
    batch = [(random_feats(rng, 30), PROMPT, "The cat sees the dog.")]
    with ag.no_grad():
        loss = compute_loss(tiny_model, batch).item()
    V = len(tiny_model.vocab)
    assert abs(loss - math.log(V)) < 0.05 * math.log(V)
    tiny_model.lm.tok_emb.data[...] = 0  # exactly uniform
    with ag.no_grad():
        assert abs(compute_loss(tiny_model, batch).item() - math.log(V)) < 1e-5


def test_duplicated_sequence_same_loss(tiny_model):
    ex = (random_feats(np.random.default_rng(1), 25), PROMPT, "The cat.")
    with ag.no_grad():
        one = compute_loss(tiny_model, [ex]).item()
        two = compute_loss(tiny_model, [ex, ex]).item()
    assert abs(one - two) < 1e-6


def test_empty_batch_rejected(tiny_model):
    with pytest.raises(DegenerateBatchError):
        compute_loss(tiny_model, [])


def test_full_pipeline_gradcheck(vocab):
    from conftest import tiny_config
    from llast.lora import prepare_adaptation
    from llast.model import SpeechTranslator

    with ag.float64_mode():
        m = SpeechTranslator(tiny_config(d=8, hidden=8), vocab, seed=0)
        prepare_adaptation(m, "dual", ranks={"S-LoRA": 2, "L-LoRA": 2})
        for _, a in m.named_modules():
            if hasattr(a, "B") and isinstance(a.B, Parameter):
                a.B.data = np.random.default_rng(0).normal(0, 0.1, size=a.B.shape)
        for _, p in m.named_parameters():
            p.trainable = True
        rng = np.random.default_rng(0)
        batch = [(rng.normal(size=(14, 80)), PROMPT, "The cat."), (rng.normal(size=(9, 80)), PROMPT, "A dog sees.")]
        err = ag.finite_difference_check(lambda: m.loss(batch), m.parameters(), h=1e-5, max_per_param=3)
    assert err < 1e-4


def _tcfg(**kw):
    base = dict(max_steps=12, batch_size=4, log_every=0, train_transcript=False)
    base.update(kw)
    return TrainConfig(**base)


def test_training_deterministic(vocab, corpus, tmp_path):
    from conftest import tiny_config
    from llast.model import SpeechTranslator

    csvs = []
    for run in ("a", "b"):
        m = SpeechTranslator(tiny_config(), vocab, seed=0)
        train(m, corpus, OptimizerConfig(peak_lr=1e-3), _tcfg(), out_dir=tmp_path / run)
        csvs.append((tmp_path / run / "loss.csv").read_bytes())
    assert csvs[0] == csvs[1]
    assert csvs[0].startswith(b"step,loss,lr\n")
    assert (tmp_path / "a" / "final.llst").exists()


def test_periodic_checkpoints(vocab, corpus, tmp_path):
    from conftest import tiny_config
    from llast.model import SpeechTranslator

    m = SpeechTranslator(tiny_config(), vocab, seed=0)
    train(m, corpus, OptimizerConfig(), _tcfg(max_steps=6, ckpt_every=3), out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("ckpt_step*.llst")) == ["ckpt_step3.llst", "ckpt_step6.llst"]


def test_loss_decreases_early(vocab, corpus):
    from conftest import tiny_config
    from llast.model import SpeechTranslator

    features = None
    wins = 0
    for seed in range(5):
        m = SpeechTranslator(tiny_config(), vocab, seed=seed)
        features = features or FeatureStore(m.cfg.frontend)
        st = train(m, corpus, OptimizerConfig(peak_lr=1e-3), _tcfg(max_steps=50, seed=seed), features=features)
        losses = [x[1] for x in st.trace]
        wins += np.mean(losses[-5:]) < np.mean(losses[:5])
    assert wins >= 4


def test_examples_for_uses_transcript_flag(corpus):
    fs = FeatureStore.__new__(FeatureStore)
    fs._cache = {r.audio_path: np.zeros((5, 80)) for r in corpus}
    with_hint = examples_for(corpus[:1], fs, True)[0][1]
    without = examples_for(corpus[:1], fs, False)[0][1]
    assert "Transcripts of AudioInputs" in with_hint and "Transcripts" not in without
