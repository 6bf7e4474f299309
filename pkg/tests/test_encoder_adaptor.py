import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llast import autograd as ag
from llast.adaptor import AdaptorConfig, adapt, build_adaptor
from llast.encoder import EncoderConfig, build_encoder, encode, encoder_param_count, layer_param_count, pad_features
from llast.errors import ConfigError
from llast.frontend import AcousticFeatures


def test_encoder_init_deterministic():
    a = build_encoder(EncoderConfig(), 3).state_dict()
    b = build_encoder(EncoderConfig(), 3).state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_encoder_divisibility_error():
    with pytest.raises(ConfigError):
        EncoderConfig(d_model=64, n_heads=5)


def test_encoder_param_count_closed_form():
    cfg = EncoderConfig(d_model=64, n_layers=2, ff_mult=4, n_heads=4)
    enc = build_encoder(cfg, 0)
    blocks = sum(p.data.size for n, p in enc.named_parameters() if n.startswith("blocks."))
    d, f = 64, 256
    per_layer = 4 * d * d + 3 * d + (d * f + f) + (f * d + d) + 4 * d
    assert layer_param_count(64, 4) == per_layer
    assert blocks == 2 * per_layer
    assert enc.num_parameters() == encoder_param_count(cfg)


def test_encoder_subsampled_length():
    enc = build_encoder(EncoderConfig(), 0)
    out = encode(enc, AcousticFeatures(np.random.default_rng(0).normal(size=(100, 80)), 0.01, 80))
    assert out.T_prime == 25
    assert out.states.shape == (25, 32)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3000), st.sampled_from([1, 2, 4]))
def test_out_frames_property(T, s):
    assert EncoderConfig(subsample_factor=s).out_frames(T) == -(-T // s)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 60), st.sampled_from([1, 2, 4]))
def test_encoder_shape_contract(T, s):
    enc = build_encoder(EncoderConfig(d_model=8, n_heads=2, n_layers=1, subsample_factor=s), 0)
    with ag.no_grad():
        z, lens = enc(np.zeros((1, T, 80), np.float32), np.array([T]))
    assert z.shape[1] == -(-T // s) == lens[0]


def test_encoder_zero_input_finite():
    enc = build_encoder(EncoderConfig(), 0)
    with ag.no_grad():
        z, _ = enc(np.zeros((1, 40, 80), np.float32), np.array([40]))
    assert np.all(np.isfinite(z.data))


def test_encoder_identical_batch_rows():
    enc = build_encoder(EncoderConfig(), 0)
    x = np.random.default_rng(1).normal(size=(1, 37, 80)).astype(np.float32)
    with ag.no_grad():
        z, _ = enc(np.concatenate([x, x]), np.array([37, 37]))
    assert np.array_equal(z.data[0], z.data[1])


def test_encoder_padding_does_not_leak():
    enc = build_encoder(EncoderConfig(), 0)
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(20, 80)), rng.normal(size=(41, 80))
    frames, lens = pad_features([a, b])
    with ag.no_grad():
        z, out_lens = enc(frames.astype(np.float32), lens)
        alone, _ = enc(a[None].astype(np.float32), np.array([20]))
    np.testing.assert_allclose(z.data[0, : out_lens[0]], alone.data[0], atol=1e-5)


def test_encoder_non_causal():
    enc = build_encoder(EncoderConfig(), 0)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=(1, 64, 80)).astype(np.float32)
        t = int(rng.integers(8, 64))
        y = x.copy()
        y[0, t] += 1.0
        with ag.no_grad():
            z0, _ = enc(x, np.array([64]))
            z1, _ = enc(y, np.array([64]))
        early = t // 4
        assert early > 0
        assert not np.array_equal(z0.data[0, :early], z1.data[0, :early])


def test_adaptor_shape_and_count():
    cfg = AdaptorConfig(in_dim=32, hidden_dim=48, out_dim=24)
    a = build_adaptor(cfg, 0)
    out = adapt(a, ag.tensor(np.ones((7, 32), np.float32)))
    assert out.shape == (7, 24)
    i, h, o = 32, 48, 24
    assert a.num_parameters(trainable_only=True) == i * h + h + h * h + h + h * o + o == cfg.param_count()


def test_adaptor_zero_weights_zero_output():
    a = build_adaptor(AdaptorConfig(), 0)
    for p in a.parameters():
        p.data[...] = 0
    out = a(ag.tensor(np.random.default_rng(0).normal(size=(5, 32)).astype(np.float32)))
    assert np.all(out.data == 0)


def test_adaptor_replay_bitwise():
    x = ag.tensor(np.random.default_rng(0).normal(size=(6, 32)).astype(np.float32))
    assert np.array_equal(build_adaptor(AdaptorConfig(), 5)(x).data, build_adaptor(AdaptorConfig(), 5)(x).data)


def test_adaptor_requires_three_layers():
    with pytest.raises(ConfigError):
        AdaptorConfig(n_layers=2)


def test_gradcheck_encoder_and_adaptor():
    with ag.float64_mode():
        enc = build_encoder(EncoderConfig(d_model=8, n_heads=2, n_layers=1, ff_mult=2), 0)
        ad = build_adaptor(AdaptorConfig(in_dim=8, hidden_dim=8, out_dim=8), 0)
        x = np.random.default_rng(0).normal(size=(2, 12, 80))
        lens = np.array([12, 9])
        w = np.random.default_rng(1).normal(size=(2, 3, 8))

        def f():
            z, _ = enc(x, lens)
            return ag.sum_(ag.mul(ad(z), ag.tensor(w)))

        params = enc.parameters() + ad.parameters()
        err = ag.finite_difference_check(f, params, h=1e-5, max_per_param=6)
    assert err < 1e-4
