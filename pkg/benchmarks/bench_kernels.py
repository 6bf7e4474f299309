"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py            # per-kernel timings
    python benchmarks/bench_kernels.py --e2e 30   # also 30 training steps under LLAST_NUMBA=1 and =0
"""

import argparse
import os
import subprocess
import sys
import tempfile
import timeit

import numpy as np

from llast import _kernels as K


def cases(rows, dim, dt):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, dim)).astype(dt)
    g = rng.normal(size=(rows, dim)).astype(dt)
    gamma, beta = np.ones(dim, dt), np.zeros(dim, dt)
    eps = dt(1e-5)
    _, xhat, rstd = K.np_layer_norm_fwd(x, gamma, beta, eps)
    y = K.np_softmax_fwd(x)
    wave = rng.normal(size=48000).astype(np.float64)
    h = np.hanning(241).astype(np.float64)
    return {
        "layer_norm_fwd": (K.np_layer_norm_fwd, K.nb_layer_norm_fwd, (x, gamma, beta, eps)),
        "layer_norm_bwd": (K.np_layer_norm_bwd, K.nb_layer_norm_bwd, (g, xhat, rstd, gamma)),
        "gelu_fwd": (K.np_gelu_fwd, K.nb_gelu_fwd, (x,)),
        "gelu_bwd": (K.np_gelu_bwd, K.nb_gelu_bwd, (x, g)),
        "softmax_fwd": (K.np_softmax_fwd, K.nb_softmax_fwd, (x,)),
        "softmax_bwd": (K.np_softmax_bwd, K.nb_softmax_bwd, (y, g)),
        "fir_resample 48k->16k": (K.np_fir_resample, K.nb_fir_resample, (wave, h, 1, 3, 16000, 120)),
    }


def best_of(fn, args, repeat):
    n, _ = timeit.Timer(lambda: fn(*args)).autorange()
    return min(timeit.repeat(lambda: fn(*args), number=n, repeat=repeat)) / n


E2E = """
import sys, time
from llast.data import synth_corpus, vocab_texts
from llast.model import ModelConfig, SpeechTranslator
from llast.trainer import OptimizerConfig, TrainConfig, train
from llast.vocab import Vocabulary
recs = synth_corpus(sys.argv[1], 0, 16)
model = SpeechTranslator(ModelConfig(), Vocabulary.build(vocab_texts(recs)), seed=0)
train(model, recs, OptimizerConfig(), TrainConfig(max_steps=2, log_every=0))  # warm caches and JIT
t = time.perf_counter()
train(model, recs, OptimizerConfig(), TrainConfig(max_steps=int(sys.argv[2]), log_every=0))
print(time.perf_counter() - t)
"""


def end_to_end(steps):
    out = {}
    with tempfile.TemporaryDirectory() as tmp:
        for flag in ("1", "0"):
            env = {**os.environ, "LLAST_NUMBA": flag}
            res = subprocess.run([sys.executable, "-c", E2E, os.path.join(tmp, flag), str(steps)],
                                 env=env, capture_output=True, text=True, check=True)
            out[flag] = float(res.stdout.strip().splitlines()[-1])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=512)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", type=int, default=0, metavar="STEPS")
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    print(f"{'kernel':<24}{'dtype':<9}{'numpy us':>11}{'numba us':>11}{'speedup':>9}")
    for dt in (np.float32, np.float64):
        for name, (np_fn, nb_fn, call) in cases(args.rows, args.dim, dt).items():
            nb_fn(*call)  # compile outside the timed region
            t_np, t_nb = best_of(np_fn, call, args.repeat), best_of(nb_fn, call, args.repeat)
            print(f"{name:<24}{np.dtype(dt).name:<9}{t_np * 1e6:>11.1f}{t_nb * 1e6:>11.1f}{t_np / t_nb:>8.2f}x")
    if args.e2e:
        t = end_to_end(args.e2e)
        print(f"\n{args.e2e} training steps: numba {t['1']:.2f}s, numpy {t['0']:.2f}s ({t['0'] / t['1']:.2f}x)")


if __name__ == "__main__":
    main()
