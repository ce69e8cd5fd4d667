"""Benchmark the compiled kernel extension against the numpy fallback.

Times each hot kernel at training-representative shapes, then one full
optimization step per backend.  Run:

    python benchmarks/bench_kernels.py [--steps N]
"""

import argparse
import importlib
import os
import subprocess
import sys
import time

import numpy as np


def timeit(fn, *args, repeat=50):
    fn(*args)
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best * 1e3


def bench_kernels():
    from dualspeech.backend import numpy_kernels
    try:
        from dualspeech.backend import _ckernels
    except ImportError:
        print("compiled extension not built; kernel comparison skipped")
        return
    rng = np.random.default_rng(0)
    rows, t = [], 20
    x2 = rng.normal(size=(640, 64))
    gamma, beta = np.ones(64), np.zeros(64)
    _, mean, rstd = numpy_kernels.layer_norm_fwd(x2, gamma, beta, 1e-6)
    dy2 = rng.normal(size=(640, 64))
    scores = rng.normal(size=(1920, t))
    mask = rng.random((1920, t)) < 0.8
    mask[:, 0] = True
    probs = numpy_kernels.masked_softmax_fwd(scores, mask)
    dprobs = rng.normal(size=scores.shape)
    x3 = rng.normal(size=(8, 2 * t, 64))
    w3 = rng.normal(size=(5, 64, 64))
    b3 = rng.normal(size=64)
    dy3 = rng.normal(size=(8, 2 * t, 64))
    ids = rng.integers(0, 24, size=640)
    dyE = rng.normal(size=(640, 64))

    cases = [
        ("layer_norm_fwd [640x64]", "layer_norm_fwd", (x2, gamma, beta, 1e-6)),
        ("layer_norm_bwd [640x64]", "layer_norm_bwd", (dy2, x2, gamma, mean, rstd)),
        (f"masked_softmax_fwd [1920x{t}]", "masked_softmax_fwd", (scores, mask)),
        (f"masked_softmax_bwd [1920x{t}]", "masked_softmax_bwd", (dprobs, probs)),
        (f"conv1d_fwd [8x{2*t}x64 k5]", "conv1d_fwd", (x3, w3, b3)),
        (f"conv1d_bwd [8x{2*t}x64 k5]", "conv1d_bwd", (dy3, x3, w3)),
        ("scatter_add [640 rows]", "scatter_add_rows",
         (np.zeros((24, 64)), ids.astype(np.int64), dyE)),
    ]
    print(f"{'kernel':34} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for label, name, args in cases:
        if name == "scatter_add_rows":
            tn = timeit(lambda: numpy_kernels.scatter_add_rows(
                np.zeros((24, 64)), ids, dyE))
            tc = timeit(lambda: _ckernels.scatter_add_rows(
                np.zeros((24, 64)), ids.astype(np.int64), dyE))
        else:
            tn = timeit(getattr(numpy_kernels, name), *args)
            tc = timeit(getattr(_ckernels, name), *args)
        print(f"{label:34} {tn:9.3f}ms {tc:9.3f}ms {tn / tc:7.1f}x")
    print("\nNote: conv1d ships on the numpy/BLAS path in both backends; "
          "the scalar-loop variant above is kept for comparison.")


def bench_train_step(steps):
    """One subprocess per backend (selection happens at import)."""
    code = f"""
import time
import numpy as np
import dualspeech
from dualspeech.corpus import ToySpec, synthesize_toy_corpus, split_dataset
from dualspeech.model import ModelConfig, ModelParameters
from dualspeech.optim import OptimizerState
from dualspeech.training import TrainSettings, CorruptionConfig, train_step
from dualspeech.transformer import TransformerConfig

spec = ToySpec(n_phonemes=20, frames_per_phoneme=2, min_len=4, max_len=10,
               n_utterances=200)
utts, vocab = synthesize_toy_corpus(spec, 11)
part = split_dataset(utts, 11, 160, 20, 20, 16)
t = TransformerConfig(num_layers=2, model_dim=64, ffn_dim=256, num_heads=4,
                      dropout=0.0, max_len=256)
model = ModelParameters(ModelConfig(transformer=t, vocab_size=len(vocab),
                                    n_mels=80, prenet_hidden=64,
                                    postnet_hidden=64), seed=11)
opt = OptimizerState(model.params, d_model=64, warmup_steps=300)
settings = TrainSettings(corruption=CorruptionConfig(0.3), group_size=8,
                         speech_max_ratio=6.0, text_max_ratio=1.0)
times = []
for step in range({steps}):
    t0 = time.perf_counter()
    train_step(model, part, opt, settings, vocab, seed=11, step=step)
    times.append(time.perf_counter() - t0)
print(f"{{dualspeech.BACKEND}}: median {{sorted(times)[len(times)//2]:.3f}}s/step"
      f" over {steps} steps")
"""
    for backend in ("python", "compiled"):
        env = dict(os.environ, DUALSPEECH_KERNELS=backend)
        try:
            out = subprocess.run([sys.executable, "-c", code], env=env,
                                 capture_output=True, text=True, check=True)
            print(out.stdout.strip())
        except subprocess.CalledProcessError as exc:
            print(f"{backend}: failed ({exc.stderr.strip().splitlines()[-1]})")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5,
                    help="training steps per backend for the end-to-end run")
    args = ap.parse_args()
    print("== kernel micro-benchmarks ==")
    bench_kernels()
    print("\n== full training step ==")
    bench_train_step(args.steps)
