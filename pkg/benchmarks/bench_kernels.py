"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times each hot kernel on model-sized inputs, then one forward+backward pass
of the full autoencoder under each backend (separate processes, because the
backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from aclae_dt import _kernels_py as py

try:
    from aclae_dt import _ckernels as cy
except ImportError:
    cy = None

MODEL_STEP = """
import time
import numpy as np
from aclae_dt import kernels
from aclae_dt.model import ConvLSTMAutoencoder, ModelSpec, loss
m = ConvLSTMAutoencoder(ModelSpec(8, seq_len=5), seed=0)
x = np.random.default_rng(0).uniform(size=(16, 5, 1, 8, 8))
loss(m(x), x).backward()
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    loss(m(x), x).backward()
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def cases(rng):
    xp = rng.normal(size=(80, 64, 10, 10))
    cols = py.im2col(xp, 3, 1, 8, 8)
    pool_in = rng.normal(size=(80, 64, 8, 8))
    out, arg = py.maxpool2x2_forward(pool_in)
    series = rng.normal(size=(5000, 8))
    starts = np.arange(0, 4970, 5)
    return {
        "im2col (80x64x10x10)": lambda k: k.im2col(xp, 3, 1, 8, 8),
        "col2im (80x64x10x10)": lambda k: k.col2im(cols, 80, 64, 10, 10, 3, 1, 8, 8),
        "maxpool fwd (80x64x8x8)": lambda k: k.maxpool2x2_forward(pool_in),
        "maxpool bwd": lambda k: k.maxpool2x2_backward(out, arg, 8, 8),
        "upsample bwd": lambda k: k.upsample2x2_backward(pool_in, 4, 4),
        "window gram (T=5000, d=30)": lambda k: k.window_gram(series, starts, 30),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy (ms)':>12}{'cython (ms)':>13}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:<30}{t_py:>12.2f}{'n/a':>13}{'':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<30}{t_py:>12.2f}{t_cy:>13.2f}{t_py / t_cy:>9.1f}x")

    print("\nfull model, batch 16, h=5, 8x8 images: forward + backward")
    for pure in ("1", "0"):
        env = dict(os.environ, ACLAE_DT_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", MODEL_STEP.format(repeat=args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        print(f"  {backend:<8}{float(secs) * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
