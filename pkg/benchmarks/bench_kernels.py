"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--batch 240] [--repeat 20] [--e2e]

Shapes follow the default toy model: a 3x12x12 input, an 8-filter 3x3
convolution and a 64-unit dense layer. ``--e2e`` also times one full
PGD-Imp run per backend in a fresh interpreter, switching with
PGDIMP_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pgdimp.kernels import NUMBA_KERNELS, NUMPY_KERNELS

E2E = """
import time
from pgdimp.attack import AttackConfig, attack_batch
from pgdimp.data import ToyDatasetSpec, generate_toy_dataset
from pgdimp.engine import init_model
from pgdimp.harness import DEFAULT_ARCH
from pgdimp.kernels import BACKEND
_, test = generate_toy_dataset(ToyDatasetSpec(seed=0))
model = init_model(DEFAULT_ARCH, test.images.shape[1:], 4, seed=0)
cfg = AttackConfig(epsilon=8, steps=100, variant="pgd")
attack_batch(model, test, AttackConfig(steps=1))
t = time.perf_counter()
attack_batch(model, test, cfg)
print(BACKEND, time.perf_counter() - t)
"""


def cases(n, rng):
    x = rng.uniform(0, 1, (n, 3, 12, 12))
    w = rng.normal(size=(8, 3, 3, 3))
    g = rng.normal(size=(n, 8, 10, 10))
    h = rng.normal(size=(n, 800))
    dw = rng.normal(size=(64, 800))
    gd = rng.normal(size=(n, 64))
    return {
        "conv2d_forward": (x, w, np.zeros(8)),
        "conv2d_backward_input": (g, w),
        "conv2d_backward_weight": (x, g, 3, 3),
        "dense_forward": (h, dw, np.zeros(64)),
        "dense_backward_input": (gd, dw),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=240)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--e2e", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  max |diff|")
    for name, inputs in cases(args.batch, rng).items():
        a, b = NUMPY_KERNELS[name], NUMBA_KERNELS[name]
        diff = float(np.max(np.abs(a(*inputs) - b(*inputs))))  # also warms the jit
        ta = min(timeit.repeat(lambda: a(*inputs), number=1, repeat=args.repeat)) * 1e3
        tb = min(timeit.repeat(lambda: b(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<24}{ta:>10.3f}{tb:>10.3f}{ta / tb:>8.1f}x  {diff:.1e}")

    if args.e2e:
        for disable in ("1", "0"):
            env = dict(os.environ, PGDIMP_DISABLE_NUMBA=disable)
            out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
            backend, secs = out.stdout.split()
            print(f"plain PGD, T=100, 240 toy test images, {backend}: {float(secs):.2f} s")


if __name__ == "__main__":
    main()
