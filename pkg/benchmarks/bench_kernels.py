"""Benchmark the compiled kernels against the numpy fallback.

Measures the hot gather/scatter kernels in isolation on LeNet-shaped
workloads, then a full forward+backward step through the 28x28 classifier
under each backend.  Run from the repository root:

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from advforge.engine import kernels, kernels_py
from advforge.engine import Tensor, ops, record
from advforge.models import ModelConfig, build_classifier

try:
    from advforge.engine import _corekernels
except ImportError:
    _corekernels = None


def bench(fn, repeats: int) -> float:
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def kernel_table(repeats: int) -> None:
    rng = np.random.default_rng(0)
    x1 = rng.random((64, 1, 28, 28), dtype=np.float32)
    x2 = rng.random((64, 6, 14, 14), dtype=np.float32)
    pool_in = rng.random((64, 6, 28, 28), dtype=np.float32)
    g1 = rng.standard_normal((64, 25, 784)).astype(np.float32)
    g2 = rng.standard_normal((64, 150, 100)).astype(np.float32)
    _, idx = kernels_py.maxpool2d_forward(pool_in, 2)
    gp = rng.standard_normal((64, 6, 14, 14)).astype(np.float32)

    cases = [
        ("im2col 1x28x28 k5 p2", lambda m: m.im2col(x1, 5, 5, 1, 2)),
        ("im2col 6x14x14 k5", lambda m: m.im2col(x2, 5, 5, 1, 0)),
        ("col2im 1x28x28 k5 p2", lambda m: m.col2im(g1, (64, 1, 28, 28), 5, 5, 1, 2)),
        ("col2im 6x14x14 k5", lambda m: m.col2im(g2, (64, 6, 14, 14), 5, 5, 1, 0)),
        ("maxpool2 fwd 6x28x28", lambda m: m.maxpool2d_forward(pool_in, 2)),
        ("maxpool2 bwd 6x28x28", lambda m: m.maxpool2d_backward(gp, idx, 2, pool_in.shape)),
    ]
    print(f"{'kernel':26s} {'numpy (ms)':>12s} {'cython (ms)':>12s} {'speedup':>9s}")
    for name, fn in cases:
        t_py = bench(lambda: fn(kernels_py), repeats)
        if _corekernels is not None:
            t_cy = bench(lambda: fn(_corekernels), repeats)
            print(f"{name:26s} {t_py:12.3f} {t_cy:12.3f} {t_py / t_cy:8.1f}x")
        else:
            print(f"{name:26s} {t_py:12.3f} {'n/a':>12s} {'':>9s}")


def model_step(repeats: int) -> None:
    model = build_classifier(ModelConfig(arch="lenet", in_shape=(1, 28, 28), classes=10, seed=0))
    rng = np.random.default_rng(1)
    x = rng.random((64, 1, 28, 28), dtype=np.float32)
    labels = rng.integers(0, 10, 64)

    def step():
        with record() as tape:
            tape.backward(ops.softmax_cross_entropy(model.logits(Tensor(x)), labels))
        for p in model.parameters():
            p.grad = None

    print(f"\nforward+backward, batch 64, active backend = {kernels.BACKEND}")
    print(f"  {bench(step, repeats):.2f} ms per step")
    print("  (set ADVFORGE_BACKEND=numpy and rerun to compare end to end)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50, help="timing repeats (default: 50)")
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    kernel_table(args.repeats)
    model_step(args.repeats)


if __name__ == "__main__":
    main()
