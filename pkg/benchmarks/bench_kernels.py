"""Time the compiled im2col/col2im kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one UNet training step under each backend, since that is where the
kernels matter in practice.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from diffprune import _kernels_py, kernels, ops
from diffprune.models import build_model, unet_arch
from diffprune.tensor import Tape, Tensor

SHAPES = [  # (N, C, H, W, k, stride, pad)
    (64, 1, 16, 16, 3, 1, 1),
    (64, 32, 16, 16, 3, 1, 1),
    (64, 64, 8, 8, 3, 1, 1),
    (64, 96, 16, 16, 3, 1, 1),
    (16, 32, 15, 15, 3, 2, 1),
]


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def bench_kernels(repeat: int) -> None:
    print(f"{'shape':<28}{'op':<8}{'compiled ms':>13}{'numpy ms':>11}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for n, c, h, w, k, s, p in SHAPES:
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        cols = _kernels_py.im2col(x, k, k, s, p)
        label = f"{n}x{c}x{h}x{w} k{k} s{s}"
        for op, fast, slow in (
            ("im2col", lambda: kernels.im2col(x, k, k, s, p), lambda: _kernels_py.im2col(x, k, k, s, p)),
            ("col2im", lambda: kernels.col2im(cols, x.shape, k, k, s, p),
             lambda: _kernels_py.col2im(cols, x.shape, k, k, s, p)),
        ):
            tf, ts = best(fast, repeat), best(slow, repeat)
            print(f"{label:<28}{op:<8}{tf:>13.3f}{ts:>11.3f}{ts / tf:>8.2f}x")


def bench_training_step(repeat: int) -> None:
    model = build_model(unet_arch())
    rng = np.random.default_rng(1)
    x = rng.standard_normal((32, 1, 16, 16)).astype(np.float32)
    t = rng.integers(1, 1000, size=32)
    target = Tensor(rng.standard_normal(x.shape).astype(np.float32))

    def step():
        with Tape() as tape:
            loss = ops.mse_loss(model(x, t), target)
        tape.backward(loss)
        model.zero_grad()

    timings = {}
    original = (kernels.im2col, kernels.col2im)
    for name, impl in (("compiled", original), ("numpy", (_kernels_py.im2col, _kernels_py.col2im))):
        kernels.im2col, kernels.col2im = impl
        timings[name] = best(step, max(3, repeat // 4))
    kernels.im2col, kernels.col2im = original
    print(f"\nUNet fwd+bwd, batch 32: compiled {timings['compiled']:.1f} ms, numpy {timings['numpy']:.1f} ms")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}\n")
    if kernels.BACKEND != "cython":
        print("compiled extension not available; both columns use the numpy fallback\n")
    bench_kernels(args.repeat)
    bench_training_step(args.repeat)


if __name__ == "__main__":
    main()
