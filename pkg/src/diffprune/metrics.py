"""Teacher/student consistency and sample-quality measures."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffusion import NoiseSchedule, ddim_sample, ddpm_sample, initial_noise


@dataclass(frozen=True)
class SsimConfig:
    window: int = 7
    data_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("SSIM window must be odd and >= 3")
        if self.data_range <= 0:
            raise ValueError("SSIM data range must be positive")

    @property
    def c1(self) -> float:
        return (0.01 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.data_range) ** 2


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    while x.ndim > 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 2:
        raise ValueError(f"SSIM works on single-channel 2-D images, got shape {x.shape}")
    return x


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM over all valid positions of a uniform window."""
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"SSIM shape mismatch: {a.shape} vs {b.shape}")
    k = cfg.window
    if k > a.shape[0] or k > a.shape[1]:
        raise ValueError(f"window {k} larger than image {a.shape}")
    wa = sliding_window_view(a, (k, k))
    wb = sliding_window_view(b, (k, k))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a**2
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b**2
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + cfg.c1) * (2 * cov + cfg.c2)
    den = (mu_a**2 + mu_b**2 + cfg.c1) * (var_a + var_b + cfg.c2)
    return float(np.mean(num / den))


@dataclass
class ConsistencyReport:
    seeds: list
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.seeds)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))

    def rows(self) -> list[tuple]:
        return [(int(s), float(v)) for s, v in zip(self.seeds, self.values)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "similarity"])
            for s, v in self.rows():
                w.writerow([s, repr(v)])


def to_unit_range(x: np.ndarray) -> np.ndarray:
    """Map model-space images in [-1, 1] to [0, 1]."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def generate(model, sched: NoiseSchedule, seeds, sample_shape: tuple, sampler: str = "ddim",
             steps: int | None = None, per_seed: int = 1) -> np.ndarray:
    """Samples for each seed, stacked as ``[len(seeds), per_seed, *sample_shape]``.

    Seed ``s`` fixes both x_T and (for DDPM) the z sequence, so two models
    given the same seeds start from identical noise.
    """
    dtype = getattr(model, "dtype", np.float32)
    noises = [initial_noise(int(s), (per_seed,) + tuple(sample_shape), dtype) for s in seeds]
    if sampler == "ddim":
        # deterministic sampler: all seeds share one batched trajectory
        n = steps if steps is not None else min(100, sched.T)
        x0 = ddim_sample(model, np.concatenate(noises), sched, n).x0
        return x0.reshape((len(noises), per_seed) + tuple(sample_shape))
    if sampler == "ddpm":
        return np.stack([
            ddpm_sample(model, x_T, sched, noise_seed=int(s) + 1_000_003).x0 for s, x_T in zip(seeds, noises)
        ])
    raise ValueError(f"unknown sampler {sampler!r}")


def consistency_eval(model_a, model_b, sched: NoiseSchedule, seeds, sampler: str = "ddim",
                     steps: int | None = None, per_seed: int | None = None) -> ConsistencyReport:
    """Same-seed similarity of two models' samples.

    Images are compared with SSIM after mapping to [0, 1] (one image per seed
    by default, averaged when ``per_seed > 1``); point sets use ``1 / (1 + MSE)``.
    """
    shape_a, shape_b = tuple(model_a.sample_shape), tuple(model_b.sample_shape)
    if shape_a != shape_b:
        raise ValueError(f"models disagree on sample shape: {shape_a} vs {shape_b}")
    is_image = len(shape_a) == 3
    if per_seed is None:
        per_seed = 1 if is_image else 256
    seeds = [int(s) for s in seeds]
    xa = generate(model_a, sched, seeds, shape_a, sampler, steps, per_seed)
    xb = generate(model_b, sched, seeds, shape_b, sampler, steps, per_seed)
    values = []
    for i in range(len(seeds)):
        if is_image:
            ua, ub = to_unit_range(xa[i]), to_unit_range(xb[i])
            values.append(np.mean([ssim(ua[j], ub[j]) for j in range(per_seed)]))
        else:
            diff = xa[i].astype(np.float64) - xb[i].astype(np.float64)
            values.append(1.0 / (1.0 + float(np.mean(np.sum(diff * diff, axis=-1)))))
    return ConsistencyReport(seeds, np.asarray(values))


def mmd_2d(a, b, bandwidths=(0.05, 0.1, 0.2, 0.5, 1.0)) -> float:
    """Unbiased MMD^2 with a sum of Gaussian kernels, clamped at zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("mmd_2d needs two [n, d] point sets")
    if min(len(a), len(b)) < 100:
        raise ValueError("mmd_2d needs at least 100 samples per set")

    def kernel(x, y):
        d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
        d2 = np.maximum(d2, 0.0)
        return sum(np.exp(-d2 / (2.0 * h * h)) for h in bandwidths)

    m, n = len(a), len(b)
    kaa, kbb, kab = kernel(a, a), kernel(b, b), kernel(a, b)
    term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(max(term_a + term_b - 2.0 * kab.mean(), 0.0))
