"""Noise schedules, the noise-prediction loss, and DDPM/DDIM samplers.

Timesteps are 1-based throughout: ``t`` runs over ``1..T`` and schedule
arrays are indexed with ``t - 1``. A denoiser is any callable
``model(x, t) -> Tensor`` where ``t`` is an integer array with one entry per
sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor

Denoiser = Callable[[np.ndarray, np.ndarray], Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if beta.size < 1:
            raise ValueError("schedule needs at least one step")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "sigma", np.sqrt(beta))

    @property
    def T(self) -> int:
        return self.beta.size

    def check(self, t) -> None:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"timestep out of range 1..{self.T}: {t.min()}..{t.max()}")


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def _per_sample(coef: np.ndarray, ndim: int) -> np.ndarray:
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim)) if coef.ndim else coef


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``; ``t`` scalar or per-sample."""
    is_tensor = isinstance(x0, Tensor)
    x0 = x0.data if is_tensor else np.asarray(x0)
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"q_sample shape mismatch: {x0.shape} vs {eps.shape}")
    t = np.asarray(t)
    sched.check(t)
    ab = _per_sample(sched.alpha_bar[t - 1], x0.ndim)
    out = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype)
    return Tensor(out) if is_tensor else out


def _tvec(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    return np.full(n, int(t)) if t.ndim == 0 else t


def timestep_loss(model: Denoiser, x0, t, eps, sched: NoiseSchedule) -> Tensor:
    """Mean squared noise-prediction error at timestep(s) ``t``."""
    x0 = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    xt = q_sample(x0, t, eps, sched)
    pred = model(xt, _tvec(t, x0.shape[0]))
    if pred.shape != eps.shape:
        raise ValueError(f"model output {pred.shape} does not match noise {eps.shape}")
    return ops.mse_loss(pred, Tensor(eps.astype(pred.dtype)))


def _predict(model: Denoiser, x: np.ndarray, t: int) -> np.ndarray:
    return model(x, np.full(x.shape[0], t)).data.astype(x.dtype, copy=False)


def ddpm_step(x_t: np.ndarray, t: int, model: Denoiser, z, sched: NoiseSchedule, eps_offset=None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; ``z`` must be zero (or None) at t=1."""
    sched.check(t)
    x_t = np.asarray(x_t)
    eps = _predict(model, x_t, t)
    if eps_offset is not None:
        eps = eps + eps_offset
    a, b, ab = sched.alpha[t - 1], sched.beta[t - 1], sched.alpha_bar[t - 1]
    out = (x_t - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)
    if z is not None:
        z = np.asarray(z)
        if t == 1 and np.any(z != 0):
            raise ValueError("z must be zero at t=1")
        out = out + sched.sigma[t - 1] * z
    return out.astype(x_t.dtype, copy=False)


@dataclass
class SampleTrace:
    sampler: str
    timesteps: list
    x_T: np.ndarray
    x0: np.ndarray
    n_evals: int
    seed: int | None = None
    states: list | None = None


def initial_noise(seed: int, shape: tuple, dtype=np.float32) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def ddpm_sample(
    model: Denoiser,
    x_T: np.ndarray,
    sched: NoiseSchedule,
    noise_seed: int | None = None,
    keep_states: bool = False,
    perturb: tuple | None = None,
) -> SampleTrace:
    """Ancestral sampling over all T steps.

    ``noise_seed`` seeds the z sequence (drawn for t = T..2 in that order);
    ``None`` runs the deterministic z = 0 path. ``perturb=(t, delta)`` adds
    ``delta`` to the predicted noise at step ``t`` only.
    """
    rng = None if noise_seed is None else np.random.default_rng(noise_seed)
    x = np.array(x_T, copy=True)
    states = [x.copy()] if keep_states else None
    for t in range(sched.T, 0, -1):
        z = rng.standard_normal(x.shape).astype(x.dtype) if (rng is not None and t > 1) else None
        offset = perturb[1] if (perturb is not None and perturb[0] == t) else None
        x = ddpm_step(x, t, model, z, sched, eps_offset=offset)
        if keep_states:
            states.append(x.copy())
    return SampleTrace("ddpm", list(range(sched.T, 0, -1)), np.asarray(x_T), x, sched.T, noise_seed, states)


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Evenly strided subsequence of 1..T, descending, starting at T."""
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_steps must be in 1..{T}, got {num_steps}")
    ts = np.floor(np.linspace(1, T, num_steps) + 0.5).astype(int)
    return [int(t) for t in ts[::-1]]


def ddim_sample(model: Denoiser, x_T: np.ndarray, sched: NoiseSchedule, num_steps: int = 100, keep_states: bool = False) -> SampleTrace:
    """Deterministic (eta = 0) DDIM ending at t = 0 with ``num_steps`` model calls."""
    ts = ddim_timesteps(sched.T, num_steps)
    x = np.array(x_T, copy=True)
    states = [x.copy()] if keep_states else None
    for i, t in enumerate(ts):
        eps = _predict(model, x, t)
        ab = sched.alpha_bar[t - 1]
        x0_hat = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        ab_next = sched.alpha_bar[ts[i + 1] - 1] if i + 1 < len(ts) else 1.0
        x = (np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps).astype(x.dtype, copy=False)
        if keep_states:
            states.append(x.copy())
    return SampleTrace("ddim", ts, np.asarray(x_T), x, len(ts), None, states)


@dataclass
class LossProfile:
    losses: np.ndarray  # index t-1
    counts: np.ndarray

    @property
    def T(self) -> int:
        return self.losses.size

    @property
    def l_max(self) -> float:
        return float(self.losses.max())

    def relative(self) -> np.ndarray:
        if not self.l_max > 0:
            raise ValueError("loss profile has L_max = 0; relative loss undefined")
        return self.losses / self.l_max

    def to_csv(self, path) -> None:
        rel = self.losses / self.l_max if self.l_max > 0 else np.zeros_like(self.losses)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "loss", "relative", "count"])
            for i, (l, r, c) in enumerate(zip(self.losses, rel, self.counts)):
                w.writerow([i + 1, repr(float(l)), repr(float(r)), int(c)])


def estimate_loss_profile(
    model: Denoiser,
    data: np.ndarray,
    sched: NoiseSchedule,
    n_per_step: int = 8,
    seed: int = 0,
    batch_size: int = 512,
) -> LossProfile:
    """Per-timestep mean loss from ``n_per_step`` fixed-seed (x0, eps) draws."""
    data = np.asarray(data)
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    if n_per_step < 1:
        raise ValueError("n_per_step must be >= 1")
    rng = np.random.default_rng(seed)
    T = sched.T
    idx = np.empty((T, n_per_step), dtype=np.int64)
    eps = np.empty((T, n_per_step) + data.shape[1:], dtype=data.dtype)
    for t in range(1, T + 1):
        idx[t - 1] = rng.integers(data.shape[0], size=n_per_step)
        eps[t - 1] = rng.standard_normal((n_per_step,) + data.shape[1:])
    ts = np.repeat(np.arange(1, T + 1), n_per_step)
    idx = idx.reshape(-1)
    eps = eps.reshape((-1,) + data.shape[1:])
    per_sample = np.empty(ts.size, dtype=np.float64)
    for lo in range(0, ts.size, batch_size):
        sl = slice(lo, lo + batch_size)
        x0 = data[idx[sl]]
        xt = q_sample(x0, ts[sl], eps[sl], sched)
        pred = model(xt, ts[sl]).data.astype(np.float64)
        err = (pred - eps[sl]).reshape(pred.shape[0], -1)
        per_sample[sl] = (err * err).mean(axis=1)
    losses = per_sample.reshape(T, n_per_step).mean(axis=1)
    return LossProfile(losses, np.full(T, n_per_step))


def amplification_factor(t: int, sched: NoiseSchedule) -> float:
    """Magnification of a noise-prediction error made at step t in the final sample."""
    sched.check(t)
    ab = sched.alpha_bar[t - 1]
    return float(sched.beta[t - 1] / np.sqrt(ab * (1.0 - ab)))


def inject_perturbation(
    model: Denoiser,
    x_T: np.ndarray,
    sched: NoiseSchedule,
    t_inject: int,
    delta,
    noise_seed: int | None = None,
    keep_states: bool = False,
) -> tuple[SampleTrace, SampleTrace]:
    """Clean and perturbed DDPM traces sharing x_T and the z sequence."""
    sched.check(t_inject)
    clean = ddpm_sample(model, x_T, sched, noise_seed, keep_states)
    perturbed = ddpm_sample(model, x_T, sched, noise_seed, keep_states, perturb=(t_inject, delta))
    return clean, perturbed
