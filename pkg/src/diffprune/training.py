"""Noise-prediction training with Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, timestep_loss
from .models import Denoiser
from .tensor import Tape

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = np.array(state["m"][k], dtype=self.params[k].dtype)
            self.v[k] = np.array(state["v"][k], dtype=self.params[k].dtype)


@dataclass
class TrainState:
    model: Denoiser
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0


def new_state(model: Denoiser, lr: float, seed: int) -> TrainState:
    return TrainState(model, Adam(model.params, lr), np.random.default_rng(seed), 0)


def train_steps(state: TrainState, data: np.ndarray, sched: NoiseSchedule, steps: int, batch_size: int,
                on_step: Callable[[int, float], None] | None = None,
                checkpoint_every: int = 0, on_checkpoint: Callable[[TrainState], None] | None = None) -> list[float]:
    """Run ``steps`` optimizer updates with t ~ U{1..T} per sample."""
    data = np.asarray(data, dtype=state.model.dtype)
    model, opt, rng = state.model, state.optimizer, state.rng
    losses = []
    for _ in range(steps):
        idx = rng.integers(data.shape[0], size=batch_size)
        t = rng.integers(1, sched.T + 1, size=batch_size)
        eps = rng.standard_normal((batch_size,) + data.shape[1:]).astype(data.dtype)
        with Tape() as tape:
            loss = timestep_loss(model, data[idx], t, eps, sched)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {state.step + 1}")
        tape.backward(loss)
        opt.step()
        model.zero_grad()
        state.step += 1
        losses.append(value)
        if on_step is not None:
            on_step(state.step, value)
        if checkpoint_every and on_checkpoint is not None and state.step % checkpoint_every == 0:
            on_checkpoint(state)
    return losses


def validation_loss(model: Denoiser, data: np.ndarray, sched: NoiseSchedule, n: int = 2048, seed: int = 12345,
                    batch_size: int = 512) -> float:
    """Fixed-draw estimate of the full diffusion loss (t uniform)."""
    rng = np.random.default_rng(seed)
    data = np.asarray(data, dtype=model.dtype)
    idx = rng.integers(data.shape[0], size=n)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal((n,) + data.shape[1:]).astype(data.dtype)
    total = 0.0
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        total += timestep_loss(model, data[idx[sl]], t[sl], eps[sl], sched).item() * len(idx[sl])
    return total / n
