"""Group importance criteria and one-shot group selection.

Data-driven criteria score a group as ``sum_k |theta_k * G_k|`` over all of
its member elements, where ``G`` is the gradient of the noise-prediction
loss. The diff-pruning criterion sums gradients over the timesteps whose
relative loss exceeds a threshold *before* multiplying by the weights.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .diffusion import LossProfile, NoiseSchedule, timestep_loss
from .models import Denoiser
from .structure import ParamGroup, counts_after
from .tensor import Tape

CRITERIA = ("random", "magnitude", "taylor", "diff_pruning")
THRESHOLD_GRID = (0.0, 0.01, 0.02, 0.05, 0.1)


class PruningError(ValueError):
    """Raised for empty timestep masks and unreachable pruning targets."""


@dataclass
class PruneConfig:
    criterion: str = "diff_pruning"
    target_kind: str = "macs_ratio"
    target: float = 0.44
    threshold: float = 0.05
    grad_batch: int | None = None  # default 256 (mlp) / 64 (unet)
    profile_samples: int = 8
    taylor_timestep: int | None = None  # default: step with the largest loss
    overshoot_tol: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.target_kind not in ("param_ratio", "macs_ratio"):
            raise ValueError(f"target_kind must be param_ratio or macs_ratio, got {self.target_kind!r}")
        if not 0 <= self.target < 1:
            raise ValueError("target ratio must lie in [0, 1)")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    def batch_for(self, model: Denoiser) -> int:
        if self.grad_batch is not None:
            return self.grad_batch
        return 256 if model.family == "mlp" else 64


@dataclass
class ThresholdMask:
    kept: np.ndarray  # bool, index t-1
    threshold: float

    @property
    def kept_count(self) -> int:
        return int(self.kept.sum())

    @property
    def steps(self) -> list[int]:
        return [int(i) + 1 for i in np.flatnonzero(self.kept)]


@dataclass
class ImportanceScore:
    scores: np.ndarray
    criterion: str
    seed: int | None = None
    mask: ThresholdMask | None = None
    extra: dict = field(default_factory=dict)

    def ranking(self) -> np.ndarray:
        """Group indices from least to most important; ties go to the lower id."""
        return np.lexsort((np.arange(self.scores.size), self.scores))

    def to_csv(self, path, groups: list[ParamGroup], removed=()) -> None:
        removed = set(removed)
        rank = np.empty(self.scores.size, dtype=int)
        rank[self.ranking()] = np.arange(self.scores.size)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group_id", "layer", "score", "rank", "removed"])
            for g in groups:
                w.writerow([g.id, g.family, repr(float(self.scores[g.id])), int(rank[g.id]), g.id in removed])


def taylor_group_score(theta, grad, form: str = "sum_abs") -> float:
    """Score of one row vector: ``sum|theta*g|`` or the standard ``|sum theta*g|``."""
    prod = np.asarray(theta, dtype=np.float64) * np.asarray(grad, dtype=np.float64)
    if form == "sum_abs":
        return float(np.abs(prod).sum())
    if form == "abs_sum":
        return float(abs(prod.sum()))
    raise ValueError(f"unknown form {form!r}")


def aggregate(elementwise: dict[str, np.ndarray], groups: list[ParamGroup]) -> np.ndarray:
    """Sum a per-element quantity over each group's member slices."""
    reduced: dict[tuple, np.ndarray] = {}
    scores = np.zeros(len(groups), dtype=np.float64)
    for g in groups:
        total = 0.0
        for m in g.members:
            key = (m.param, m.axis)
            if key not in reduced:
                arr = np.asarray(elementwise[m.param], dtype=np.float64)
                other = tuple(a for a in range(arr.ndim) if a != m.axis)
                reduced[key] = arr.sum(axis=other) if other else arr
            total += reduced[key][list(m.indices)].sum()
        scores[g.id] = total
    return scores


def score_random(groups: list[ParamGroup], seed: int) -> ImportanceScore:
    rng = np.random.default_rng(seed)
    return ImportanceScore(rng.uniform(0.0, 1.0, size=len(groups)), "random", seed)


def score_magnitude(model: Denoiser, groups: list[ParamGroup]) -> ImportanceScore:
    elem = {k: np.abs(v.data) for k, v in model.params.items()}
    return ImportanceScore(aggregate(elem, groups), "magnitude")


def draw_batch(data: np.ndarray, t: int, seed: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
    """The (x0, eps) batch used for gradient estimation at timestep ``t``."""
    rng = np.random.default_rng([seed, t])
    idx = rng.integers(data.shape[0], size=batch)
    eps = rng.standard_normal((batch,) + data.shape[1:]).astype(data.dtype)
    return data[idx], eps


def accumulate_gradients(model: Denoiser, data: np.ndarray, steps, sched: NoiseSchedule, seed: int,
                         batch: int) -> dict[str, np.ndarray]:
    """Sum of per-timestep loss gradients, one backward pass per step in ascending order."""
    data = np.asarray(data, dtype=model.dtype)
    model.zero_grad()
    for t in sorted(steps):
        x0, eps = draw_batch(data, t, seed, batch)
        with Tape() as tape:
            loss = timestep_loss(model, x0, t, eps, sched)
        tape.backward(loss)
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in model.params.items()
    }
    model.zero_grad()
    return grads


def scores_from_gradients(model: Denoiser, grads: dict, groups: list[ParamGroup]) -> np.ndarray:
    elem = {k: np.abs(v.data.astype(np.float64) * grads[k].astype(np.float64)) for k, v in model.params.items()}
    return aggregate(elem, groups)


def score_taylor(model: Denoiser, groups: list[ParamGroup], data: np.ndarray, t_single: int,
                 sched: NoiseSchedule, seed: int = 0, batch: int = 64) -> ImportanceScore:
    sched.check(t_single)
    grads = accumulate_gradients(model, data, [t_single], sched, seed, batch)
    return ImportanceScore(scores_from_gradients(model, grads, groups), "taylor", seed,
                           extra={"timestep": t_single})


def threshold_timesteps(profile: LossProfile, threshold: float) -> ThresholdMask:
    """Keep the steps whose relative loss L_t / L_max exceeds ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    rel = profile.relative()
    return ThresholdMask(rel > threshold, threshold)


def score_diff_pruning(model: Denoiser, groups: list[ParamGroup], data: np.ndarray, sched: NoiseSchedule,
                       profile: LossProfile, config: PruneConfig) -> ImportanceScore:
    mask = threshold_timesteps(profile, config.threshold)
    if mask.kept_count == 0:
        raise PruningError(f"threshold {config.threshold} keeps no timesteps")
    grads = accumulate_gradients(model, data, mask.steps, sched, config.seed, config.batch_for(model))
    return ImportanceScore(scores_from_gradients(model, grads, groups), "diff_pruning", config.seed, mask)


def select_groups(scores: ImportanceScore | np.ndarray, model: Denoiser, groups: list[ParamGroup],
                  target_kind: str, target: float, overshoot_tol: float | None = 0.01) -> list[int]:
    """Remove lowest-ranked groups until the param/MACs reduction reaches ``target``.

    Groups whose family is already at its survivor minimum are skipped. Once a
    removal would reach the target, it is taken only if the overshoot is within
    ``overshoot_tol``; otherwise scanning continues down the ranking, and the
    candidate with the smallest overshoot is used if none fits.
    """
    if target_kind not in ("param_ratio", "macs_ratio"):
        raise ValueError(f"unknown target kind {target_kind!r}")
    if target <= 0:
        return []
    if isinstance(scores, ImportanceScore):
        order = scores.ranking()
    else:
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((np.arange(scores.size), scores))
    if len(order) != len(groups):
        raise ValueError("scores must cover every group")
    which = 0 if target_kind == "param_ratio" else 1
    spec = model.prunable_spec()
    base = (model.param_count(), model.macs_per_sample())[which]
    remaining = {name: fam.width for name, fam in spec.families.items()}
    by_id = {g.id: g for g in groups}
    chosen: list[int] = []
    fallback = None
    for gid in order:
        g = by_id[int(gid)]
        fam = spec.families[g.family]
        if remaining[g.family] - len(g.channels) < fam.min_keep:
            continue
        trial = chosen + [g.id]
        reduction = 1.0 - counts_after(model, groups, trial)[which] / base
        if reduction < target:
            chosen.append(g.id)
            remaining[g.family] -= len(g.channels)
            continue
        over = reduction - target
        if overshoot_tol is None or over <= overshoot_tol:
            return sorted(trial)
        if fallback is None or over < fallback[0]:
            fallback = (over, g.id)
    if fallback is not None:
        return sorted(chosen + [fallback[1]])
    raise PruningError(f"{target_kind} target {target} unreachable under survivor constraints")


def compute_scores(model: Denoiser, groups: list[ParamGroup], data: np.ndarray, sched: NoiseSchedule,
                   config: PruneConfig, profile: LossProfile | None = None) -> ImportanceScore:
    """Dispatch on ``config.criterion``; data-driven criteria need ``profile``."""
    if config.criterion == "random":
        return score_random(groups, config.seed)
    if config.criterion == "magnitude":
        return score_magnitude(model, groups)
    if profile is None:
        raise ValueError(f"{config.criterion} needs a loss profile")
    if config.criterion == "taylor":
        t = config.taylor_timestep or int(np.argmax(profile.losses)) + 1
        return score_taylor(model, groups, data, t, sched, config.seed, config.batch_for(model))
    return score_diff_pruning(model, groups, data, sched, profile, config)


def family_summary(groups: list[ParamGroup], removed) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for g in groups:
        if g.id in set(removed):
            out[g.family] += len(g.channels)
    return dict(out)
