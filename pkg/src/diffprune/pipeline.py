"""End-to-end experiment stages: data, train, prune, finetune, evaluate, sweep.

Every stage derives its randomness from the config seed, so rerunning a stage
with the same config and inputs reproduces its report numbers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .config import ExperimentConfig, from_dict
from .data import generate_dataset, read_dataset, to_model_space, write_dataset
from .diffusion import LossProfile, estimate_loss_profile, initial_noise
from .importance import compute_scores, family_summary, select_groups
from .metrics import consistency_eval, generate, mmd_2d, to_unit_range
from .models import build_model
from .structure import groups_for, slice_model
from .training import Adam, TrainState, train_steps

log = logging.getLogger(__name__)


@dataclass
class RunReport:
    stage: str
    params_before: int | None = None
    params_after: int | None = None
    macs_before: int | None = None
    macs_after: int | None = None
    kept_steps: int | None = None
    finetune_steps: int | None = None
    removed_groups: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict, repr=False)  # in-memory artifacts, not serialized

    def numbers(self) -> dict:
        """Everything reproducible (i.e. all but wall time and extras)."""
        return {
            "stage": self.stage, "params_before": self.params_before, "params_after": self.params_after,
            "macs_before": self.macs_before, "macs_after": self.macs_after, "kept_steps": self.kept_steps,
            "finetune_steps": self.finetune_steps, "removed_groups": list(self.removed_groups),
            "metrics": dict(self.metrics),
        }

    def to_dict(self) -> dict:
        d = self.numbers()
        d["wall_time"] = dict(self.wall_time)
        d["config"] = self.config
        return d

    def rows(self) -> list[tuple[str, object]]:
        out = [(k, v) for k, v in self.numbers().items() if k not in ("metrics", "removed_groups")]
        out.append(("removed_groups", len(self.removed_groups)))
        out += [(f"metric.{k}", v) for k, v in sorted(self.metrics.items())]
        out += [(f"time.{k}", round(v, 3)) for k, v in sorted(self.wall_time.items())]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in self.rows():
                w.writerow([k, "" if v is None else v])

    def to_text(self) -> str:
        lines = [f"== {self.stage} =="]
        for k, v in self.rows():
            if v is None:
                continue
            lines.append(f"{k:<24} {v:.6g}" if isinstance(v, float) else f"{k:<24} {v}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir, name: str | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = name or self.stage
        self.to_csv(out / f"{name}_report.csv")
        (out / f"{name}_report.txt").write_text(self.to_text())
        (out / f"{name}_report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


class _Timer:
    def __init__(self, report: RunReport, key: str):
        self.report, self.key = report, key

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.report.wall_time[self.key] = self.report.wall_time.get(self.key, 0.0) + time.perf_counter() - self.start


def _sub_seed(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


# -- data -----------------------------------------------------------------
def gen_data(cfg: ExperimentConfig) -> Path:
    if cfg.dataset.kind == "external":
        return Path(cfg.dataset.path)
    path = cfg.data_path
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(path, generate_dataset(cfg.dataset.kind, cfg.dataset.n, cfg.seed))
    return path


def load_data(cfg: ExperimentConfig) -> np.ndarray:
    """Training data in model space ([-1, 1] for images)."""
    path = cfg.data_path
    if not path.exists():
        raise FileNotFoundError(f"dataset not found at {path}; run gen-data first")
    return to_model_space(read_dataset(path))


# -- training ---------------------------------------------------------------
def _write_loss_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in rows:
            w.writerow([step, repr(loss)])


def fit(model, data, sched, steps: int, lr: float, batch_size: int, rng: np.random.Generator,
        state_from: Checkpoint | None = None, checkpoint_every: int = 0, checkpoint_path=None,
        meta: dict | None = None) -> tuple[Checkpoint, list]:
    """Shared training loop for pretraining, finetuning and scratch baselines."""
    opt = Adam(model.params, lr)
    step = 0
    if state_from is not None:
        if state_from.optimizer is not None:
            opt.load_state(state_from.optimizer)
        if state_from.rng_state is not None:
            rng.bit_generator.state = state_from.rng_state
        step = state_from.step
    state = TrainState(model, opt, rng, step)
    history = []

    def snapshot(s: TrainState) -> Checkpoint:
        return Checkpoint(s.model, sched, s.step, s.rng.bit_generator.state, s.optimizer.state(), dict(meta or {}))

    def on_checkpoint(s: TrainState):
        if checkpoint_path is not None:
            ckpt_io.save(checkpoint_path, snapshot(s))

    train_steps(state, data, sched, steps, batch_size, on_step=lambda i, l: history.append((i, l)),
                checkpoint_every=checkpoint_every, on_checkpoint=on_checkpoint)
    return snapshot(state), history


def train(cfg: ExperimentConfig, resume: Checkpoint | None = None, save_to=None) -> tuple[Checkpoint, list]:
    """Pretrain (or resume) up to ``cfg.optim.steps`` total steps."""
    data = load_data(cfg)
    sched = cfg.schedule.build()
    if resume is not None:
        model, start = resume.model, resume.step
    else:
        model, start = build_model(cfg.model.arch(), seed=cfg.seed), 0
    remaining = cfg.optim.steps - start
    if remaining < 0:
        raise ValueError(f"checkpoint is at step {start}, beyond optim.steps={cfg.optim.steps}")
    return fit(model, data, sched, remaining, cfg.optim.lr, cfg.optim.batch_size, _sub_seed(cfg.seed, 1),
               state_from=resume, checkpoint_every=cfg.optim.checkpoint_every, checkpoint_path=save_to,
               meta={"stage": "train", "seed": cfg.seed})


def finetune(ck: Checkpoint, cfg: ExperimentConfig) -> tuple[Checkpoint, RunReport]:
    steps = cfg.finetune_steps
    report = RunReport("finetune", finetune_steps=steps, config=cfg.to_dict())
    report.params_before = report.params_after = ck.model.param_count()
    report.macs_before = report.macs_after = ck.model.macs_per_sample()
    if steps == 0:
        return ck, report
    data = load_data(cfg)
    with _Timer(report, "finetune"):
        meta = dict(ck.meta, finetune_steps=steps)
        out, history = fit(ck.model.clone(), data, ck.schedule, steps, cfg.finetune_lr, cfg.optim.batch_size,
                           _sub_seed(cfg.seed, 2), meta=meta)
    report.metrics["final_loss"] = float(np.mean([l for _, l in history[-50:]]))
    report.extras["history"] = history
    return out, report


def scratch(pruned: Checkpoint, cfg: ExperimentConfig) -> tuple[Checkpoint, RunReport]:
    """Same sliced architecture, fresh init, same step budget as finetuning."""
    steps = cfg.finetune_steps
    seed = int(_sub_seed(cfg.seed, 3).integers(2**31))
    model = build_model(pruned.model.arch, seed=seed)
    report = RunReport("scratch", finetune_steps=steps, config=cfg.to_dict())
    report.params_before = report.params_after = model.param_count()
    report.macs_before = report.macs_after = model.macs_per_sample()
    data = load_data(cfg)
    with _Timer(report, "scratch"):
        out, history = fit(model, data, pruned.schedule, steps, cfg.finetune_lr, cfg.optim.batch_size,
                           _sub_seed(cfg.seed, 4), meta={"stage": "scratch", "steps": steps})
    report.extras["history"] = history
    return out, report


# -- pruning ------------------------------------------------------------------
def profile(ck: Checkpoint, cfg: ExperimentConfig) -> LossProfile:
    return estimate_loss_profile(ck.model, load_data(cfg), ck.schedule, cfg.prune.profile_samples, cfg.prune.seed)


def prune(ck: Checkpoint, cfg: ExperimentConfig) -> tuple[Checkpoint, RunReport]:
    """Loss profile, threshold, score, select, slice."""
    pc = cfg.prune
    model, sched = ck.model, ck.schedule
    data = load_data(cfg)
    report = RunReport("prune", config=cfg.to_dict())
    report.params_before, report.macs_before = model.param_count(), model.macs_per_sample()
    groups = groups_for(model)
    with _Timer(report, "profile"):
        prof = estimate_loss_profile(model, data, sched, pc.profile_samples, pc.seed)
    with _Timer(report, "score"):
        scores = compute_scores(model, groups, data, sched, pc, prof)
    with _Timer(report, "select"):
        removed = select_groups(scores, model, groups, pc.target_kind, pc.target, pc.overshoot_tol)
    with _Timer(report, "slice"):
        student = slice_model(model, groups, removed)
    kept = scores.mask.kept_count if scores.mask is not None else None
    if kept is None:
        kept = 1 if pc.criterion == "taylor" else 0
    report.kept_steps = kept
    report.params_after, report.macs_after = student.param_count(), student.macs_per_sample()
    report.removed_groups = [int(i) for i in removed]
    report.metrics["param_reduction"] = 1.0 - report.params_after / report.params_before
    report.metrics["macs_reduction"] = 1.0 - report.macs_after / report.macs_before
    report.extras.update(profile=prof, scores=scores, groups=groups, removed_by_family=family_summary(groups, removed))
    meta = {"stage": "prune", "criterion": pc.criterion, "target_kind": pc.target_kind, "target": pc.target,
            "threshold": pc.threshold, "removed_groups": report.removed_groups, "teacher_widths": model.arch["widths"]}
    return Checkpoint(student, sched, ck.step, None, None, meta), report


# -- evaluation ---------------------------------------------------------------
def eval_seeds(cfg: ExperimentConfig) -> list[int]:
    return list(range(cfg.eval.seed_offset, cfg.eval.seed_offset + cfg.eval.n_seeds))


def sample_points(model, sched, cfg: ExperimentConfig, n: int | None = None, seed: int | None = None) -> np.ndarray:
    """``n`` 2-D samples from one fixed noise batch (same noise for every model)."""
    n = n or cfg.eval.n_samples
    seed = cfg.eval.seed_offset + 1_000_000 if seed is None else seed
    out = generate(model, sched, [seed], model.sample_shape, cfg.eval.sampler, cfg.eval_steps, per_seed=n)
    return out.reshape(n, *model.sample_shape)


def _reference_points(cfg: ExperimentConfig, n: int) -> np.ndarray:
    data = load_data(cfg)
    rng = _sub_seed(cfg.eval.seed_offset, 5)
    idx = rng.choice(data.shape[0], size=n, replace=data.shape[0] < n)
    return data[idx]


def evaluate(teacher: Checkpoint, student: Checkpoint, cfg: ExperimentConfig) -> RunReport:
    if tuple(teacher.model.sample_shape) != tuple(student.model.sample_shape):
        raise ValueError(f"shape mismatch: teacher {teacher.model.sample_shape} vs student {student.model.sample_shape}")
    report = RunReport("eval", config=cfg.to_dict())
    report.params_before, report.macs_before = teacher.model.param_count(), teacher.model.macs_per_sample()
    report.params_after, report.macs_after = student.model.param_count(), student.model.macs_per_sample()
    report.finetune_steps = student.meta.get("finetune_steps")
    sched = teacher.schedule
    with _Timer(report, "consistency"):
        cons = consistency_eval(teacher.model, student.model, sched, eval_seeds(cfg), cfg.eval.sampler, cfg.eval_steps)
    report.metrics["consistency_mean"] = cons.mean
    report.metrics["consistency_std"] = cons.std
    report.extras["consistency"] = cons
    if len(student.model.sample_shape) == 1:
        with _Timer(report, "mmd"):
            ref = _reference_points(cfg, cfg.eval.n_samples)
            xs = sample_points(student.model, sched, cfg)
            xt = sample_points(teacher.model, sched, cfg)
            report.metrics["mmd_student"] = mmd_2d(xs, ref)
            report.metrics["mmd_teacher"] = mmd_2d(xt, ref)
            report.metrics["mmd_teacher_student"] = mmd_2d(xt, xs)
    return report


# -- sample output ------------------------------------------------------------
def write_pgm_grid(path, images: np.ndarray, cols: int | None = None, pad: int = 1) -> None:
    """Tile ``[n, 1, h, w]`` images with values in [0, 1] into one binary PGM."""
    imgs = np.asarray(images, dtype=np.float64).reshape(len(images), *images.shape[-2:])
    n, h, w = imgs.shape
    cols = cols or math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad), dtype=np.uint8)
    for i, img in enumerate(imgs):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_scatter_csv(path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in np.asarray(points, dtype=np.float64):
            w.writerow([repr(x), repr(y)])


def sample(ck: Checkpoint, cfg: ExperimentConfig, out_dir, n: int | None = None) -> Path:
    """Write samples: a PGM grid for images, a scatter CSV for points."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(ck.model.sample_shape) == 3:
        n = n or 64
        seeds = [cfg.eval.seed_offset + i for i in range(n)]
        imgs = generate(ck.model, ck.schedule, seeds, ck.model.sample_shape, cfg.eval.sampler, cfg.eval_steps)
        path = out / "samples.pgm"
        write_pgm_grid(path, to_unit_range(imgs[:, 0]))
    else:
        path = out / "samples.csv"
        write_scatter_csv(path, sample_points(ck.model, ck.schedule, cfg, n))
    return path


# -- sweeps -------------------------------------------------------------------
SWEEP_COLUMNS = ["axis", "value", "criterion", "threshold", "target", "kept_steps", "params_before", "params_after",
                 "macs_before", "macs_after", "macs_reduction", "finetune_steps", "consistency_mean",
                 "consistency_std", "mmd_student", "error"]


def _sweep_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    key = {"threshold": "threshold", "ratio": "target", "criterion": "criterion"}[axis]
    return cfg.replace(prune={key: value})


def sweep_one(cfg_dict: dict, teacher_path: str, axis: str, value) -> dict:
    cfg = from_dict(cfg_dict)
    row = {"axis": axis, "value": value}
    try:
        run_cfg = _sweep_config(cfg, axis, value)
        row.update(criterion=run_cfg.prune.criterion, threshold=run_cfg.prune.threshold, target=run_cfg.prune.target)
        teacher = ckpt_io.load(teacher_path)
        student, rep = prune(teacher, run_cfg)
        row.update(kept_steps=rep.kept_steps, params_before=rep.params_before, params_after=rep.params_after,
                   macs_before=rep.macs_before, macs_after=rep.macs_after,
                   macs_reduction=rep.metrics["macs_reduction"])
        if cfg.sweep.finetune:
            student, _ = finetune(student, run_cfg)
            row["finetune_steps"] = run_cfg.finetune_steps
        ev = evaluate(teacher, student, run_cfg)
        row.update({k: ev.metrics.get(k) for k in ("consistency_mean", "consistency_std", "mmd_student")})
    except Exception as exc:  # one failed run must not stop the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("DIFFPRUNE_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def sweep(cfg: ExperimentConfig, teacher_path, values=None) -> list[dict]:
    """One prune(+finetune)+evaluate run per axis value; rows come back in value order."""
    axis = cfg.sweep.axis
    values = list(cfg.sweep.values if values is None else values)
    if not values:
        raise ValueError("sweep.values is empty")
    args = [(cfg.to_dict(), str(teacher_path), axis, v) for v in values]
    workers = worker_count(len(args))
    if workers == 1:
        return [sweep_one(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(sweep_one, *zip(*args)))


def write_sweep_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in SWEEP_COLUMNS})
