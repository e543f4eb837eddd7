"""Experiment configuration loaded from strict JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import NoiseSchedule, make_linear_schedule
from .importance import CRITERIA, PruneConfig
from .models import mlp_arch, unet_arch

DATASET_KINDS = ("gauss8", "swissroll", "shapes16", "external")
SWEEP_AXES = ("threshold", "ratio", "criterion")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    kind: str = "gauss8"
    n: int = 10000
    path: str | None = None  # required for "external"; otherwise where gen-data writes

    def validate(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}")
        _positive("dataset.n", self.n)
        if self.kind == "external":
            if not self.path:
                raise ConfigError("dataset.path is required for external datasets")
            if not Path(self.path).exists():
                raise ConfigError(f"dataset.path does not exist: {self.path}")


@dataclass
class ModelConfig:
    family: str = "mlp"
    widths: list = field(default_factory=lambda: [64, 64, 64])
    temb_dim: int = 32
    dtype: str = "float32"

    def validate(self):
        if self.family not in ("mlp", "unet"):
            raise ConfigError("model.family must be mlp or unet")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype must be float32 or float64")
        if not self.widths or any(int(w) < 1 for w in self.widths):
            raise ConfigError("model.widths must be positive")
        if self.family == "unet" and len(self.widths) != 2:
            raise ConfigError("unet widths are [c1, c2]")

    def arch(self) -> dict:
        if self.family == "mlp":
            return mlp_arch(self.widths, temb_dim=self.temb_dim, dtype=self.dtype)
        return unet_arch(tuple(self.widths), temb_dim=self.temb_dim, dtype=self.dtype)


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def validate(self):
        _positive("schedule.T", self.T)

    def build(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 256
    checkpoint_every: int = 0  # 0: only at the end

    def validate(self):
        _positive("optim.lr", self.lr)
        _positive("optim.steps", self.steps)
        _positive("optim.batch_size", self.batch_size)
        if self.checkpoint_every < 0:
            raise ConfigError("optim.checkpoint_every must be >= 0")


@dataclass
class FinetuneConfig:
    steps: int | None = None  # default: 10% of optim.steps
    lr: float | None = None  # default: optim.lr

    def validate(self):
        if self.steps is not None and self.steps < 0:
            raise ConfigError("finetune.steps must be >= 0")
        if self.lr is not None:
            _positive("finetune.lr", self.lr)


@dataclass
class EvalConfig:
    sampler: str = "ddim"
    steps: int | None = None  # default: min(100, T)
    n_seeds: int = 16
    n_samples: int = 1000
    seed_offset: int = 0

    def validate(self):
        if self.sampler not in ("ddim", "ddpm"):
            raise ConfigError("eval.sampler must be ddim or ddpm")
        if self.steps is not None:
            _positive("eval.steps", self.steps)
        _positive("eval.n_seeds", self.n_seeds)
        _positive("eval.n_samples", self.n_samples)


@dataclass
class SweepConfig:
    axis: str = "threshold"
    values: list = field(default_factory=list)
    finetune: bool = False

    def validate(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
        if self.axis == "criterion" and any(v not in CRITERIA for v in self.values):
            raise ConfigError(f"criterion sweep values must be among {CRITERIA}")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        for section in (self.dataset, self.model, self.schedule, self.optim, self.finetune, self.eval, self.sweep):
            section.validate()
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        return self

    @property
    def finetune_steps(self) -> int:
        if self.finetune.steps is not None:
            return self.finetune.steps
        return max(1, round(0.1 * self.optim.steps))

    @property
    def finetune_lr(self) -> float:
        return self.finetune.lr if self.finetune.lr is not None else self.optim.lr

    @property
    def eval_steps(self) -> int:
        return self.eval.steps if self.eval.steps is not None else min(100, self.schedule.T)

    @property
    def data_path(self) -> Path:
        return Path(self.dataset.path) if self.dataset.path else Path(self.out_dir) / "data.dtns"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with nested overrides, e.g. ``replace(prune={"threshold": 0.1})``."""
        d = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                d[key].update(value)
            else:
                d[key] = value
        return from_dict(d)


_SECTIONS = {
    "dataset": DatasetConfig, "model": ModelConfig, "schedule": ScheduleConfig, "optim": OptimConfig,
    "prune": PruneConfig, "finetune": FinetuneConfig, "eval": EvalConfig, "sweep": SweepConfig,
}


def _positive(name, value):
    if value is None or value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - {f.name for f in dataclasses.fields(ExperimentConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _build(_SECTIONS[key], value, key) if key in _SECTIONS else value
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
