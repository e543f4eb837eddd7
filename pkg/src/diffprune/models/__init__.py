"""Prunable noise predictors and architecture helpers."""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor
from .base import Coupling, Denoiser, FamilySpec, Layer, ParamSpec, PrunableSpec, fan_in_uniform, timestep_embedding
from .mlp import MlpDenoiser, mlp_arch
from .unet import TinyUnet, unet_arch

MODEL_CLASSES = {"mlp": MlpDenoiser, "unet": TinyUnet}


def model_class(arch: dict) -> type[Denoiser]:
    try:
        return MODEL_CLASSES[arch["family"]]
    except KeyError:
        raise ValueError(f"unknown model family {arch.get('family')!r}") from None


def build_model(arch: dict, params: dict | None = None, seed: int = 0) -> Denoiser:
    return model_class(arch)(arch, params, seed=seed)


def count_params(arch: dict) -> int:
    return sum(int(np.prod(s)) for l in model_class(arch).layers(arch) for s in l.param_shapes().values())


def count_macs(arch: dict) -> int:
    return sum(l.macs() for l in model_class(arch).layers(arch))


def randomize_params(model: Denoiser, seed: int, scale: float = 1.0) -> Denoiser:
    """Copy of ``model`` with every tensor (biases, norms, output layer too) drawn at random."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, p in model.params.items():
        if p.ndim == 1:
            params[name] = (rng.uniform(0.5, 1.5, p.shape) if "norm" in name and name.endswith("weight")
                            else rng.uniform(-0.5, 0.5, p.shape)).astype(model.dtype)
        else:
            params[name] = scale * fan_in_uniform(rng, p.shape, model.dtype) * np.sqrt(3.0)
    return model.with_arch(model.arch, params)


class ConstantDenoiser:
    """Predicts the same noise value everywhere, ignoring its input."""

    def __init__(self, value=0.0):
        self.value = value

    def __call__(self, x, t) -> Tensor:
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        return Tensor(np.broadcast_to(np.asarray(self.value, dtype=x.dtype), x.shape).copy())


__all__ = [
    "ConstantDenoiser", "Coupling", "Denoiser", "FamilySpec", "Layer", "MlpDenoiser", "ParamSpec",
    "PrunableSpec", "TinyUnet", "build_model", "count_macs", "count_params", "mlp_arch",
    "model_class", "randomize_params", "timestep_embedding", "unet_arch",
]
