"""Shared machinery for prunable denoisers.

A model is described by an *architecture descriptor* (a JSON-friendly dict)
and a flat dict of named parameter tensors. The descriptor names every
prunable channel set as a *family* with a width; layers reference families
for their output and for each slice of their (possibly concatenated) input.
Parameter shapes, analytic counts, and the prunable inventory are all
derived from that layer list, so a sliced model only needs new widths.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..tensor import Tensor

Slice = tuple  # (family name or None, width)


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # "linear" | "conv" | "norm"
    inputs: tuple  # tuple of Slice, concatenated along the channel axis
    output: Slice
    kernel: int = 1
    positions: int = 1  # output spatial positions per sample
    bias: bool = True

    @property
    def in_width(self) -> int:
        return sum(w for _, w in self.inputs)

    @property
    def out_width(self) -> int:
        return self.output[1]

    def param_shapes(self) -> dict[str, tuple]:
        out, inw = self.out_width, self.in_width
        if self.kind == "norm":
            return {f"{self.name}.weight": (out,), f"{self.name}.bias": (out,)}
        if self.kind == "linear":
            shapes = {f"{self.name}.weight": (out, inw)}
        elif self.kind == "conv":
            shapes = {f"{self.name}.weight": (out, inw, self.kernel, self.kernel)}
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.bias:
            shapes[f"{self.name}.bias"] = (out,)
        return shapes

    def macs(self) -> int:
        """Multiply-accumulates per sample (matmul/conv only)."""
        if self.kind == "norm":
            return 0
        return self.out_width * self.in_width * self.kernel * self.kernel * self.positions


@dataclass(frozen=True)
class Coupling:
    axis: int
    family: str
    offset: int
    width: int
    direction: str  # "out" or "in"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    layer: str
    role: str  # conv | linear | norm | skip-sink
    couplings: tuple = ()

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class FamilySpec:
    name: str
    width: int
    granularity: int  # channels removed together (norm group size, else 1)
    skip_source: bool = False

    @property
    def min_keep(self) -> int:
        return max(1, self.granularity)


@dataclass
class PrunableSpec:
    params: list
    families: dict = field(default_factory=dict)

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


def build_spec(layers: list[Layer], granularity: dict[str, int]) -> PrunableSpec:
    params: list[ParamSpec] = []
    widths: dict[str, int] = {}
    skip_sources: set[str] = set()
    for layer in layers:
        fam_out, w_out = layer.output
        if fam_out is not None:
            widths.setdefault(fam_out, w_out)
            if widths[fam_out] != w_out:
                raise ValueError(f"family {fam_out} has inconsistent widths")
        families_in = [f for f, _ in layer.inputs if f is not None]
        role = layer.kind
        if len(layer.inputs) > 1:
            role = "skip-sink"
            skip_sources.update(families_in[1:])
        for pname, shape in layer.param_shapes().items():
            couplings = []
            if fam_out is not None:
                couplings.append(Coupling(0, fam_out, 0, w_out, "out"))
            if pname.endswith(".weight") and layer.kind != "norm":
                off = 0
                for fam, w in layer.inputs:
                    if fam is not None:
                        couplings.append(Coupling(1, fam, off, w, "in"))
                    off += w
            params.append(ParamSpec(pname, shape, layer.name, role, tuple(couplings)))
    families = {
        name: FamilySpec(name, w, granularity.get(name, 1), name in skip_sources)
        for name, w in widths.items()
    }
    return PrunableSpec(params, families)


def fan_in_uniform(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def timestep_embedding(t: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features ``[sin(t f_i), cos(t f_i)]`` of the integer timesteps."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)


class Denoiser:
    """Noise predictor with a declared, sliceable parameter layout."""

    family = "base"
    output_layer = "out"

    def __init__(self, arch: dict, params: dict | None = None, seed: int = 0):
        self.arch = copy.deepcopy(arch)
        self.dtype = np.dtype(self.arch.get("dtype", "float32"))
        shapes = self.param_shapes()
        if params is None:
            params = self._init_params(np.random.default_rng(seed), shapes)
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
            if arr.shape != tuple(shape):
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.astype(self.dtype), requires_grad=True)

    # -- layout -----------------------------------------------------------
    @classmethod
    def layers(cls, arch: dict) -> list[Layer]:
        raise NotImplementedError

    @classmethod
    def granularity(cls, arch: dict) -> dict[str, int]:
        return {}

    def param_shapes(self) -> dict[str, tuple]:
        shapes: dict[str, tuple] = {}
        for layer in self.layers(self.arch):
            shapes.update(layer.param_shapes())
        return shapes

    def _init_params(self, rng: np.random.Generator, shapes: dict) -> dict:
        params = {}
        kinds = {l.name: l.kind for l in self.layers(self.arch)}
        for name, shape in shapes.items():
            layer, leaf = name.rsplit(".", 1)
            if kinds[layer] == "norm":
                fill = 1.0 if leaf == "weight" else 0.0
                params[name] = np.full(shape, fill, dtype=self.dtype)
            elif leaf == "bias" or layer == self.output_layer:
                params[name] = np.zeros(shape, dtype=self.dtype)
            else:
                params[name] = fan_in_uniform(rng, shape, self.dtype)
        return params

    # -- counting ---------------------------------------------------------
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def macs_per_sample(self, input_shape: tuple | None = None) -> int:
        if input_shape is not None and tuple(input_shape) != self.sample_shape:
            raise ValueError(f"model expects per-sample shape {self.sample_shape}, got {tuple(input_shape)}")
        return sum(layer.macs() for layer in self.layers(self.arch))

    @property
    def sample_shape(self) -> tuple:
        raise NotImplementedError

    def prunable_spec(self) -> PrunableSpec:
        return build_spec(self.layers(self.arch), self.granularity(self.arch))

    # -- forward ----------------------------------------------------------
    def __call__(self, x, t) -> Tensor:
        return self.forward(x, t)

    def _prep(self, x, t) -> tuple[Tensor, np.ndarray]:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        elif x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        if tuple(x.shape[1:]) != self.sample_shape:
            raise ValueError(f"{self.family} expects [N, {self.sample_shape}], got {x.shape}")
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        if t.size == 1 and x.shape[0] != 1:
            t = np.full(x.shape[0], int(t[0]))
        if t.size != x.shape[0]:
            raise ValueError("need one timestep per sample")
        return x, t

    def forward(self, x, t) -> Tensor:
        raise NotImplementedError

    # -- copies -----------------------------------------------------------
    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def clone(self) -> "Denoiser":
        return type(self)(self.arch, {k: v.data.copy() for k, v in self.params.items()})

    def with_arch(self, arch: dict, params: dict) -> "Denoiser":
        return type(self)(arch, params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}(widths={self.arch['widths']}, params={self.param_count()})"
