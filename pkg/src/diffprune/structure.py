"""Coupled parameter groups and physical removal of pruned channels.

A *group* is one prunable unit of a channel family: a single hidden unit for
the MLP, or one normalization group worth of channels for the UNet. Its
members are every parameter slice that indexes those channels, on the
producing layer's output axis, on every consuming layer's input axis
(including skip-concatenation slices), and on the norm affine vectors.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .models import Denoiser, PrunableSpec, count_macs, count_params


@dataclass(frozen=True)
class Member:
    param: str
    axis: int
    indices: tuple


@dataclass(frozen=True)
class ParamGroup:
    id: int
    family: str
    channels: tuple
    members: tuple

    def numel(self, shapes: dict) -> int:
        total = 0
        for m in self.members:
            shape = shapes[m.param]
            total += len(m.indices) * int(np.prod(shape)) // shape[m.axis]
        return total


class DependencyGraph:
    """Nodes are (parameter, axis) pairs; edges join nodes that index one family."""

    def __init__(self, spec: PrunableSpec):
        self.spec = spec
        self.nodes: dict[str, list[tuple]] = defaultdict(list)
        for p in spec.params:
            for c in p.couplings:
                if c.family not in spec.families:
                    raise ValueError(f"{p.name}: coupling to unknown family {c.family}")
                if p.shape[c.axis] < c.offset + c.width:
                    raise ValueError(f"{p.name}: axis {c.axis} too small for {c.family} slice")
                self.nodes[c.family].append((p.name, c.axis, c.offset))

    def components(self) -> dict[str, list[tuple]]:
        return dict(self.nodes)


def build_groups(spec: PrunableSpec) -> list[ParamGroup]:
    graph = DependencyGraph(spec)
    groups: list[ParamGroup] = []
    for fam_name, fam in spec.families.items():
        g = fam.granularity
        if fam.width % g:
            raise ValueError(f"family {fam_name}: width {fam.width} not a multiple of {g}")
        nodes = graph.nodes[fam_name]
        for start in range(0, fam.width, g):
            chans = tuple(range(start, start + g))
            members = tuple(
                Member(pname, axis, tuple(off + c for c in chans)) for pname, axis, off in nodes
            )
            groups.append(ParamGroup(len(groups), fam_name, chans, members))
    return groups


def groups_for(model: Denoiser) -> list[ParamGroup]:
    return build_groups(model.prunable_spec())


def _lookup(groups: list[ParamGroup], ids) -> list[ParamGroup]:
    by_id = {g.id: g for g in groups}
    out = []
    for i in ids:
        if i not in by_id:
            raise KeyError(f"unknown group id {i}")
        out.append(by_id[i])
    return out


def apply_mask(model: Denoiser, groups: list[ParamGroup], ids) -> Denoiser:
    """Copy of ``model`` with every member slice of the given groups set to zero."""
    params = {k: v.data.copy() for k, v in model.params.items()}
    for g in _lookup(groups, ids):
        for m in g.members:
            idx = [slice(None)] * params[m.param].ndim
            idx[m.axis] = list(m.indices)
            params[m.param][tuple(idx)] = 0
    return model.with_arch(model.arch, params)


def removal_plan(model: Denoiser, groups: list[ParamGroup], ids) -> dict[str, list[int]]:
    """Surviving channel indices per family; validates survivor minimums."""
    spec = model.prunable_spec()
    removed: dict[str, set] = defaultdict(set)
    for g in _lookup(groups, ids):
        removed[g.family].update(g.channels)
    keep = {}
    for name, fam in spec.families.items():
        kept = [c for c in range(fam.width) if c not in removed[name]]
        if len(kept) < fam.min_keep:
            raise ValueError(f"cannot remove {len(removed[name])} of {fam.width} channels from {name}")
        if len(removed[name]) % fam.granularity:
            raise ValueError(f"{name}: removal must come in multiples of {fam.granularity}")
        keep[name] = kept
    return keep


def sliced_arch(arch: dict, keep: dict[str, list[int]]) -> dict:
    new = dict(arch)
    new["widths"] = {fam: len(keep.get(fam, range(w))) for fam, w in arch["widths"].items()}
    return new


def slice_model(model: Denoiser, groups: list[ParamGroup], ids) -> Denoiser:
    """Structurally smaller copy of ``model`` with the given groups removed."""
    ids = list(ids)
    if not ids:
        return model.clone()
    keep = removal_plan(model, groups, ids)
    spec = model.prunable_spec()
    params = {}
    for p in spec.params:
        arr = model.params[p.name].data
        by_axis: dict[int, list] = defaultdict(list)
        for c in p.couplings:
            by_axis[c.axis].append(c)
        for axis, couplings in by_axis.items():
            index = list(range(arr.shape[axis]))
            drop = set()
            for c in couplings:
                kept = set(keep[c.family])
                drop.update(c.offset + ch for ch in range(c.width) if ch not in kept)
            index = [i for i in index if i not in drop]
            arr = np.take(arr, index, axis=axis)
        params[p.name] = np.ascontiguousarray(arr)
    return model.with_arch(sliced_arch(model.arch, keep), params)


def removed_macs(model: Denoiser, groups: list[ParamGroup], ids) -> int:
    """MACs attributable to the removed groups, counted weight element by element."""
    ids = list(ids)
    keep = removal_plan(model, groups, ids) if ids else {
        f: list(range(w)) for f, w in model.arch["widths"].items()
    }
    total = 0
    for layer in type(model).layers(model.arch):
        if layer.kind == "norm":
            continue
        out_fam, out_w = layer.output
        out_alive = np.ones(out_w, bool)
        if out_fam is not None:
            out_alive[:] = False
            out_alive[keep[out_fam]] = True
        in_alive = []
        for fam, w in layer.inputs:
            a = np.ones(w, bool)
            if fam is not None:
                a[:] = False
                a[keep[fam]] = True
            in_alive.append(a)
        in_alive = np.concatenate(in_alive)
        dead = out_alive.size * in_alive.size - int(out_alive.sum()) * int(in_alive.sum())
        total += dead * layer.kernel * layer.kernel * layer.positions
    return total


def group_report(groups: list[ParamGroup]) -> str:
    lines = []
    for g in groups:
        parts = [f"{m.param}[axis={m.axis}]{{{m.indices[0]}..{m.indices[-1]}}}" for m in g.members]
        lines.append(f"{g.id}\t{g.family}\t{','.join(map(str, g.channels))}\t{' '.join(parts)}")
    return "\n".join(lines) + "\n"


def counts_after(model: Denoiser, groups: list[ParamGroup], ids) -> tuple[int, int]:
    """(params, MACs) of the model that slicing ``ids`` would produce."""
    keep = removal_plan(model, groups, ids)
    arch = sliced_arch(model.arch, keep)
    return count_params(arch), count_macs(arch)
