"""Checkpoint container ("DPCK").

Layout, little-endian::

    b"DPCK" | u32 version | u32 header_len | header (UTF-8 JSON)
    | u32 n_tensors | n_tensors x (u32 name_len | name | DTNS blob)

The header carries the architecture descriptor, step counter, RNG state and
free-form metadata. Tensors are named ``param/<name>``, ``schedule/beta``,
and optionally ``adam/m/<name>`` / ``adam/v/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dtns
from .diffusion import NoiseSchedule
from .models import Denoiser, build_model

MAGIC = b"DPCK"
VERSION = 1


@dataclass
class Checkpoint:
    model: Denoiser
    schedule: NoiseSchedule
    step: int = 0
    rng_state: dict | None = None
    optimizer: dict | None = None  # {"t": int, "m": {...}, "v": {...}}
    meta: dict = field(default_factory=dict)


def save(path, ckpt: Checkpoint) -> None:
    tensors = {f"param/{k}": v.data for k, v in ckpt.model.params.items()}
    tensors["schedule/beta"] = ckpt.schedule.beta
    header = {
        "arch": ckpt.model.arch,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "optimizer_t": None,
    }
    if ckpt.optimizer is not None:
        header["optimizer_t"] = int(ckpt.optimizer["t"])
        for k, arr in ckpt.optimizer["m"].items():
            tensors[f"adam/m/{k}"] = arr
        for k, arr in ckpt.optimizer["v"].items():
            tensors[f"adam/v/{k}"] = arr
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            dtns.write_tensor(fh, arr)
    tmp.replace(path)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise dtns.FormatError(f"{path}: not a DPCK checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise dtns.FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            tensors[name] = dtns.read_tensor(fh)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model = build_model(header["arch"], params)
    optimizer = None
    if header.get("optimizer_t") is not None:
        optimizer = {
            "t": header["optimizer_t"],
            "m": {k[len("adam/m/"):]: v for k, v in tensors.items() if k.startswith("adam/m/")},
            "v": {k[len("adam/v/"):]: v for k, v in tensors.items() if k.startswith("adam/v/")},
        }
    return Checkpoint(
        model=model,
        schedule=NoiseSchedule(tensors["schedule/beta"]),
        step=header["step"],
        rng_state=header.get("rng_state"),
        optimizer=optimizer,
        meta=header.get("meta", {}),
    )


def same_weights(a: Denoiser, b: Denoiser) -> bool:
    return a.arch == b.arch and all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
