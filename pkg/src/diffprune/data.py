"""Synthetic datasets: 2-D point clouds and 16x16 shape images."""

from __future__ import annotations

import numpy as np

from . import dtns

KINDS = ("gauss8", "swissroll", "shapes16")


def gauss8(n: int, rng: np.random.Generator, radius: float = 2.0, std: float = 0.02) -> np.ndarray:
    k = rng.integers(8, size=n)
    ang = 2.0 * np.pi * k / 8.0
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return (centers + std * rng.standard_normal((n, 2))).astype(np.float32)


def swissroll(n: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    theta = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
    pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    pts = 2.0 * pts / np.abs(pts).max()
    pts = pts + noise * rng.standard_normal(pts.shape)
    return np.clip(pts, -2.0, 2.0).astype(np.float32)


def shapes16(n: int, rng: np.random.Generator, size: int = 16) -> np.ndarray:
    """Images with 1-3 filled rectangles or disks on a black background, values in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.zeros((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        img = out[i, 0]
        for _ in range(rng.integers(1, 4)):
            level = rng.uniform(0.4, 1.0)
            if rng.random() < 0.5:
                h, w = rng.integers(3, 9, size=2)
                y0 = rng.integers(0, size - h + 1)
                x0 = rng.integers(0, size - w + 1)
                shape = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
            else:
                r = rng.uniform(2.0, 5.0)
                cy, cx = rng.uniform(r, size - r, size=2)
                shape = (yy - cy + 0.5) ** 2 + (xx - cx + 0.5) ** 2 <= r * r
            np.maximum(img, np.where(shape, level, 0.0), out=img)
    return out


def generate_dataset(kind: str, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "gauss8":
        return gauss8(n, rng)
    if kind == "swissroll":
        return swissroll(n, rng)
    if kind == "shapes16":
        return shapes16(n, rng)
    raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def write_dataset(path, data: np.ndarray) -> None:
    dtns.save(path, data)


def read_dataset(path) -> np.ndarray:
    return dtns.load(path)


def to_model_space(data: np.ndarray) -> np.ndarray:
    """Images in [0, 1] become [-1, 1]; point clouds pass through."""
    data = np.asarray(data, dtype=np.float32)
    return data * 2.0 - 1.0 if data.ndim == 4 else data
