"""Toy image corpus: anti-aliased bright shapes on dark textured backgrounds.

Each image carries a geometry record (the exact rendered foreground mask), so
content-awareness can be tested without any pretrained parser. Backgrounds stay
below luminance 0 and foregrounds above it by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

SHAPE_CLASSES = ("disk", "square", "triangle")
DATASET_FORMAT = "gancomp-toyset-v1"

_BG_MAX = -0.15          # per-channel background ceiling
_FG_LUMA_MIN = 0.35      # minimum mean foreground color
_SUPERSAMPLE = 3         # anti-aliasing subsamples per pixel edge


@dataclass
class ToyDataset:
    images: np.ndarray    # (N, 3, H, W) float32 in [-1, 1]
    labels: np.ndarray    # (N,) int64 shape-class ids
    geometry: np.ndarray  # (N, H, W) uint8 foreground masks
    meta: dict

    def __len__(self) -> int:
        return len(self.images)

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    @property
    def holdout_count(self) -> int:
        return int(self.meta.get("holdout_count", 0))

    def train_images(self) -> np.ndarray:
        n = len(self) - self.holdout_count
        return self.images[:n]

    def holdout_images(self) -> np.ndarray:
        return self.images[len(self) - self.holdout_count:]

    def holdout_geometry(self) -> np.ndarray:
        return self.geometry[len(self) - self.holdout_count:]

    def sample_batch(self, batch_size: int, gen: torch.Generator) -> torch.Tensor:
        """Uniform batch from the training split, as a float32 tensor."""
        train = self.train_images()
        idx = torch.randint(len(train), (batch_size,), generator=gen)
        return torch.from_numpy(train[idx.numpy()])


def _smooth_noise(rng: np.random.Generator, res: int, cells: int, amplitude: float) -> np.ndarray:
    """Band-limited texture: a coarse random grid upsampled bilinearly."""
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells))
    xs = np.linspace(0, cells - 1, res)
    xi = np.clip(xs.astype(int), 0, cells - 2)
    frac = xs - xi
    c00 = coarse[np.ix_(xi, xi)]
    c01 = coarse[np.ix_(xi, xi + 1)]
    c10 = coarse[np.ix_(xi + 1, xi)]
    c11 = coarse[np.ix_(xi + 1, xi + 1)]
    fy, fx = frac[:, None], frac[None, :]
    return amplitude * ((1 - fy) * (1 - fx) * c00 + (1 - fy) * fx * c01
                        + fy * (1 - fx) * c10 + fy * fx * c11)


def _coverage(shape: str, rng: np.random.Generator, res: int):
    """Per-pixel foreground coverage in [0, 1] for a randomly placed shape."""
    s = _SUPERSAMPLE
    grid = (np.arange(res * s) + 0.5) / s  # pixel coordinates of subsamples
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    cy = rng.uniform(0.32, 0.68) * res
    cx = rng.uniform(0.32, 0.68) * res
    radius = rng.uniform(0.18, 0.30) * res
    theta = rng.uniform(0.0, 2.0 * np.pi)
    dy, dx = gy - cy, gx - cx
    if shape == "disk":
        inside = dy ** 2 + dx ** 2 <= radius ** 2
    elif shape == "square":
        ry = np.cos(theta) * dy - np.sin(theta) * dx
        rx = np.sin(theta) * dy + np.cos(theta) * dx
        half = radius / np.sqrt(2.0)
        inside = (np.abs(ry) <= half) & (np.abs(rx) <= half)
    elif shape == "triangle":
        angles = theta + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
        vy = cy + radius * np.sin(angles)
        vx = cx + radius * np.cos(angles)
        inside = np.ones_like(gy, dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            edge = (vx[j] - vx[i]) * (gy - vy[i]) - (vy[j] - vy[i]) * (gx - vx[i])
            center_side = (vx[j] - vx[i]) * (cy - vy[i]) - (vy[j] - vy[i]) * (cx - vx[i])
            inside &= edge * np.sign(center_side) >= 0
    else:
        raise ConfigError(f"unknown shape class {shape!r}")
    cov = inside.reshape(res, s, res, s).mean(axis=(1, 3))
    return cov.astype(np.float64)


def _render_one(rng: np.random.Generator, res: int, label: int):
    # background: dark base color + gradient + smooth texture, clipped below 0 luminance
    base = rng.uniform(-0.92, -0.45, size=3)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.meshgrid(np.linspace(-0.5, 0.5, res), np.linspace(-0.5, 0.5, res),
                         indexing="ij")
    gradient = rng.uniform(0.05, 0.25) * (np.cos(phi) * yy + np.sin(phi) * xx)
    texture = _smooth_noise(rng, res, cells=5, amplitude=rng.uniform(0.03, 0.10))
    bg = base[:, None, None] + gradient[None] + texture[None]
    bg = np.clip(bg, -1.0, _BG_MAX)

    # bright foreground color, luminance kept clear of the background band
    color = rng.uniform(0.15, 0.95, size=3)
    if color.mean() < _FG_LUMA_MIN:
        color = color + (_FG_LUMA_MIN - color.mean())
    color = np.clip(color, -1.0, 1.0)

    cov = _coverage(SHAPE_CLASSES[label], rng, res)
    img = bg * (1.0 - cov[None]) + color[:, None, None] * cov[None]
    return img.astype(np.float32), (cov > 0.5).astype(np.uint8)


def render_dataset(count: int, resolution: int, seed: int,
                   holdout_count: int = 64) -> ToyDataset:
    """Render `count` labeled shape images; the last `holdout_count` form the eval split."""
    if count < 1:
        raise ConfigError(f"dataset count must be >= 1, got {count}")
    if holdout_count >= count:
        raise ConfigError("holdout_count must be smaller than count")
    images = np.empty((count, 3, resolution, resolution), dtype=np.float32)
    geometry = np.empty((count, resolution, resolution), dtype=np.uint8)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        label = int(rng.integers(len(SHAPE_CLASSES)))
        labels[i] = label
        images[i], geometry[i] = _render_one(rng, resolution, label)
    meta = {"format": DATASET_FORMAT, "seed": seed, "count": count,
            "resolution": resolution, "classes": list(SHAPE_CLASSES),
            "holdout_count": holdout_count}
    return ToyDataset(images=images, labels=labels, geometry=geometry, meta=meta)


def save_dataset(ds: ToyDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "images.npy", ds.images)
    np.save(out / "labels.npy", ds.labels)
    np.save(out / "geometry.npy", ds.geometry)
    (out / "manifest.json").write_text(json.dumps(ds.meta, indent=2, sort_keys=True))


def load_dataset(in_dir) -> ToyDataset:
    src = Path(in_dir)
    meta = json.loads((src / "manifest.json").read_text())
    if meta.get("format") != DATASET_FORMAT:
        raise ConfigError(f"not a toy dataset directory: {src}")
    return ToyDataset(images=np.load(src / "images.npy"),
                      labels=np.load(src / "labels.npy"),
                      geometry=np.load(src / "geometry.npy"),
                      meta=meta)
