"""Content-of-interest masks: parsing providers, COI-restricted noise, spatial masking."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, MaskError, UnsupportedArchitectureError

log = logging.getLogger(__name__)

_CC_STRUCTURE = np.ones((3, 3), dtype=int)  # 8-connectivity


@dataclass
class ContentMask:
    grid: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2:
            raise MaskError(f"mask must be 2-D, got shape {grid.shape}")
        uniq = np.unique(grid)
        if not np.all(np.isin(uniq, (0, 1))):
            raise MaskError("mask entries must be binary")
        self.grid = grid.astype(np.uint8)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def coverage(self) -> float:
        return float(self.grid.mean())

    def is_empty(self) -> bool:
        return not self.grid.any()

    def to_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.grid).to(dtype)

    @classmethod
    def ones(cls, h: int, w: int) -> "ContentMask":
        return cls(np.ones((h, w), dtype=np.uint8))

    @classmethod
    def zeros(cls, h: int, w: int) -> "ContentMask":
        return cls(np.zeros((h, w), dtype=np.uint8))


def _to_chw(image) -> np.ndarray:
    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    if arr.ndim != 3:
        raise MaskError(f"expected a (C, H, W) image, got shape {arr.shape}")
    return arr


def oracle_mask(image, threshold: float = 0.0) -> ContentMask:
    """Synthetic parser for the toy corpus: luminance threshold, then largest connected component."""
    arr = _to_chw(image)
    bright = arr.mean(axis=0) > threshold
    if not bright.any():
        return ContentMask(np.zeros(bright.shape, dtype=np.uint8))
    labels, n = ndimage.label(bright, structure=_CC_STRUCTURE)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    largest = 1 + int(np.argmax(sizes))
    return ContentMask((labels == largest).astype(np.uint8))


def cam_mask(image, classifier, threshold_fraction: float = 0.5) -> ContentMask:
    """Class activation map of the predicted class, min-max normalized, nearest-upsampled, binarized.

    Requires a classifier with a global-average-pool head exposing
    `feature_maps(images)` and `class_weights()`.
    """
    if not (hasattr(classifier, "feature_maps") and hasattr(classifier, "class_weights")):
        raise UnsupportedArchitectureError(
            "CAM needs a classifier with a GAP head exposing feature_maps() and class_weights()")
    arr = _to_chw(image)
    x = torch.as_tensor(arr, dtype=torch.float32).unsqueeze(0)
    with torch.no_grad():
        maps = classifier.feature_maps(x)[0]          # (K, h, w)
        weights = classifier.class_weights()          # (n_classes, K)
        scores = maps.mean(dim=(1, 2)) @ weights.T    # GAP logits, bias-free
        cls = int(torch.argmax(scores))
        cam = torch.einsum("k,khw->hw", weights[cls], maps).numpy()
    lo, hi = cam.min(), cam.max()
    h, w = arr.shape[1:]
    if hi - lo <= 1e-12:
        log.info("cam_mask: constant activation map, falling back to an all-ones mask")
        return ContentMask.ones(h, w)
    cam = (cam - lo) / (hi - lo)
    scale_h, scale_w = h // cam.shape[0], w // cam.shape[1]
    up = np.repeat(np.repeat(cam, scale_h, axis=0), scale_w, axis=1)
    if up.shape != (h, w):
        raise MaskError(f"feature map {cam.shape} does not tile image resolution {(h, w)}")
    return ContentMask((up >= threshold_fraction).astype(np.uint8))


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "salt_pepper"
    p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind != "salt_pepper":
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not (0.0 < self.p < 1.0):
            raise ConfigError(f"flip probability must be in (0, 1), got {self.p}")


def apply_coi_noise(images: torch.Tensor, masks, cfg: NoiseConfig,
                    seed: int | None = None) -> torch.Tensor:
    """Salt-and-pepper noise restricted to COI pixels.

    Inside the mask each spatial pixel is independently forced to -1 with
    probability p, to +1 with probability p, and left alone otherwise; every
    pixel outside the mask is returned bit-exactly. Accepts a single (C, H, W)
    image with one mask or a (N, C, H, W) batch with per-image masks.
    """
    single = images.dim() == 3
    batch = images.unsqueeze(0) if single else images
    if batch.dim() != 4:
        raise MaskError(f"expected (C,H,W) or (N,C,H,W) images, got {tuple(images.shape)}")
    mask_t = _masks_to_tensor(masks, batch.shape[0], batch.shape[2:], batch.dtype)
    gen = torch.Generator().manual_seed(cfg.seed if seed is None else seed)
    u = torch.rand(batch.shape[0], *batch.shape[2:], generator=gen)
    pepper = ((u < cfg.p) & (mask_t > 0)).unsqueeze(1)
    salt = ((u >= cfg.p) & (u < 2 * cfg.p) & (mask_t > 0)).unsqueeze(1)
    out = batch.clone()
    out = torch.where(pepper, torch.tensor(-1.0, dtype=batch.dtype), out)
    out = torch.where(salt, torch.tensor(1.0, dtype=batch.dtype), out)
    return out.squeeze(0) if single else out


def mask_image(images: torch.Tensor, masks) -> torch.Tensor:
    """Element-wise spatial masking: every channel of pixel (h, w) is multiplied by m[h, w]."""
    single = images.dim() == 3
    batch = images.unsqueeze(0) if single else images
    mask_t = _masks_to_tensor(masks, batch.shape[0], batch.shape[2:], batch.dtype)
    out = batch * mask_t.unsqueeze(1)
    return out.squeeze(0) if single else out


def _masks_to_tensor(masks, n: int, hw, dtype) -> torch.Tensor:
    """Normalize mask input (ContentMask, array, or a sequence of them) to (N, H, W)."""
    if isinstance(masks, ContentMask):
        ms = [masks] * n
    elif isinstance(masks, (list, tuple)):
        ms = list(masks)
    elif isinstance(masks, (np.ndarray, torch.Tensor)) and np.asarray(masks).ndim == 3:
        arr = np.asarray(masks)
        ms = [ContentMask(m) for m in arr]
    else:
        ms = [ContentMask(np.asarray(masks))] * n
    if len(ms) != n:
        raise MaskError(f"got {len(ms)} masks for a batch of {n}")
    grids = []
    for m in ms:
        cm = m if isinstance(m, ContentMask) else ContentMask(np.asarray(m))
        if cm.resolution != tuple(hw):
            raise MaskError(f"mask resolution {cm.resolution} != image resolution {tuple(hw)}")
        grids.append(cm.grid)
    return torch.from_numpy(np.stack(grids)).to(dtype)


class OracleMaskProvider:
    """Batched luminance-threshold parser (the toy stand-in for a face parser)."""

    name = "oracle"

    def __init__(self, threshold: float = 0.0):
        self.threshold = threshold

    def __call__(self, images: torch.Tensor) -> list[ContentMask]:
        return [oracle_mask(img, self.threshold) for img in images]


class CamMaskProvider:
    """CAM over a small GAP-headed classifier."""

    name = "cam"

    def __init__(self, classifier, threshold_fraction: float = 0.5):
        self.classifier = classifier
        self.threshold_fraction = threshold_fraction

    def __call__(self, images: torch.Tensor) -> list[ContentMask]:
        return [cam_mask(img, self.classifier, self.threshold_fraction) for img in images]


class FixedMaskProvider:
    """Returns the same mask for every image (tests and file-backed masks)."""

    name = "fixed"

    def __init__(self, mask: ContentMask):
        self.mask = mask

    def __call__(self, images: torch.Tensor) -> list[ContentMask]:
        return [self.mask] * images.shape[0]


class FileMaskProvider:
    """Serves pre-computed masks (e.g. renderer geometry) by image index, in call order."""

    name = "file"

    def __init__(self, masks: np.ndarray):
        self.masks = [ContentMask(m) for m in np.asarray(masks)]
        self._cursor = 0

    def __call__(self, images: torch.Tensor) -> list[ContentMask]:
        n = images.shape[0]
        if self._cursor + n > len(self.masks):
            raise MaskError("file mask provider exhausted")
        out = self.masks[self._cursor:self._cursor + n]
        self._cursor += n
        return out

    def reset(self) -> None:
        self._cursor = 0


def save_mask_png(mask: ContentMask, path) -> None:
    from PIL import Image

    Image.fromarray((mask.grid * 255).astype(np.uint8), mode="L").convert("1").save(path)


def mask_to_json(mask: ContentMask) -> list[list[int]]:
    return mask.grid.astype(int).tolist()
