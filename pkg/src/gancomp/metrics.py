"""Generation-quality metrics: inception-style score, Fréchet distance, path length, PSNR, FLOPs."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, asdict

import numpy as np
import torch
from scipy.special import xlogy

from .errors import ShapeError, SpecError
from .specs import GeneratorSpec

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0


def inception_score(images: torch.Tensor, extractor, n_splits: int = 10):
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) over splits.

    High confidence plus a diverse marginal label distribution scores high.
    """
    probs = extractor.predict_proba(images)
    if probs.ndim != 2 or len(probs) < n_splits:
        raise ShapeError(f"need at least {n_splits} prediction rows, got {probs.shape}")
    scores = []
    for chunk in np.array_split(probs, n_splits):
        marginal = chunk.mean(axis=0, keepdims=True)
        kl = (xlogy(chunk, chunk) - xlogy(chunk, marginal)).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix via eigendecomposition, eigenvalues clamped at 0."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(features_a: np.ndarray, features_b: np.ndarray, jitter: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term is computed as Tr sqrt(S_a^{1/2} S_b S_a^{1/2}) — the
    symmetrized, numerically stable form of the product square root. Covariances
    get a jitter of `jitter`*I when sample-starved (fewer rows than dimensions).
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("feature sets must be 2-D with a shared dimension")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    if len(a) <= d or len(b) <= d:
        warnings.warn("fewer samples than feature dimensions; covariance is rank-deficient, "
                      "adding jitter", RuntimeWarning, stacklevel=2)
        cov_a = cov_a + jitter * np.eye(d)
        cov_b = cov_b + jitter * np.eye(d)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))


def extract_features(images: torch.Tensor, extractor, batch_size: int = 256) -> np.ndarray:
    return extractor.features(images, batch_size=batch_size)


def slerp(a: torch.Tensor, b: torch.Tensor, t) -> torch.Tensor:
    """Spherical interpolation between latent batches; falls back to lerp for tiny angles."""
    t = torch.as_tensor(t, dtype=a.dtype)
    while t.dim() < a.dim():
        t = t.unsqueeze(-1)
    an = a / a.norm(dim=-1, keepdim=True)
    bn = b / b.norm(dim=-1, keepdim=True)
    cos = (an * bn).sum(dim=-1, keepdim=True).clamp(-1.0, 1.0)
    theta = torch.acos(cos)
    sin = torch.sin(theta)
    tiny = sin.abs() < 1e-6
    sin = torch.where(tiny, torch.ones_like(sin), sin)
    out = (torch.sin((1 - t) * theta) * a + torch.sin(t * theta) * b) / sin
    return torch.where(tiny, (1 - t) * a + t * b, out)


def ppl(generator, metric, num_pairs: int = 1024, epsilon: float = 1e-4,
        batch_size: int = 64, seed: int = 0, t_mode: str = "full") -> float:
    """Perceptual path length: mean metric distance between epsilon-perturbed slerp pairs.

    The 1/epsilon^2 scaling is deliberately dropped; t is sampled uniformly on
    [0, 1) over the full path.
    """
    if t_mode != "full":
        raise ShapeError(f"unsupported t sampling mode {t_mode!r}")
    gen = torch.Generator().manual_seed(seed)
    total, done = 0.0, 0
    latent_dim = generator.latent_dim
    with torch.no_grad():
        while done < num_pairs:
            b = min(batch_size, num_pairs - done)
            z1 = torch.randn(b, latent_dim, generator=gen)
            z2 = torch.randn(b, latent_dim, generator=gen)
            t = torch.rand(b, generator=gen)
            img_a = generator(slerp(z1, z2, t))
            img_b = generator(slerp(z1, z2, t + epsilon))
            d = metric(img_a, img_b)
            total += float(d.double().sum())
            done += b
    return total / num_pairs


def psnr(a, b, data_range: float = 2.0) -> float:
    """10 log10(range^2 / MSE), capped at 99 dB for identical inputs."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(data_range ** 2 / mse))


def flops_estimate(spec: GeneratorSpec) -> int:
    """2 * n_in * n_out * h * w * H_out * W_out summed over the main conv layers."""
    if not spec.layers:
        raise SpecError("cannot estimate FLOPs of an empty spec")
    total = 0
    for layer, res in zip(spec.layers, spec.layer_resolutions()):
        total += 2 * layer.in_channels * layer.out_channels * layer.kernel_size ** 2 * res * res
    return total


def generate_images(generator, n: int, seed: int, batch_size: int = 64) -> torch.Tensor:
    """Seeded sample sheet from the generator prior."""
    gen = torch.Generator().manual_seed(seed)
    out = []
    with torch.no_grad():
        done = 0
        while done < n:
            b = min(batch_size, n - done)
            z = torch.randn(b, generator.latent_dim, generator=gen)
            out.append(generator(z))
            done += b
    return torch.cat(out, dim=0)


@dataclass
class EvalReport:
    fid: float | None = None
    is_mean: float | None = None
    is_std: float | None = None
    ppl: float | None = None
    psnr_mean: float | None = None
    perceptual_mean: float | None = None
    ca_psnr_mean: float | None = None
    ca_perceptual_mean: float | None = None
    flops_estimate: int = 0
    param_count: int = 0
    config: dict | None = None

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if isinstance(value, float) and not np.isfinite(value):
                raise ShapeError(f"metric {name} is not finite: {value}")
        if self.flops_estimate <= 0:
            raise ShapeError("flops_estimate must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))
