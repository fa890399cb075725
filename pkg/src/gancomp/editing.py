"""Latent-space editing: per-layer codes, style mixing, morphing, PCA directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError


@dataclass
class LayeredCode:
    """One latent vector per generator layer injection point.

    Entries are tensors of shape (latent_dim,) or (N, latent_dim); all entries
    must share their shape. With all entries equal this is plain z conditioning.
    """

    per_layer: list[torch.Tensor]

    def __post_init__(self):
        if not self.per_layer:
            raise ShapeError("LayeredCode needs at least one layer vector")
        shape = self.per_layer[0].shape
        for i, v in enumerate(self.per_layer):
            if v.shape != shape:
                raise ShapeError(f"layer {i} code shape {tuple(v.shape)} != {tuple(shape)}")

    @classmethod
    def from_flat(cls, z: torch.Tensor, num_layers: int) -> "LayeredCode":
        return cls([z.clone() for _ in range(num_layers)])

    @property
    def num_layers(self) -> int:
        return len(self.per_layer)

    @property
    def latent_dim(self) -> int:
        return self.per_layer[0].shape[-1]

    def clone(self) -> "LayeredCode":
        return LayeredCode([v.clone() for v in self.per_layer])


def style_mix(code_a: LayeredCode, code_b: LayeredCode, l: int) -> LayeredCode:
    """Crossover at layer `l` (1-indexed): layers 1..l-1 from a, layers l..L from b."""
    if code_a.num_layers != code_b.num_layers:
        raise ShapeError("codes have different layer counts")
    L = code_a.num_layers
    if not (1 <= l <= L + 1):
        raise ShapeError(f"crossover layer must be in [1, {L + 1}], got {l}")
    mixed = [code_a.per_layer[t].clone() if t < l - 1 else code_b.per_layer[t].clone()
             for t in range(L)]
    return LayeredCode(mixed)


def morph(code_a: LayeredCode, code_b: LayeredCode, beta: float) -> LayeredCode:
    """Per-layer linear interpolation (1-beta)*a + beta*b."""
    if code_a.num_layers != code_b.num_layers:
        raise ShapeError("codes have different layer counts")
    return LayeredCode([(1.0 - beta) * a + beta * b
                        for a, b in zip(code_a.per_layer, code_b.per_layer)])


def traverse(code: LayeredCode, direction: torch.Tensor,
             sigma_list: list[float]) -> list[LayeredCode]:
    """Offset the code by sigma * direction on every layer, one result per sigma."""
    direction = torch.as_tensor(direction, dtype=code.per_layer[0].dtype)
    if direction.shape[-1] != code.latent_dim:
        raise ShapeError("direction dimension does not match the code's latent_dim")
    return [LayeredCode([v + sigma * direction for v in code.per_layer])
            for sigma in sigma_list]


@dataclass
class DirectionBasis:
    """Orthonormal latent directions sorted by explained variance (descending)."""

    components: np.ndarray        # (k, d), rows are unit vectors
    explained_variance: np.ndarray  # (k,), non-negative, non-increasing

    def validate(self, atol: float = 1e-6) -> None:
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(len(self.components)), atol=atol):
            raise ShapeError("components are not orthonormal")
        ev = self.explained_variance
        if np.any(ev < -atol) or np.any(np.diff(ev) > atol):
            raise ShapeError("explained variances must be non-negative and non-increasing")


def pca_directions(latent_samples, k: int) -> DirectionBasis:
    """Top-k principal components of mean-centered samples.

    Sign convention: the largest-magnitude entry of each component is positive.
    """
    x = np.asarray(latent_samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("latent samples must be a 2-D (n, d) array")
    n, d = x.shape
    if n <= k:
        raise ShapeError(f"need more than k={k} samples, got {n}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    comps = eigvecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    basis = DirectionBasis(components=comps,
                           explained_variance=np.clip(eigvals[order], 0.0, None))
    basis.validate()
    return basis
