"""Latent-space image projection with a quasi-Newton line-search optimizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .content import ContentMask, mask_image
from .errors import ProjectionError, ShapeError
from .metrics import psnr
from .pruning import derive_seed

log = logging.getLogger(__name__)


@dataclass
class ProjectionResult:
    latent: np.ndarray
    projected_image: np.ndarray
    trace: list[float] = field(default_factory=list)  # objective after each iteration
    initial_objective: float = 0.0
    final_objective: float = 0.0
    final_psnr: float = 0.0
    final_perceptual: float = 0.0
    ca_psnr: float | None = None
    ca_perceptual: float | None = None
    restarted: bool = False

    def to_json(self) -> dict:
        return {"trace": self.trace, "initial_objective": self.initial_objective,
                "final_objective": self.final_objective, "final_psnr": self.final_psnr,
                "final_perceptual": self.final_perceptual, "ca_psnr": self.ca_psnr,
                "ca_perceptual": self.ca_perceptual, "restarted": self.restarted}


def mean_latent(generator, n: int = 1000, seed: int = 0) -> torch.Tensor:
    """Mean of n prior samples: the standard projection starting point."""
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, generator.latent_dim, generator=gen).mean(dim=0)


def _objective(generator, z, target, perceptual, l1_weight, per_weight):
    img = generator(z.unsqueeze(0))
    loss = l1_weight * (img - target).abs().mean()
    if perceptual is not None:
        loss = loss + per_weight * perceptual(img, target).mean()
    return loss, img


def project_image(generator, target_image, steps: int = 200, mask_provider=None,
                  perceptual=None, l1_weight: float = 1.0, per_weight: float = 1.0,
                  seed: int = 0, init_samples: int = 1000,
                  history_size: int = 20) -> ProjectionResult:
    """Optimize a latent code so the generator reproduces `target_image`.

    L-BFGS with strong-Wolfe line search, one iteration per trace entry,
    starting from the mean latent. On a non-finite objective the optimization
    restarts once from a random latent, then raises ProjectionError.
    """
    if steps < 1:
        raise ShapeError("projection needs at least one step")
    target = torch.as_tensor(np.asarray(target_image), dtype=torch.float32)
    if target.dim() == 3:
        target = target.unsqueeze(0)
    if target.dim() != 4 or target.shape[0] != 1:
        raise ShapeError("projection targets one image of shape (C, H, W)")

    for attempt in range(2):
        if attempt == 0:
            z0 = mean_latent(generator, init_samples, derive_seed(seed, "proj-init"))
        else:
            gen = torch.Generator().manual_seed(derive_seed(seed, "proj-restart"))
            z0 = torch.randn(generator.latent_dim, generator=gen)
        result = _run_projection(generator, target, z0, steps, perceptual,
                                 l1_weight, per_weight, history_size)
        if result is not None:
            result.restarted = attempt == 1
            break
        log.warning("projection objective went non-finite; restarting from a random latent")
    else:
        raise ProjectionError("projection diverged even after a restart")

    img = result.projected_image
    tgt = target[0].numpy()
    result.final_psnr = psnr(img, tgt)
    if perceptual is not None:
        with torch.no_grad():
            result.final_perceptual = float(perceptual(
                torch.from_numpy(img), torch.from_numpy(tgt)))
    if mask_provider is not None:
        mask = mask_provider(target)[0]
        masked_pair = [mask_image(torch.from_numpy(a), mask).numpy() for a in (img, tgt)]
        result.ca_psnr = psnr(masked_pair[0], masked_pair[1])
        if perceptual is not None:
            with torch.no_grad():
                result.ca_perceptual = float(perceptual(
                    torch.from_numpy(masked_pair[0]), torch.from_numpy(masked_pair[1])))
    return result


def _run_projection(generator, target, z0, steps, perceptual,
                    l1_weight, per_weight, history_size):
    generator.eval()
    generator.requires_grad_(False)
    z = z0.clone().requires_grad_(True)
    with torch.no_grad():
        initial, _ = _objective(generator, z, target, perceptual, l1_weight, per_weight)
    if not torch.isfinite(initial):
        return None
    optimizer = torch.optim.LBFGS([z], max_iter=1, history_size=history_size,
                                  line_search_fn="strong_wolfe")

    def closure():
        optimizer.zero_grad()
        loss, _ = _objective(generator, z, target, perceptual, l1_weight, per_weight)
        loss.backward()
        return loss

    trace = []
    for _ in range(steps):
        optimizer.step(closure)
        with torch.no_grad():
            current, _ = _objective(generator, z, target, perceptual, l1_weight, per_weight)
        if not torch.isfinite(current):
            return None
        trace.append(float(current))
    with torch.no_grad():
        _, img = _objective(generator, z, target, perceptual, l1_weight, per_weight)
    return ProjectionResult(latent=z.detach().numpy().copy(),
                            projected_image=img[0].numpy().copy(),
                            trace=trace, initial_objective=float(initial),
                            final_objective=trace[-1])
