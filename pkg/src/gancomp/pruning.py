"""Channel saliency metrics and uniform per-layer channel selection.

Kernels follow the (n_in, n_out, h, w) indexing convention, so channel i's
outgoing weight block in its consumer layer is the slice W[i]. Scoring a
generator layer t therefore reads layer t+1's kernel for outgoing-weight
metrics and layer t's own kernel for incoming-weight metrics. The output
layer is never scored: its channels are structural.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .content import NoiseConfig, apply_coi_noise
from .errors import PlanError, ShapeError
from .models import Generator, sample_latents

log = logging.getLogger(__name__)

METRICS = ("l1_out", "l1_in", "low_act", "random", "ca_l1_out")


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit sub-seed for a named stream."""
    key = ":".join([str(seed)] + [str(t) for t in tags]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def paper_layout(conv_weight: torch.Tensor) -> torch.Tensor:
    """Torch conv weights are (out, in, h, w); transpose to (in, out, h, w)."""
    if conv_weight.dim() != 4:
        raise ShapeError(f"expected a 4-D conv kernel, got shape {tuple(conv_weight.shape)}")
    return conv_weight.transpose(0, 1)


def l1_out(kernel) -> np.ndarray:
    """score[i] = ||W_i||_1, the l1-norm of channel i's outgoing block (kernel in (in, out, h, w))."""
    w = _as_kernel_array(kernel)
    return np.abs(w).reshape(w.shape[0], -1).sum(axis=1)


def l1_in(kernel) -> np.ndarray:
    """score[i] = l1-norm of the incoming slice producing channel i (kernel in (in, out, h, w))."""
    w = _as_kernel_array(kernel)
    return np.abs(w).transpose(1, 0, 2, 3).reshape(w.shape[1], -1).sum(axis=1)


def _as_kernel_array(kernel) -> np.ndarray:
    arr = kernel.detach().cpu().numpy() if isinstance(kernel, torch.Tensor) else np.asarray(kernel)
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D kernel, got shape {arr.shape}")
    return arr.astype(np.float64)


@dataclass
class ChannelSaliency:
    per_layer: dict[int, np.ndarray]  # prunable layer index -> (out_channels,) scores
    metric: str
    provenance: dict = field(default_factory=dict)

    def validate(self, generator: Generator | None = None) -> None:
        if self.metric not in METRICS:
            raise PlanError(f"unknown saliency metric {self.metric!r}")
        for t, scores in self.per_layer.items():
            if not np.all(np.isfinite(scores)) or np.any(scores < 0):
                raise PlanError(f"layer {t} has non-finite or negative scores")
            if generator is not None:
                expected = generator.spec.layers[t].out_channels
                if len(scores) != expected:
                    raise PlanError(f"layer {t} has {len(scores)} scores, "
                                    f"expected {expected}")

    def to_json(self) -> dict:
        return {"metric": self.metric,
                "per_layer": {str(t): [float(s) for s in scores]
                              for t, scores in sorted(self.per_layer.items())},
                "provenance": self.provenance}

    @classmethod
    def from_json(cls, d: dict) -> "ChannelSaliency":
        per_layer = {int(t): np.asarray(scores, dtype=np.float64)
                     for t, scores in d["per_layer"].items()}
        return cls(per_layer=per_layer, metric=d["metric"],
                   provenance=d.get("provenance", {}))


@dataclass
class PruningPlan:
    remove: dict[int, list[int]]  # layer index -> sorted channel indices to drop
    remove_ratio: float
    source_metric: str

    def validate(self, generator: Generator | None = None) -> None:
        for t, idx in self.remove.items():
            if sorted(set(idx)) != list(idx):
                raise PlanError(f"layer {t}: removal indices must be unique and ascending")
            if generator is not None:
                if t not in generator.spec.prunable_layers():
                    raise PlanError(f"layer {t} is not prunable")
                n = generator.spec.layers[t].out_channels
                if idx and (idx[0] < 0 or idx[-1] >= n):
                    raise PlanError(f"layer {t}: channel index out of range 0..{n - 1}")
                if len(idx) >= n:
                    raise PlanError(f"layer {t}: plan removes all {n} channels")

    def to_json(self) -> dict:
        return {"remove": {str(t): list(map(int, idx))
                           for t, idx in sorted(self.remove.items())},
                "remove_ratio": self.remove_ratio,
                "source_metric": self.source_metric}

    @classmethod
    def from_json(cls, d: dict) -> "PruningPlan":
        return cls(remove={int(t): list(map(int, idx)) for t, idx in d["remove"].items()},
                   remove_ratio=d["remove_ratio"], source_metric=d["source_metric"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "PruningPlan":
        return cls.from_json(json.loads(Path(path).read_text()))


def select_channels(saliency: ChannelSaliency, remove_ratio: float) -> PruningPlan:
    """Remove the floor(ratio * n) lowest-scoring channels per layer; ties drop lower indices first."""
    if not (0.0 <= remove_ratio < 1.0):
        raise PlanError(f"remove_ratio must be in [0, 1), got {remove_ratio}")
    remove = {}
    for t, scores in sorted(saliency.per_layer.items()):
        k = math.floor(remove_ratio * len(scores))
        order = np.argsort(scores, kind="stable")  # stable sort = lower index first on ties
        remove[t] = sorted(int(i) for i in order[:k])
    return PruningPlan(remove=remove, remove_ratio=remove_ratio,
                       source_metric=saliency.metric)


# ---------------------------------------------------------------------------
# generator-level saliency
# ---------------------------------------------------------------------------

def generator_l1_out(generator: Generator) -> ChannelSaliency:
    per_layer = {}
    for t in generator.spec.prunable_layers():
        consumer = paper_layout(generator.convs[t + 1].weight)
        per_layer[t] = l1_out(consumer)
    sal = ChannelSaliency(per_layer=per_layer, metric="l1_out")
    sal.validate(generator)
    return sal


def generator_l1_in(generator: Generator) -> ChannelSaliency:
    per_layer = {}
    for t in generator.spec.prunable_layers():
        own = paper_layout(generator.convs[t].weight)
        per_layer[t] = l1_in(own)
    sal = ChannelSaliency(per_layer=per_layer, metric="l1_in")
    sal.validate(generator)
    return sal


def low_act(generator: Generator, z_samples: torch.Tensor,
            batch_size: int = 64) -> ChannelSaliency:
    """Mean absolute post-activation per channel over samples and spatial positions."""
    if z_samples.dim() != 2 or z_samples.shape[0] < 1:
        raise ShapeError("low_act needs at least one latent sample of shape (S, latent_dim)")
    prunable = generator.spec.prunable_layers()
    sums = {t: None for t in prunable}
    total = 0
    with torch.no_grad():
        for start in range(0, z_samples.shape[0], batch_size):
            z = z_samples[start:start + batch_size]
            acts = _forward_activations(generator, z)
            for t in prunable:
                s = acts[t].abs().mean(dim=(2, 3)).sum(dim=0).double()
                sums[t] = s if sums[t] is None else sums[t] + s
            total += z.shape[0]
    per_layer = {t: (sums[t] / total).numpy() for t in prunable}
    sal = ChannelSaliency(per_layer=per_layer, metric="low_act",
                          provenance={"num_samples": total})
    sal.validate(generator)
    return sal


def _forward_activations(generator: Generator, z) -> dict[int, torch.Tensor]:
    acts: dict[int, torch.Tensor] = {}
    generator(z, activations=acts)
    return acts


def random_saliency(spec, seed: int) -> ChannelSaliency:
    """I.i.d. uniform [0, 1) scores per prunable layer, deterministic in seed."""
    rng = np.random.default_rng(seed)
    per_layer = {t: rng.random(spec.layers[t].out_channels)
                 for t in spec.prunable_layers()}
    return ChannelSaliency(per_layer=per_layer, metric="random",
                           provenance={"seed": seed})


def ca_perturbation_loss(generator: Generator, z: torch.Tensor, masks,
                         noise_cfg: NoiseConfig, noise_seed: int):
    """Per-batch content-aware loss: sum over samples of mean |G(z) - G_N(z)|.

    G_N(z) applies COI-restricted noise to a detached copy of G(z), so the loss
    is a pure perturbation-sensitivity probe: gradients flow only through G(z).
    Returns (loss, noisy_targets).
    """
    images = generator(z)
    targets = apply_coi_noise(images.detach(), masks, noise_cfg, seed=noise_seed)
    loss = (images - targets).abs().mean(dim=(1, 2, 3)).sum()
    return loss, targets


def ca_l1_out(generator: Generator, mask_provider, noise_cfg: NoiseConfig,
              num_samples: int = 256, seed: int = 0,
              batch_size: int = 32) -> ChannelSaliency:
    """Content-aware saliency: l1-norm of the expected kernel gradient of the COI-noise loss.

    For each sampled z: parse a content mask from G(z), noise only the COI
    pixels of a detached copy, backpropagate the l1 difference to every conv
    kernel, and average the signed gradients over samples. Channel i's score is
    the l1-norm of its outgoing slice of that averaged gradient.
    """
    if num_samples < 1:
        raise PlanError("ca_l1_out needs num_samples >= 1")
    spec = generator.spec
    prunable = spec.prunable_layers()
    latent_gen = torch.Generator().manual_seed(derive_seed(seed, "ca-latents"))
    grad_sums = {t: np.zeros(tuple(generator.convs[t].weight.shape), dtype=np.float64)
                 for t in range(spec.num_layers)}
    was_training = generator.training
    req = {n: p.requires_grad for n, p in generator.named_parameters()}
    generator.requires_grad_(True)
    empty_masks = 0
    done, batch_index = 0, 0
    while done < num_samples:
        b = min(batch_size, num_samples - done)
        z = torch.randn(b, spec.latent_dim, generator=latent_gen)
        generator.zero_grad(set_to_none=True)
        with torch.no_grad():
            preview = generator(z)
        masks = mask_provider(preview)
        empty_masks += sum(1 for m in masks if m.is_empty())
        loss, _ = ca_perturbation_loss(generator, z, masks, noise_cfg,
                                       noise_seed=derive_seed(noise_cfg.seed, "noise", batch_index))
        loss.backward()
        for t in range(spec.num_layers):
            g = generator.convs[t].weight.grad
            if g is not None:
                grad_sums[t] += g.detach().numpy().astype(np.float64)
        done += b
        batch_index += 1
    generator.zero_grad(set_to_none=True)
    for n, p in generator.named_parameters():
        p.requires_grad_(req[n])
    generator.train(was_training)
    if empty_masks:
        log.info("ca_l1_out: %d of %d samples had empty masks (zero gradient contribution)",
                 empty_masks, num_samples)
    per_layer = {}
    for t in prunable:
        expected = grad_sums[t + 1] / num_samples       # torch layout (out, in, h, w)
        slices = np.abs(expected).sum(axis=(0, 2, 3))   # l1 over each input slice = W_i
        per_layer[t] = slices
    sal = ChannelSaliency(per_layer=per_layer, metric="ca_l1_out",
                          provenance={"num_samples": num_samples, "seed": seed,
                                      "noise": {"kind": noise_cfg.kind, "p": noise_cfg.p,
                                                "seed": noise_cfg.seed},
                                      "empty_masks": empty_masks})
    sal.validate(generator)
    return sal


def compute_saliency(generator: Generator, metric: str, *, seed: int = 0,
                     mask_provider=None, noise_cfg: NoiseConfig | None = None,
                     num_samples: int = 256) -> ChannelSaliency:
    """Dispatch a saliency metric by name with its standard sampling setup."""
    if metric == "l1_out":
        return generator_l1_out(generator)
    if metric == "l1_in":
        return generator_l1_in(generator)
    if metric == "low_act":
        z = sample_latents(num_samples, generator.spec.latent_dim,
                           derive_seed(seed, "low-act"))
        return low_act(generator, z)
    if metric == "random":
        return random_saliency(generator.spec, seed)
    if metric == "ca_l1_out":
        if mask_provider is None:
            raise PlanError("ca_l1_out needs a mask provider")
        return ca_l1_out(generator, mask_provider, noise_cfg or NoiseConfig(seed=seed),
                         num_samples=num_samples, seed=seed)
    raise PlanError(f"unknown saliency metric {metric!r}")
