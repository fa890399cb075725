"""Adversarial fine-tuning with teacher-student distillation.

Losses: minmax GAN loss (hinge or nonsaturating), pixel-norm distillation
(output-only or summed over intermediate RGB taps), and a perceptual
distillation term. The combined objective is

    L = L_gan + lambda * L_norm + gamma * L_per

with the content-aware variant measuring both distillation terms on
content-masked images while the GAN loss always sees the unmasked student
output.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch
import torch.nn.functional as F

from .content import mask_image
from .errors import ConfigError, NumericalAbort, ShapeError
from .models import Discriminator, Generator, init_student_discriminator
from .pruning import derive_seed
from .toydata import ToyDataset

log = logging.getLogger(__name__)

FINAL_OUTPUT_KEY = -1  # tap-dict key for the generator's final image

LOSS_COLUMNS = ("step", "l_gan_d", "l_gan_g", "l_norm", "l_per", "total")


@dataclass
class DistillConfig:
    lambda_norm: float = 3.0
    gamma_per: float = 3.0
    norm_mode: str = "output_only"       # output_only | intermediate | off
    perceptual: str = "on"               # on | off
    content_aware: bool = False
    gan_loss: str = "hinge"              # hinge | nonsaturating | off
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas: tuple[float, float] = (0.0, 0.99)
    total_steps: int = 2000
    batch_size: int = 16
    d_every: int = 1                     # one discriminator step per d_every generator steps
    checkpoint_interval: int = 0         # 0 = only at the end
    seed: int = 0

    def validate(self) -> None:
        if self.lambda_norm < 0 or self.gamma_per < 0:
            raise ConfigError("distillation weights must be non-negative")
        if self.norm_mode not in ("output_only", "intermediate", "off"):
            raise ConfigError(f"unknown norm_mode {self.norm_mode!r}")
        if self.perceptual not in ("on", "off"):
            raise ConfigError(f"perceptual must be on/off, got {self.perceptual!r}")
        if self.gan_loss not in ("hinge", "nonsaturating", "off"):
            raise ConfigError(f"unknown gan_loss {self.gan_loss!r}")
        norm_active = self.norm_mode != "off" and self.lambda_norm > 0
        per_active = self.perceptual == "on" and self.gamma_per > 0
        if self.gan_loss == "off" and not (norm_active or per_active):
            raise ConfigError("at least one of the GAN loss or a distillation loss must be active")
        if self.total_steps < 0 or self.batch_size < 1 or self.d_every < 1:
            raise ConfigError("invalid schedule")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def kd_norm_output(teacher_imgs: torch.Tensor, student_imgs: torch.Tensor) -> torch.Tensor:
    """Mean l1 distance between teacher and student images."""
    if teacher_imgs.shape != student_imgs.shape:
        raise ShapeError(f"image shape mismatch {tuple(teacher_imgs.shape)} "
                         f"vs {tuple(student_imgs.shape)}")
    return (teacher_imgs - student_imgs).abs().mean()


def kd_norm_intermediate(teacher_taps: dict, student_taps: dict) -> torch.Tensor:
    """Sum over tap layers of the mean l1 distance between RGB tap pairs.

    Callers include the final output under FINAL_OUTPUT_KEY; taps are already
    3-channel so the depth-matching transform is the identity.
    """
    if set(teacher_taps) != set(student_taps):
        raise ShapeError(f"tap layer sets differ: {sorted(teacher_taps)} "
                         f"vs {sorted(student_taps)}")
    total = None
    for t in sorted(teacher_taps):
        term = kd_norm_output(teacher_taps[t], student_taps[t])
        total = term if total is None else total + term
    if total is None:
        raise ShapeError("no tap layers to distill")
    return total


def kd_perceptual(teacher_imgs: torch.Tensor, student_imgs: torch.Tensor,
                  metric) -> torch.Tensor:
    """Mean perceptual distance over the batch."""
    d = metric(teacher_imgs, student_imgs)
    return d.mean() if d.dim() > 0 else d


def content_aware_kd(teacher_imgs: torch.Tensor, student_imgs: torch.Tensor,
                     masks, metric=None):
    """Distillation losses on content-masked image pairs: (norm_loss, per_loss).

    The GAN loss is *not* masked; it is computed elsewhere on the raw student
    images. per_loss is None when no perceptual metric is supplied.
    """
    masked_t = mask_image(teacher_imgs, masks)
    masked_s = mask_image(student_imgs, masks)
    norm_loss = kd_norm_output(masked_t, masked_s)
    per_loss = kd_perceptual(masked_t, masked_s, metric) if metric is not None else None
    return norm_loss, per_loss


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def hinge_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return -fake_logits.mean()


def nonsaturating_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def nonsaturating_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_logits).mean()


def gan_losses(discriminator: Discriminator, real_batch: torch.Tensor,
               fake_batch: torch.Tensor, kind: str = "hinge"):
    """Adversarial losses (loss_d, loss_g); fakes are detached for the discriminator side."""
    real_logits = discriminator(real_batch)
    fake_logits_d = discriminator(fake_batch.detach())
    fake_logits_g = discriminator(fake_batch)
    if kind == "hinge":
        return hinge_d_loss(real_logits, fake_logits_d), hinge_g_loss(fake_logits_g)
    if kind == "nonsaturating":
        return (nonsaturating_d_loss(real_logits, fake_logits_d),
                nonsaturating_g_loss(fake_logits_g))
    raise ConfigError(f"unknown GAN loss kind {kind!r}")


def total_loss(l_gan, l_norm, l_per, cfg: DistillConfig) -> torch.Tensor:
    """L = L_gan + lambda * L_norm + gamma * L_per; inactive terms contribute zero."""
    zero = torch.tensor(0.0)
    total = l_gan if l_gan is not None else zero
    if cfg.norm_mode != "off" and l_norm is not None:
        total = total + cfg.lambda_norm * l_norm
    if cfg.perceptual == "on" and l_per is not None:
        total = total + cfg.gamma_per * l_per
    return total


def write_loss_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOSS_COLUMNS})


def _nan_snapshot(out_dir, step: int, terms: dict, models: dict):
    snapshot = {"step": step,
                "terms": {k: float(v) for k, v in terms.items()},
                "grad_norms": {}}
    for name, model in models.items():
        for pname, p in model.named_parameters():
            if p.grad is not None:
                snapshot["grad_norms"][f"{name}.{pname}"] = float(p.grad.norm())
    if out_dir is None:
        return None, snapshot
    path = Path(out_dir) / f"nan_diagnostic_step{step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    return str(path), snapshot


def _check_finite(terms: dict, step: int, out_dir, models: dict) -> None:
    import math
    if all(math.isfinite(float(v)) for v in terms.values()):
        return
    path, snapshot = _nan_snapshot(out_dir, step, terms, models)
    raise NumericalAbort(f"non-finite loss at step {step}: "
                         f"{ {k: float(v) for k, v in terms.items()} }",
                         snapshot=snapshot, snapshot_path=path)


def train_gan(generator: Generator, discriminator: Discriminator, dataset: ToyDataset,
              steps: int, batch_size: int = 16, lr: float = 2e-4,
              betas=(0.0, 0.99), d_every: int = 1, gan_loss: str = "hinge",
              seed: int = 0, out_dir=None, log_every: int = 200) -> list[dict]:
    """Plain adversarial training (used to produce the full-size teacher)."""
    data_gen = torch.Generator().manual_seed(derive_seed(seed, "data"))
    z_gen = torch.Generator().manual_seed(derive_seed(seed, "latents"))
    opt_g = torch.optim.Adam(generator.parameters(), lr=lr, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=lr, betas=betas)
    d_fn, g_fn = ((hinge_d_loss, hinge_g_loss) if gan_loss == "hinge"
                  else (nonsaturating_d_loss, nonsaturating_g_loss))
    history = []
    for step in range(steps):
        real = dataset.sample_batch(batch_size, data_gen)
        z = torch.randn(batch_size, generator.latent_dim, generator=z_gen)
        fake = generator(z)
        l_d = torch.tensor(0.0)
        if step % d_every == 0:
            l_d = d_fn(discriminator(real), discriminator(fake.detach()))
            opt_d.zero_grad()
            l_d.backward()
            opt_d.step()
        l_g = g_fn(discriminator(fake))
        opt_g.zero_grad()
        l_g.backward()
        opt_g.step()
        terms = {"l_gan_d": l_d, "l_gan_g": l_g}
        _check_finite(terms, step, out_dir, {"G": generator, "D": discriminator})
        history.append({"step": step, "l_gan_d": float(l_d), "l_gan_g": float(l_g),
                        "l_norm": 0.0, "l_per": 0.0, "total": float(l_g)})
        if log_every and step % log_every == 0:
            log.info("train_gan step %d: l_d=%.4f l_g=%.4f", step, float(l_d), float(l_g))
    return history


def distill_loop(teacher_g: Generator, teacher_d: Discriminator | None,
                 student_g: Generator, cfg: DistillConfig, dataset: ToyDataset,
                 mask_provider=None, perceptual=None, out_dir=None,
                 save_fn=None, log_every: int = 200):
    """Fine-tune the pruned student against the frozen teacher.

    The student discriminator is initialized from the teacher's weights. For
    content-aware runs the mask is parsed once per sample from the teacher
    image and reused for the student. Returns (student_g, student_d, history).
    """
    cfg.validate()
    norm_active = cfg.norm_mode != "off" and cfg.lambda_norm > 0
    per_active = cfg.perceptual == "on" and cfg.gamma_per > 0
    if per_active and perceptual is None:
        raise ConfigError("perceptual distillation is on but no metric was supplied")
    if cfg.content_aware and mask_provider is None:
        raise ConfigError("content-aware distillation needs a mask provider")
    if cfg.gan_loss != "off" and teacher_d is None:
        raise ConfigError("adversarial fine-tuning needs the teacher discriminator")

    teacher_g.eval()
    teacher_g.requires_grad_(False)
    student_d = None
    opt_d = None
    if teacher_d is not None:
        teacher_d.eval()
        teacher_d.requires_grad_(False)
        student_d = init_student_discriminator(teacher_d)
        opt_d = torch.optim.Adam(student_d.parameters(), lr=cfg.lr_d, betas=cfg.betas)
    opt_g = torch.optim.Adam(student_g.parameters(), lr=cfg.lr_g, betas=cfg.betas)
    data_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "data"))
    z_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "latents"))
    d_fn, g_fn = ((hinge_d_loss, hinge_g_loss) if cfg.gan_loss == "hinge"
                  else (nonsaturating_d_loss, nonsaturating_g_loss))
    need_taps = cfg.norm_mode == "intermediate"
    history = []
    zero = torch.tensor(0.0)

    for step in range(cfg.total_steps):
        z = torch.randn(cfg.batch_size, student_g.latent_dim, generator=z_gen)
        with torch.no_grad():
            if need_taps:
                t_imgs, t_taps = teacher_g(z, with_taps=True)
            else:
                t_imgs = teacher_g(z)
                t_taps = {}

        # discriminator step on the unmasked student output
        l_d = zero
        if cfg.gan_loss != "off" and step % cfg.d_every == 0:
            real = dataset.sample_batch(cfg.batch_size, data_gen)
            with torch.no_grad():
                fake_for_d = student_g(z)
            l_d = d_fn(student_d(real), student_d(fake_for_d))
            opt_d.zero_grad()
            l_d.backward()
            opt_d.step()

        # generator step: adversarial + distillation terms
        if need_taps:
            s_imgs, s_taps = student_g(z, with_taps=True)
        else:
            s_imgs = student_g(z)
            s_taps = {}
        l_gan_g = g_fn(student_d(s_imgs)) if cfg.gan_loss != "off" else zero

        masks = None
        if cfg.content_aware and (norm_active or per_active):
            masks = mask_provider(t_imgs)

        l_norm = zero
        if norm_active:
            if cfg.norm_mode == "output_only":
                if masks is not None:
                    l_norm, _ = content_aware_kd(t_imgs, s_imgs, masks)
                else:
                    l_norm = kd_norm_output(t_imgs, s_imgs)
            else:
                td = dict(t_taps)
                sd = dict(s_taps)
                if masks is not None:
                    td = {t: _mask_at_resolution(v, masks) for t, v in td.items()}
                    sd = {t: _mask_at_resolution(v, masks) for t, v in sd.items()}
                    td[FINAL_OUTPUT_KEY] = mask_image(t_imgs, masks)
                    sd[FINAL_OUTPUT_KEY] = mask_image(s_imgs, masks)
                else:
                    td[FINAL_OUTPUT_KEY] = t_imgs
                    sd[FINAL_OUTPUT_KEY] = s_imgs
                l_norm = kd_norm_intermediate(td, sd)
        l_per = zero
        if per_active:
            if masks is not None:
                l_per = kd_perceptual(mask_image(t_imgs, masks),
                                      mask_image(s_imgs, masks), perceptual)
            else:
                l_per = kd_perceptual(t_imgs, s_imgs, perceptual)

        l_total = total_loss(l_gan_g, l_norm if norm_active else None,
                             l_per if per_active else None, cfg)
        opt_g.zero_grad()
        l_total.backward()
        opt_g.step()

        terms = {"l_gan_d": l_d, "l_gan_g": l_gan_g, "l_norm": l_norm,
                 "l_per": l_per, "total": l_total}
        _check_finite(terms, step, out_dir,
                      {"G": student_g} | ({"D": student_d} if student_d else {}))
        history.append({"step": step, **{k: float(v) for k, v in terms.items()}})
        if log_every and step % log_every == 0:
            log.info("distill step %d: %s", step,
                     " ".join(f"{k}={float(v):.4f}" for k, v in terms.items()))
        if save_fn and cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
            save_fn(student_g, student_d, step + 1)
    if save_fn:
        save_fn(student_g, student_d, cfg.total_steps)
    return student_g, student_d, history


def _mask_at_resolution(images: torch.Tensor, masks) -> torch.Tensor:
    """Mask tap images whose resolution differs from the mask by nearest-downsampling the mask."""
    import numpy as np

    from .content import ContentMask
    h = images.shape[-1]
    out_masks = []
    for m in masks:
        grid = m.grid
        if grid.shape[0] != h:
            factor = grid.shape[0] // h
            grid = grid[::factor, ::factor]
        out_masks.append(ContentMask(np.ascontiguousarray(grid)))
    return mask_image(images, out_masks)
