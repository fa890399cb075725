"""Toy generator / discriminator modules with intermediate RGB taps.

Generator blocks: optional 2x nearest upsample, 3x3 conv, additive per-layer
latent injection (a learned latent->channel bias), activation. Tap layers get
a 1x1 conv readout to `output_channels` so intermediate activations can be
compared image-to-image without a depth-matching transform.
"""

from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from .editing import LayeredCode
from .errors import ShapeError, SpecError
from .specs import DiscriminatorSpec, GeneratorSpec


def _activate(x: torch.Tensor, activation: str, slope: float) -> torch.Tensor:
    if activation == "leaky_relu":
        return F.leaky_relu(x, slope)
    if activation == "tanh":
        return torch.tanh(x)
    return x


def _seeded_init(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled normal init, drawn in registration order from one seeded stream."""
    gen = torch.Generator().manual_seed(seed)
    for name, p in module.named_parameters():
        with torch.no_grad():
            if name.endswith("bias"):
                p.zero_()
            else:
                fan_in = p.shape[1] * (p.shape[2] * p.shape[3] if p.dim() == 4 else 1)
                std = (2.0 / fan_in) ** 0.5
                values = torch.randn(p.shape, generator=gen, dtype=torch.float32) * std
                p.copy_(values.to(p.dtype))


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        base = spec.base_resolution
        self.base = nn.Linear(spec.latent_dim, spec.base_channels * base * base)
        self.convs = nn.ModuleList()
        self.injects = nn.ModuleList()
        for layer in spec.layers:
            self.convs.append(nn.Conv2d(layer.in_channels, layer.out_channels,
                                        layer.kernel_size,
                                        padding=layer.kernel_size // 2))
            self.injects.append(nn.Linear(spec.latent_dim, layer.out_channels, bias=False))
        self.taps = nn.ModuleDict({
            str(t): nn.Conv2d(spec.layers[t].out_channels, spec.output_channels, 1)
            for t in sorted(spec.tap_layers)})

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    def _codes(self, z) -> list[torch.Tensor]:
        if isinstance(z, LayeredCode):
            if z.num_layers != self.spec.num_layers:
                raise ShapeError(f"LayeredCode has {z.num_layers} layers, "
                                 f"generator has {self.spec.num_layers}")
            codes = [v.unsqueeze(0) if v.dim() == 1 else v for v in z.per_layer]
        else:
            if z.dim() != 2:
                raise ShapeError(f"latent batch must be 2-D (N, latent_dim), got {tuple(z.shape)}")
            codes = [z] * self.spec.num_layers
        if codes[0].shape[-1] != self.spec.latent_dim:
            raise ShapeError(f"latent dim {codes[0].shape[-1]} != spec {self.spec.latent_dim}")
        return codes

    def forward(self, z, zero_channels: dict[int, list[int]] | None = None,
                with_taps: bool = False, activations: dict | None = None):
        """Map latents to images in [-1, 1].

        zero_channels maps layer index -> channel indices whose post-activation
        maps are forced to zero; this is the ablation reference that channel
        surgery must match. If `activations` is a dict it is filled with every
        layer's post-activation feature map.
        """
        codes = self._codes(z)
        n = codes[0].shape[0]
        base = self.spec.base_resolution
        x = self.base(codes[0]).view(n, self.spec.base_channels, base, base)
        taps: dict[int, torch.Tensor] = {}
        for t, layer in enumerate(self.spec.layers):
            if layer.upsample:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.convs[t](x) + self.injects[t](codes[t]).unsqueeze(-1).unsqueeze(-1)
            x = _activate(x, layer.activation, layer.leaky_slope)
            if zero_channels and t in zero_channels:
                keep_mask = torch.ones(x.shape[1], dtype=x.dtype)
                keep_mask[list(zero_channels[t])] = 0.0
                x = x * keep_mask.view(1, -1, 1, 1)
            if activations is not None:
                activations[t] = x
            if with_taps and t in self.spec.tap_layers:
                taps[t] = self.taps[str(t)](x)
        return (x, taps) if with_taps else x


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.convs = nn.ModuleList()
        for layer in spec.layers:
            self.convs.append(nn.Conv2d(layer.in_channels, layer.out_channels,
                                        layer.kernel_size,
                                        stride=2 if layer.downsample else 1,
                                        padding=layer.kernel_size // 2))
        self.head = nn.Linear(spec.layers[-1].out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"discriminator expects (N, {self.spec.in_channels}, H, W), "
                             f"got {tuple(x.shape)}")
        for conv, layer in zip(self.convs, self.spec.layers):
            x = F.leaky_relu(conv(x), layer.leaky_slope)
        return self.head(x.mean(dim=(2, 3))).squeeze(1)


def build_generator(spec: GeneratorSpec, seed: int) -> Generator:
    """Deterministically initialized generator; same (spec, seed) gives identical parameters."""
    g = Generator(spec)
    _seeded_init(g, seed)
    return g


def build_discriminator(spec: DiscriminatorSpec, seed: int) -> Discriminator:
    d = Discriminator(spec)
    _seeded_init(d, seed)
    return d


def forward_with_taps(generator: Generator, z):
    """Images plus the RGB tap readout of every tap layer."""
    return generator(z, with_taps=True)


def init_student_discriminator(teacher_d: Discriminator) -> Discriminator:
    """Student discriminator with the teacher's architecture and copied parameters.

    The copy is deep: training the student never mutates the teacher.
    """
    if not isinstance(teacher_d, Discriminator):
        raise SpecError("init_student_discriminator expects a Discriminator")
    student = Discriminator(teacher_d.spec)
    student.load_state_dict(copy.deepcopy(teacher_d.state_dict()))
    return student


def sample_latents(n: int, latent_dim: int, seed: int) -> torch.Tensor:
    """Standard-normal latent batch drawn from a dedicated seeded stream."""
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, latent_dim, generator=gen)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
