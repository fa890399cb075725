"""Architecture descriptions for the toy generator / discriminator family.

A generator is a latent->image convolutional stack: a linear base projection
to a `base_resolution` feature grid, followed by conv blocks that optionally
upsample 2x, each with an additive per-layer latent injection and an optional
1x1 RGB tap readout. The final block maps to `output_channels` with tanh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .errors import SpecError

ACTIVATIONS = ("leaky_relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    upsample: bool = False
    activation: str = "leaky_relu"
    leaky_slope: float = 0.2

    def validate(self, name: str = "layer") -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise SpecError(f"{name}: channel counts must be positive, got "
                            f"{self.in_channels}->{self.out_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise SpecError(f"{name}: kernel_size must be odd and positive, got {self.kernel_size}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"{name}: unknown activation {self.activation!r}")


@dataclass(frozen=True)
class GeneratorSpec:
    layers: tuple[LayerSpec, ...]
    latent_dim: int
    output_resolution: int
    output_channels: int = 3
    tap_layers: frozenset[int] = frozenset()
    base_resolution: int = 4

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "tap_layers", frozenset(self.tap_layers))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def base_channels(self) -> int:
        return self.layers[0].in_channels

    def prunable_layers(self) -> tuple[int, ...]:
        """All conv layers except the output layer, whose channels are structural."""
        return tuple(range(self.num_layers - 1))

    def layer_resolutions(self) -> tuple[int, ...]:
        """Spatial resolution of each layer's output feature map."""
        res, out = self.base_resolution, []
        for layer in self.layers:
            if layer.upsample:
                res *= 2
            out.append(res)
        return tuple(out)

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise SpecError(f"latent_dim must be positive, got {self.latent_dim}")
        if not self.layers:
            raise SpecError("generator needs at least one layer")
        for t, layer in enumerate(self.layers):
            layer.validate(f"layer {t}")
        for t in range(self.num_layers - 1):
            a, b = self.layers[t], self.layers[t + 1]
            if a.out_channels != b.in_channels:
                raise SpecError(
                    f"layer {t} out_channels={a.out_channels} does not match "
                    f"layer {t + 1} in_channels={b.in_channels}")
        final = self.layers[-1]
        if final.out_channels != self.output_channels:
            raise SpecError(f"final layer emits {final.out_channels} channels, "
                            f"expected output_channels={self.output_channels}")
        if final.activation != "tanh":
            raise SpecError("final layer activation must be tanh")
        n_up = sum(1 for layer in self.layers if layer.upsample)
        expected = self.base_resolution * 2 ** n_up
        if expected != self.output_resolution:
            raise SpecError(
                f"output_resolution={self.output_resolution} but base {self.base_resolution} "
                f"with {n_up} upsampling layers gives {expected}")
        for t in self.tap_layers:
            if not (0 <= t < self.num_layers):
                raise SpecError(f"tap layer {t} out of range for {self.num_layers} layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(layer) for layer in self.layers]
        d["tap_layers"] = sorted(self.tap_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        layers = tuple(LayerSpec(**ld) for ld in d["layers"])
        return cls(layers=layers, latent_dim=d["latent_dim"],
                   output_resolution=d["output_resolution"],
                   output_channels=d.get("output_channels", 3),
                   tap_layers=frozenset(d.get("tap_layers", ())),
                   base_resolution=d.get("base_resolution", 4))


@dataclass(frozen=True)
class DiscLayerSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    downsample: bool = True
    leaky_slope: float = 0.2

    def validate(self, name: str = "layer") -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise SpecError(f"{name}: channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise SpecError(f"{name}: kernel_size must be odd and positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    layers: tuple[DiscLayerSpec, ...]
    input_resolution: int
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def validate(self) -> None:
        if not self.layers:
            raise SpecError("discriminator needs at least one layer")
        for t, layer in enumerate(self.layers):
            layer.validate(f"dlayer {t}")
        if self.layers[0].in_channels != self.in_channels:
            raise SpecError("first discriminator layer must consume the image channels")
        for t in range(len(self.layers) - 1):
            if self.layers[t].out_channels != self.layers[t + 1].in_channels:
                raise SpecError(f"dlayer {t}/{t + 1} channel mismatch")
        n_down = sum(1 for layer in self.layers if layer.downsample)
        if self.input_resolution % (2 ** n_down) != 0:
            raise SpecError("input_resolution not divisible by total downsampling")

    def to_dict(self) -> dict:
        return {"layers": [asdict(layer) for layer in self.layers],
                "input_resolution": self.input_resolution,
                "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorSpec":
        return cls(layers=tuple(DiscLayerSpec(**ld) for ld in d["layers"]),
                   input_resolution=d["input_resolution"],
                   in_channels=d.get("in_channels", 3))


def make_generator_spec(latent_dim: int, hidden_channels: list[int],
                        output_resolution: int, base_resolution: int = 4,
                        output_channels: int = 3,
                        tap_layers: list[int] | None = None) -> GeneratorSpec:
    """Build a standard spec: upsampling blocks over `hidden_channels`, then a tanh output block.

    The number of upsampling blocks is fixed by log2(output_resolution / base_resolution);
    upsampling is assigned to the earliest hidden layers.
    """
    if output_resolution % base_resolution != 0:
        raise SpecError("output_resolution must be a multiple of base_resolution")
    n_up = int(math.log2(output_resolution // base_resolution))
    if base_resolution * 2 ** n_up != output_resolution:
        raise SpecError("output_resolution / base_resolution must be a power of two")
    if len(hidden_channels) < n_up:
        raise SpecError(f"need at least {n_up} hidden layers to reach "
                        f"{output_resolution}px from {base_resolution}px")
    layers = []
    prev = hidden_channels[0]
    for t, ch in enumerate(hidden_channels):
        layers.append(LayerSpec(in_channels=prev, out_channels=ch, upsample=t < n_up))
        prev = ch
    layers.append(LayerSpec(in_channels=prev, out_channels=output_channels,
                            upsample=False, activation="tanh"))
    if tap_layers is None:
        tap_layers = list(range(len(hidden_channels)))
    spec = GeneratorSpec(layers=tuple(layers), latent_dim=latent_dim,
                         output_resolution=output_resolution,
                         output_channels=output_channels,
                         tap_layers=frozenset(tap_layers),
                         base_resolution=base_resolution)
    spec.validate()
    return spec


def make_discriminator_spec(input_resolution: int, channels: list[int],
                            in_channels: int = 3) -> DiscriminatorSpec:
    """Stride-2 conv stack over `channels`; the head pools globally to one logit."""
    layers, prev = [], in_channels
    for ch in channels:
        layers.append(DiscLayerSpec(in_channels=prev, out_channels=ch, downsample=True))
        prev = ch
    spec = DiscriminatorSpec(layers=tuple(layers), input_resolution=input_resolution,
                             in_channels=in_channels)
    spec.validate()
    return spec
