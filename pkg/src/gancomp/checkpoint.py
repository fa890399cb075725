"""Single-file checkpoint container: JSON header + raw little-endian float32 arrays.

Byte layout (see docs/checkpoint_format.md):
    bytes 0..8    header length `n` as little-endian uint64
    bytes 8..8+n  UTF-8 JSON header
    remainder     array payload; each array at header-recorded offset, C-order,
                  little-endian float32
Arrays are laid out in sorted-name order so identical checkpoints are
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch.nn as nn

from .errors import SpecError
from .models import Discriminator, Generator
from .specs import DiscriminatorSpec, GeneratorSpec

FORMAT_VERSION = "gancomp-ckpt-v1"


@dataclass
class ModelCheckpoint:
    kind: str                       # "generator" | "discriminator" | "classifier" | "perceptual"
    spec: dict                      # architecture description, JSON-serializable
    named_parameters: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def generator_spec(self) -> GeneratorSpec:
        if self.kind != "generator":
            raise SpecError(f"checkpoint holds a {self.kind}, not a generator")
        return GeneratorSpec.from_dict(self.spec)

    def discriminator_spec(self) -> DiscriminatorSpec:
        if self.kind != "discriminator":
            raise SpecError(f"checkpoint holds a {self.kind}, not a discriminator")
        return DiscriminatorSpec.from_dict(self.spec)


def checkpoint_from_module(module: nn.Module, kind: str, spec: dict,
                           metadata: dict | None = None) -> ModelCheckpoint:
    params = {name: p.detach().cpu().numpy().astype(np.float32, copy=True)
              for name, p in module.named_parameters()}
    return ModelCheckpoint(kind=kind, spec=spec, named_parameters=params,
                           metadata=dict(metadata or {}))


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    arrays, payload, offset = [], [], 0
    for name in sorted(ckpt.named_parameters):
        arr = np.ascontiguousarray(ckpt.named_parameters[name], dtype="<f4")
        raw = arr.tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                       "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "model_kind": ckpt.kind,
              "spec": ckpt.spec, "metadata": ckpt.metadata, "arrays": arrays}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in payload:
            f.write(raw)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise SpecError(f"unsupported checkpoint format: {header.get('format_version')!r}")
        payload = f.read()
    params = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        params[entry["name"]] = arr
    return ModelCheckpoint(kind=header["model_kind"], spec=header["spec"],
                           named_parameters=params, metadata=header["metadata"])


def _load_into(module: nn.Module, ckpt: ModelCheckpoint) -> None:
    import torch
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.named_parameters.items()}
    missing = set(dict(module.named_parameters())) ^ set(state)
    if missing:
        raise SpecError(f"checkpoint parameters do not match module: {sorted(missing)}")
    for name, p in module.named_parameters():
        if tuple(p.shape) != tuple(state[name].shape):
            raise SpecError(f"parameter {name} shape {tuple(state[name].shape)} "
                            f"does not match module shape {tuple(p.shape)}")
    module.load_state_dict(state)


def generator_from_checkpoint(ckpt: ModelCheckpoint) -> Generator:
    g = Generator(ckpt.generator_spec())
    _load_into(g, ckpt)
    return g


def discriminator_from_checkpoint(ckpt: ModelCheckpoint) -> Discriminator:
    d = Discriminator(ckpt.discriminator_spec())
    _load_into(d, ckpt)
    return d


def save_generator(g: Generator, path, metadata: dict | None = None) -> None:
    save_checkpoint(checkpoint_from_module(g, "generator", g.spec.to_dict(), metadata), path)


def save_discriminator(d: Discriminator, path, metadata: dict | None = None) -> None:
    save_checkpoint(checkpoint_from_module(d, "discriminator", d.spec.to_dict(), metadata), path)


def load_generator(path) -> Generator:
    return generator_from_checkpoint(load_checkpoint(path))


def load_discriminator(path) -> Discriminator:
    return discriminator_from_checkpoint(load_checkpoint(path))
