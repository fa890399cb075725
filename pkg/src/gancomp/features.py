"""Locally trained feature networks standing in for pretrained scoring models.

A small GAP-headed shape classifier provides class posteriors (inception-score
style), pooled features (Fréchet-distance style), and CAM compatibility. A
second, independently seeded classifier's conv trunk backs the perceptual
metric: unit-normalized feature differences averaged per layer. Both are
trained once and pinned as checkpoints so scores stay comparable across runs.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import (ModelCheckpoint, checkpoint_from_module,
                         load_checkpoint, save_checkpoint, _load_into)
from .errors import SpecError
from .models import _seeded_init
from .toydata import ToyDataset

EXTRACTOR_ASSET = "extractor.ckpt"
PERCEPTUAL_ASSET = "perceptual.ckpt"


class SmallClassifier(nn.Module):
    """3-conv shape classifier with a global-average-pool head.

    feature taps: conv1 (res/2), conv2 (res/4), conv3 (res/4).
    """

    def __init__(self, channels=(32, 64, 64), n_classes=3, in_channels=3, slope=0.2):
        super().__init__()
        c1, c2, c3 = channels
        self.conv1 = nn.Conv2d(in_channels, c1, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(c2, c3, 3, stride=1, padding=1)
        self.fc = nn.Linear(c3, n_classes, bias=False)  # bias-free head keeps CAM exact
        self.slope = slope
        self.channels = tuple(channels)
        self.n_classes = n_classes

    def trunk(self, x: torch.Tensor) -> list[torch.Tensor]:
        h1 = F.leaky_relu(self.conv1(x), self.slope)
        h2 = F.leaky_relu(self.conv2(h1), self.slope)
        h3 = F.leaky_relu(self.conv3(h2), self.slope)
        return [h1, h2, h3]

    def feature_maps(self, x: torch.Tensor) -> torch.Tensor:
        """Final conv feature maps F_k, the CAM input."""
        return self.trunk(x)[-1]

    def class_weights(self) -> torch.Tensor:
        """GAP-head class weights w_k, shape (n_classes, K)."""
        return self.fc.weight.detach()

    def pooled_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.feature_maps(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.pooled_features(x))

    def spec_dict(self) -> dict:
        return {"channels": list(self.channels), "n_classes": self.n_classes}


class FeatureExtractor:
    """Frozen classifier wrapper exposing class posteriors and a pooled feature vector."""

    def __init__(self, classifier: SmallClassifier):
        classifier.eval()
        classifier.requires_grad_(False)
        self.classifier = classifier
        self.feature_dim = classifier.channels[-1]
        self.n_classes = classifier.n_classes

    def predict_proba(self, images: torch.Tensor, batch_size: int = 256) -> np.ndarray:
        out = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                logits = self.classifier(images[start:start + batch_size])
                out.append(F.softmax(logits, dim=1).double().numpy())
        return np.concatenate(out, axis=0)

    def features(self, images: torch.Tensor, batch_size: int = 256) -> np.ndarray:
        out = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                f = self.classifier.pooled_features(images[start:start + batch_size])
                out.append(f.double().numpy())
        return np.concatenate(out, axis=0)

    # CAM pass-throughs so the extractor itself can drive cam_mask
    def feature_maps(self, x):
        return self.classifier.feature_maps(x)

    def class_weights(self):
        return self.classifier.class_weights()


class PerceptualMetric(nn.Module):
    """Feature-space distance: per-layer unit-normalized activations, mean squared difference.

    distance(a, b) = sum_l w_l * mean((norm f_l(a) - norm f_l(b))^2); zero on
    identical inputs, symmetric, non-negative. Differentiable end to end.
    """

    def __init__(self, trunk: SmallClassifier, layer_weights=None):
        super().__init__()
        trunk.eval()
        trunk.requires_grad_(False)
        self.trunk_net = trunk
        n_layers = 3
        w = torch.ones(n_layers) if layer_weights is None else torch.as_tensor(layer_weights)
        self.register_buffer("layer_weights", w.float())

    @staticmethod
    def _unit(f: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
        return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Per-pair distances, shape (N,)."""
        single = a.dim() == 3
        if single:
            a, b = a.unsqueeze(0), b.unsqueeze(0)
        fa = self.trunk_net.trunk(a)
        fb = self.trunk_net.trunk(b)
        d = torch.zeros(a.shape[0], dtype=a.dtype)
        for w, xa, xb in zip(self.layer_weights, fa, fb):
            d = d + w * (self._unit(xa) - self._unit(xb)).pow(2).mean(dim=(1, 2, 3))
        return d[0] if single else d


def train_classifier(dataset: ToyDataset, seed: int, steps: int = 1500,
                     batch_size: int = 64, lr: float = 2e-3,
                     channels=(32, 64, 64), augment_noise: float = 0.05) -> SmallClassifier:
    """Train a shape classifier on the toy corpus; light noise keeps it robust to GAN artifacts."""
    clf = SmallClassifier(channels=channels, n_classes=len(dataset.meta["classes"]))
    _seeded_init(clf, seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    images = torch.from_numpy(dataset.train_images())
    labels = torch.from_numpy(dataset.labels[: len(images)])
    clf.train()
    for _ in range(steps):
        idx = torch.randint(len(images), (batch_size,), generator=gen)
        x, y = images[idx], labels[idx]
        if augment_noise > 0:
            x = x + augment_noise * torch.randn(x.shape, generator=gen)
        loss = F.cross_entropy(clf(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval()
    return clf


def classifier_accuracy(clf: SmallClassifier, dataset: ToyDataset) -> float:
    with torch.no_grad():
        logits = clf(torch.from_numpy(dataset.images))
    return float((logits.argmax(1).numpy() == dataset.labels).mean())


def save_classifier(clf: SmallClassifier, path, kind: str = "classifier",
                    metadata: dict | None = None) -> None:
    save_checkpoint(checkpoint_from_module(clf, kind, clf.spec_dict(), metadata), path)


def classifier_from_checkpoint(ckpt: ModelCheckpoint) -> SmallClassifier:
    if ckpt.kind not in ("classifier", "perceptual"):
        raise SpecError(f"checkpoint holds a {ckpt.kind}, not a classifier")
    clf = SmallClassifier(channels=tuple(ckpt.spec["channels"]),
                          n_classes=ckpt.spec["n_classes"])
    _load_into(clf, ckpt)
    clf.eval()
    return clf


def load_extractor(path) -> FeatureExtractor:
    return FeatureExtractor(classifier_from_checkpoint(load_checkpoint(path)))


def load_perceptual(path) -> PerceptualMetric:
    return PerceptualMetric(classifier_from_checkpoint(load_checkpoint(path)))


def _asset_path(name: str) -> Path:
    return Path(importlib.resources.files("gancomp") / "assets" / name)


def default_extractor() -> FeatureExtractor:
    """The version-pinned extractor shipped with the package."""
    return load_extractor(_asset_path(EXTRACTOR_ASSET))


def default_perceptual() -> PerceptualMetric:
    """The version-pinned perceptual metric shipped with the package."""
    return load_perceptual(_asset_path(PERCEPTUAL_ASSET))
