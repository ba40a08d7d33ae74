"""Small ConvNet classifier written functionally over a flat parameter list.

Each block is a 3x3 same-padded convolution, instance normalization with a
learned affine, ReLU and 2x2 average pooling; a linear head maps the pooled
features to class logits. Images are channels-last ``(N, H, W, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..numerics import NonFiniteError, ShapeError, conv2d, relu

__all__ = [
    "ClassifierConfig",
    "init_classifier",
    "classifier_features",
    "classifier_logits",
    "cross_entropy",
    "train_classifier",
    "accuracy",
]

_NORM_EPS = 1e-5


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    height: int
    width: int
    blocks: int = 2
    channels: int = 128

    def __post_init__(self):
        if self.num_classes < 2 or self.blocks < 0 or self.channels < 1:
            raise ValueError(f"invalid classifier config {self}")
        div = 2**self.blocks
        if self.height % div or self.width % div:
            raise ShapeError(f"{self.height}x{self.width} input not divisible by 2**{self.blocks}")

    @property
    def feature_dim(self) -> int:
        c = self.channels if self.blocks else 3
        return c * (self.height >> self.blocks) * (self.width >> self.blocks)

    def shapes(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []
        cin = 3
        for _ in range(self.blocks):
            c = self.channels
            out += [(3, 3, cin, c), (c,), (c,), (c,)]  # kernel, bias, gain, shift
            cin = c
        out += [(self.feature_dim, self.num_classes), (self.num_classes,)]
        return out


def init_classifier(config: ClassifierConfig, generator: torch.Generator | None = None, dtype=torch.float32):
    params = []
    cin = 3
    for _ in range(config.blocks):
        c = config.channels
        bound = 1.0 / math.sqrt(9 * cin)
        params += [
            (torch.rand(3, 3, cin, c, generator=generator, dtype=dtype) * 2 - 1) * bound,
            torch.zeros(c, dtype=dtype),
            torch.ones(c, dtype=dtype),
            torch.zeros(c, dtype=dtype),
        ]
        cin = c
    bound = 1.0 / math.sqrt(config.feature_dim)
    params += [
        (torch.rand(config.feature_dim, config.num_classes, generator=generator, dtype=dtype) * 2 - 1) * bound,
        torch.zeros(config.num_classes, dtype=dtype),
    ]
    return params


def _instance_norm(x, gain, shift):
    mean = x.mean(dim=(-3, -2), keepdim=True)
    var = x.var(dim=(-3, -2), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + _NORM_EPS) * gain + shift


def _avg_pool(x):
    n, h, w, c = x.shape
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(dim=(2, 4))


def classifier_features(params, images: torch.Tensor, config: ClassifierConfig) -> torch.Tensor:
    """Flattened body output, ``(N, feature_dim)``."""
    if images.shape[-3:] != (config.height, config.width, 3):
        raise ShapeError(f"images {tuple(images.shape)} do not match {config}")
    h = images
    for b in range(config.blocks):
        k, bias, gain, shift = params[4 * b : 4 * b + 4]
        h = _avg_pool(relu(_instance_norm(conv2d(h, k, bias), gain, shift)))
    return h.reshape(h.shape[0], -1)


def classifier_logits(params, images: torch.Tensor, config: ClassifierConfig) -> torch.Tensor:
    w, b = params[-2:]
    return classifier_features(params, images, config) @ w + b


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels)


def train_classifier(
    images,
    labels,
    config: ClassifierConfig,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    dtype=torch.float32,
):
    """Adam on cross-entropy with seeded init and minibatch order."""
    x = torch.as_tensor(np.asarray(images), dtype=dtype)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    params = [p.requires_grad_() for p in init_classifier(config, gen, dtype)]
    opt = torch.optim.Adam(params, lr=lr)
    n = len(y)
    for step in range(steps):
        idx = torch.randint(n, (min(batch_size, n),), generator=gen) if batch_size < n else slice(None)
        loss = cross_entropy(classifier_logits(params, x[idx], config), y[idx])
        if not torch.isfinite(loss):
            raise NonFiniteError(f"classifier training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    return [p.detach() for p in params]


@torch.no_grad()
def accuracy(params, images, labels, config: ClassifierConfig, batch_size: int = 512) -> float:
    dtype = params[0].dtype
    x = torch.as_tensor(np.asarray(images), dtype=dtype)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    correct = 0
    for i in range(0, len(y), batch_size):
        pred = classifier_logits(params, x[i : i + batch_size], config).argmax(-1)
        correct += int((pred == y[i : i + batch_size]).sum())
    return correct / len(y)
