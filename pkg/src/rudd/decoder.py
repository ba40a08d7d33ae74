"""Lightweight synthesis network mapping upsampled latents to RGB images.

Layers 1-3 are 1x1 convolutions (L -> D1 -> D2 -> 3, layer 2 dropped when
D2 = 0); layers 4-5 are 3x3, 3 -> 3 convolutions with residual skips.
ReLU follows layers 1-4 (after the residual add on layer 4); the output of
layer 5 is linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .entropy_model import NetWeights, post_quantize_budget, weight_rate_bits
from .latents import LatentPyramid, QuantizedPyramid, upsample_concat
from .numerics import ShapeError, check_finite, conv2d, relu

__all__ = [
    "DECODER_PRESETS",
    "DecoderConfig",
    "DecoderWeights",
    "param_count",
    "init_decoder",
    "decode",
    "decode_upsampled",
    "post_quantize_decoder",
    "decoder_rate_bits",
]

RGB_BIAS_INIT = 0.5

# name -> (D1, D2); D3 is always 3.
DECODER_PRESETS: dict[str, tuple[int, int]] = {
    "v4-40": (40, 0),
    "v4-160": (160, 0),
    "v4-240": (240, 0),
    "v4-480": (480, 0),
    "v4-960": (960, 0),
    "v4-1200": (1200, 0),
    "v5-240": (240, 40),
    "v5-320": (320, 40),
}


@dataclass(frozen=True)
class DecoderConfig:
    d1: int
    d2: int = 0
    latent_channels: int = 6
    d3: int = 3

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 0 or self.latent_channels < 1:
            raise ValueError(f"invalid decoder config {self}")
        if self.d3 != 3:
            raise ValueError("decoder must emit 3 channels")

    @classmethod
    def preset(cls, name: str, latent_channels: int = 6) -> "DecoderConfig":
        try:
            d1, d2 = DECODER_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown decoder preset {name!r}") from None
        return cls(d1, d2, latent_channels)

    @property
    def name(self) -> str:
        for k, v in DECODER_PRESETS.items():
            if v == (self.d1, self.d2):
                return k
        return f"custom-{self.d1}-{self.d2}"

    def layer_shapes(self) -> list[tuple[int, int, int, int]]:
        shapes = [(1, 1, self.latent_channels, self.d1)]
        if self.d2:
            shapes.append((1, 1, self.d1, self.d2))
        shapes.append((1, 1, self.d2 or self.d1, 3))
        shapes += [(3, 3, 3, 3), (3, 3, 3, 3)]
        return shapes


def param_count(config: DecoderConfig) -> int:
    return sum(kh * kw * ci * co + co for kh, kw, ci, co in config.layer_shapes())


@dataclass
class DecoderWeights(NetWeights):
    config: DecoderConfig = DecoderConfig(40)

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(self.tensors) != 2 * len(shapes):
            raise ShapeError(f"expected {2 * len(shapes)} tensors, got {len(self.tensors)}")
        for k, shp in enumerate(shapes):
            w, b = self.tensors[2 * k], self.tensors[2 * k + 1]
            if tuple(w.shape) != shp or tuple(b.shape) != (shp[-1],):
                raise ShapeError(f"layer {k}: got {tuple(w.shape)}, want {shp}")

    @property
    def layers(self) -> list[tuple[torch.Tensor, torch.Tensor]]:
        return list(zip(self.tensors[0::2], self.tensors[1::2]))


def init_decoder(
    config: DecoderConfig,
    generator: torch.Generator | None = None,
    dtype=torch.float32,
    zero: bool = False,
) -> DecoderWeights:
    """Uniform fan-in init (weights and biases) for the 1x1 stack; residual layers start at zero.

    Nonzero biases keep some ReLUs active when the latents start at zero, and
    the RGB layer starts at mid-gray so its three rectified outputs do not die.
    """
    tensors = []
    for k, (kh, kw, ci, co) in enumerate(config.layer_shapes()):
        residual = kh == 3
        if zero or residual:
            w, b = torch.zeros(kh, kw, ci, co, dtype=dtype), torch.zeros(co, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(kh * kw * ci)
            w = (torch.rand(kh, kw, ci, co, generator=generator, dtype=dtype) * 2 - 1) * bound
            b = (torch.rand(co, generator=generator, dtype=dtype) * 2 - 1) * bound
            if co == 3:
                b = torch.full((co,), RGB_BIAS_INIT, dtype=dtype)
        tensors += [w, b]
    return DecoderWeights(tensors, config)


def decode_upsampled(up: torch.Tensor, weights: DecoderWeights) -> torch.Tensor:
    """Run the conv stack on ``(..., H, W, L)``; returns unclamped ``(..., H, W, 3)``."""
    if up.shape[-1] != weights.config.latent_channels:
        raise ShapeError(
            f"input has {up.shape[-1]} channels, decoder expects {weights.config.latent_channels}"
        )
    layers = weights.layers
    h = up
    for w, b in layers[:-2]:
        h = relu(conv2d(h, w, b))
    h = relu(h + conv2d(h, *layers[-2]))
    return check_finite(h + conv2d(h, *layers[-1]), "decoded image")


def decode(pyramid: LatentPyramid | QuantizedPyramid, weights: DecoderWeights) -> torch.Tensor:
    """Synthesize images from a (possibly batched) pyramid."""
    dtype = weights.tensors[0].dtype
    if isinstance(pyramid, QuantizedPyramid):
        pyramid = pyramid.to_tensor(dtype)
    return decode_upsampled(upsample_concat(pyramid), weights)


def post_quantize_decoder(
    weights: DecoderWeights,
    probe: LatentPyramid | QuantizedPyramid,
    mse_budget: float,
    exponents=range(-8, 1),
) -> tuple[DecoderWeights, float, bool]:
    """Coarsest step ``Q_d`` keeping decoded-image MSE within ``mse_budget``.

    Returns ``(quantized weights, Q_d, within_budget)``.
    """
    with torch.no_grad():
        w64 = weights.to(torch.float64)
        if isinstance(probe, LatentPyramid):
            probe = probe.map(lambda g: g.detach().to(torch.float64))
        else:
            probe = probe.to_tensor(torch.float64)
        up = upsample_concat(probe)
        ref = decode_upsampled(up, w64)

        def mse(qw):
            return float(((decode_upsampled(up, qw) - ref) ** 2).mean())

        qw, step, ok = post_quantize_budget(w64, mse, mse_budget, exponents)
    return qw.to(weights.tensors[0].dtype), step, ok


def decoder_rate_bits(weights: DecoderWeights, step: float) -> float:
    return weight_rate_bits(weights, step)
