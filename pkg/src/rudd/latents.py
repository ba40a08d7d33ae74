"""Multiscale latent pyramids and their quantizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .numerics import ShapeError, upsample_bilinear

__all__ = [
    "LATENT_MIN",
    "LATENT_MAX",
    "pyramid_dims",
    "LatentPyramid",
    "QuantizedPyramid",
    "zeros_pyramid",
    "quantize_round",
    "relax_uniform_noise",
    "relax_ste",
    "upsample_concat",
]

# Coder alphabet bounds for quantized latents.
LATENT_MIN = -(2**15)
LATENT_MAX = 2**15 - 1


def pyramid_dims(height: int, width: int, scales: int) -> tuple[list[tuple[int, int]], int]:
    """Grid sizes ``floor(H / 2**(l-1)) x floor(W / 2**(l-1))`` and total code count."""
    if height < 1 or width < 1 or scales < 1:
        raise ValueError(f"need H, W, L >= 1, got {(height, width, scales)}")
    dims = []
    for level in range(scales):
        h, w = height >> level, width >> level
        if h == 0 or w == 0:
            raise ValueError(
                f"L={scales} too large for {height}x{width}: scale {level + 1} is {h}x{w}"
            )
        dims.append((h, w))
    return dims, sum(h * w for h, w in dims)


@dataclass
class LatentPyramid:
    """Real-valued latent grids for one sample, or a batch sharing leading dims.

    ``grids[l]`` has shape ``(..., h_l, w_l)`` with the finest scale first.
    """

    height: int
    width: int
    grids: list[torch.Tensor]

    def __post_init__(self):
        dims, _ = pyramid_dims(self.height, self.width, len(self.grids))
        lead = self.grids[0].shape[:-2]
        for g, hw in zip(self.grids, dims):
            if tuple(g.shape[-2:]) != hw or g.shape[:-2] != lead:
                raise ShapeError(f"grid {tuple(g.shape)} does not match scale dims {hw}")

    @property
    def scales(self) -> int:
        return len(self.grids)

    @property
    def batch_shape(self) -> torch.Size:
        return self.grids[0].shape[:-2]

    def flat(self) -> torch.Tensor:
        """All codes concatenated in scale order, raster order within a scale."""
        return torch.cat([g.reshape(*self.batch_shape, -1) for g in self.grids], dim=-1)

    def map(self, fn) -> "LatentPyramid":
        return LatentPyramid(self.height, self.width, [fn(g) for g in self.grids])

    def sample(self, i: int) -> "LatentPyramid":
        return LatentPyramid(self.height, self.width, [g[i] for g in self.grids])


@dataclass
class QuantizedPyramid:
    """Integer-valued grids (``int32`` arrays), one sample."""

    height: int
    width: int
    grids: list[np.ndarray]

    def __post_init__(self):
        dims, _ = pyramid_dims(self.height, self.width, len(self.grids))
        for g, hw in zip(self.grids, dims):
            if g.shape != hw:
                raise ShapeError(f"grid {g.shape} does not match scale dims {hw}")

    @property
    def scales(self) -> int:
        return len(self.grids)

    def to_tensor(self, dtype=torch.float32) -> LatentPyramid:
        return LatentPyramid(
            self.height, self.width, [torch.as_tensor(g, dtype=dtype) for g in self.grids]
        )

    def __eq__(self, other):
        if not isinstance(other, QuantizedPyramid):
            return NotImplemented
        return (
            (self.height, self.width, self.scales) == (other.height, other.width, other.scales)
            and all(np.array_equal(a, b) for a, b in zip(self.grids, other.grids))
        )


def zeros_pyramid(height, width, scales, batch=(), dtype=torch.float32) -> LatentPyramid:
    dims, _ = pyramid_dims(height, width, scales)
    return LatentPyramid(height, width, [torch.zeros(*batch, h, w, dtype=dtype) for h, w in dims])


def _round_half_up(x: torch.Tensor) -> torch.Tensor:
    return torch.floor(x + 0.5).clamp(LATENT_MIN, LATENT_MAX)


def quantize_round(pyramid: LatentPyramid) -> QuantizedPyramid | list[QuantizedPyramid]:
    """``floor(z + 1/2)`` elementwise, clamped to the coder range.

    A batched pyramid returns one :class:`QuantizedPyramid` per sample.
    """
    q = [_round_half_up(g.detach()).to(torch.int64).numpy().astype(np.int32) for g in pyramid.grids]
    if pyramid.batch_shape == ():
        return QuantizedPyramid(pyramid.height, pyramid.width, q)
    n = int(np.prod(pyramid.batch_shape))
    flat = [g.reshape(n, *g.shape[-2:]) for g in q]
    return [QuantizedPyramid(pyramid.height, pyramid.width, [g[i] for g in flat]) for i in range(n)]


def relax_uniform_noise(
    pyramid: LatentPyramid,
    generator: torch.Generator | None = None,
    enabled: bool = True,
) -> LatentPyramid:
    """Add i.i.d. ``Uniform[-0.5, 0.5)`` noise; the gradient passes through."""
    if not enabled:
        return pyramid
    return pyramid.map(
        lambda g: g + (torch.rand(g.shape, generator=generator, dtype=g.dtype) - 0.5)
    )


def relax_ste(pyramid: LatentPyramid) -> LatentPyramid:
    """Rounded forward values, identity backward."""
    return pyramid.map(lambda g: g + (_round_half_up(g) - g).detach())


def upsample_concat(pyramid: LatentPyramid | QuantizedPyramid, dtype=None) -> torch.Tensor:
    """Upsample every scale to ``H x W`` and stack them as channels ``(..., H, W, L)``."""
    if isinstance(pyramid, QuantizedPyramid):
        pyramid = pyramid.to_tensor(dtype or torch.float32)
    size = (pyramid.height, pyramid.width)
    return torch.stack([upsample_bilinear(g, size) for g in pyramid.grids], dim=-1)
