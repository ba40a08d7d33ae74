"""Causal-context Laplace entropy model and network-weight quantization.

Each quantized latent is modelled by a Laplace density integrated over its
unit bin. The density's location and scale come from a small MLP fed with
the ``C`` previously coded values of the same scale (raster order, nearest
first). The same discretized-Laplace construction, zero-mean with scale
``std / sqrt(2)``, prices the quantized weights of both networks.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .latents import LatentPyramid, QuantizedPyramid, relax_uniform_noise, _round_half_up
from .numerics import ShapeError, affine, check_finite, relu

__all__ = [
    "B_MIN",
    "P_MIN",
    "PRESET_CONTEXT_LENGTHS",
    "EntropyNetConfig",
    "NetWeights",
    "EntropyNetWeights",
    "init_entropy_net",
    "extract_context",
    "extract_contexts",
    "pyramid_contexts",
    "predict_params",
    "discrete_laplace_log2prob",
    "discrete_laplace_prob",
    "rate_bits_latents",
    "NumpyPredictor",
    "quantize_weights",
    "weight_symbols",
    "weight_prior_scale",
    "weight_rate_bits",
    "step_grid",
    "search_weight_step",
    "post_quantize_budget",
]

B_MIN = 1e-6
P_MIN = 2.0**-16
PRESET_CONTEXT_LENGTHS = (8, 16, 24, 32, 64)
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class EntropyNetConfig:
    context_length: int = 8
    width: int = 16
    depth: int = 2  # number of affine layers, the last one emits (mu, log scale)

    def __post_init__(self):
        if self.context_length < 1 or self.width < 1 or self.depth < 2:
            raise ValueError(f"invalid entropy net config {self}")

    @property
    def is_preset(self) -> bool:
        return self.context_length in PRESET_CONTEXT_LENGTHS

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.context_length] + [self.width] * (self.depth - 1) + [2]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass
class NetWeights:
    """Ordered parameter tensors of a small network."""

    tensors: list[torch.Tensor]

    def parameters(self) -> list[torch.Tensor]:
        return self.tensors

    def with_tensors(self, tensors: Sequence[torch.Tensor]):
        return dataclasses.replace(self, tensors=list(tensors))

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]):
        return self.with_tensors([fn(t) for t in self.tensors])

    def detach(self):
        return self.map(lambda t: t.detach().clone())

    def to(self, dtype):
        return self.map(lambda t: t.to(dtype))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.detach().reshape(-1).double().numpy() for t in self.tensors])

    def from_flat(self, values, dtype=None):
        out, pos = [], 0
        values = np.asarray(values, dtype=np.float64)
        for t in self.tensors:
            n = t.numel()
            out.append(torch.as_tensor(values[pos : pos + n].reshape(t.shape), dtype=dtype or t.dtype))
            pos += n
        if pos != values.size:
            raise ShapeError(f"flat vector has {values.size} values, network has {pos}")
        return self.with_tensors(out)

    @property
    def count(self) -> int:
        return sum(t.numel() for t in self.tensors)


@dataclass
class EntropyNetWeights(NetWeights):
    config: EntropyNetConfig = EntropyNetConfig()

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(self.tensors) != 2 * len(shapes):
            raise ShapeError(f"expected {2 * len(shapes)} tensors, got {len(self.tensors)}")
        for k, (i, o) in enumerate(shapes):
            w, b = self.tensors[2 * k], self.tensors[2 * k + 1]
            if tuple(w.shape) != (i, o) or tuple(b.shape) != (o,):
                raise ShapeError(f"layer {k}: got {tuple(w.shape)}/{tuple(b.shape)}, want {(i, o)}")

    @property
    def layers(self) -> list[tuple[torch.Tensor, torch.Tensor]]:
        return list(zip(self.tensors[0::2], self.tensors[1::2]))


def init_entropy_net(
    config: EntropyNetConfig,
    generator: torch.Generator | None = None,
    dtype=torch.float32,
    zero: bool = False,
) -> EntropyNetWeights:
    tensors = []
    shapes = config.layer_shapes()
    for k, (i, o) in enumerate(shapes):
        if zero:
            w = torch.zeros(i, o, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(i)
            if k == len(shapes) - 1:
                bound *= 0.1
            w = (torch.rand(i, o, generator=generator, dtype=dtype) * 2 - 1) * bound
        tensors += [w, torch.zeros(o, dtype=dtype)]
    return EntropyNetWeights(tensors, config)


def extract_context(grid, position: tuple[int, int], context_length: int) -> np.ndarray:
    """Context of one code: the ``C`` preceding codes in raster order, nearest first.

    Slots before the start of the scale are zero.
    """
    g = np.asarray(grid)
    h, w = g.shape
    r, c = position
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"position {position} outside {h}x{w} grid")
    flat = g.reshape(-1)
    m = r * w + c
    ctx = np.zeros(context_length, dtype=np.float64)
    for k in range(min(context_length, m)):
        ctx[k] = flat[m - 1 - k]
    return ctx


def extract_contexts(grid: torch.Tensor, context_length: int) -> torch.Tensor:
    """Contexts for every code of ``(..., h, w)`` grids as ``(..., h*w, C)``."""
    flat = grid.reshape(*grid.shape[:-2], -1)
    n = flat.shape[-1]
    pad = torch.zeros(*flat.shape[:-1], context_length, dtype=flat.dtype)
    padded = torch.cat([pad, flat], dim=-1)
    windows = padded.unfold(-1, context_length, 1)[..., :n, :]
    return windows.flip(-1)


def pyramid_contexts(pyramid: LatentPyramid, context_length: int) -> torch.Tensor:
    """Per-scale contexts concatenated over scales: ``(..., n_codes, C)``."""
    return torch.cat([extract_contexts(g, context_length) for g in pyramid.grids], dim=-2)


def _net_outputs(context: torch.Tensor, weights: EntropyNetWeights) -> torch.Tensor:
    if context.shape[-1] != weights.config.context_length:
        raise ShapeError(
            f"context length {context.shape[-1]} != {weights.config.context_length}"
        )
    h = context
    layers = weights.layers
    for w, b in layers[:-1]:
        h = relu(affine(h, w, b))
    return affine(h, *layers[-1])


def predict_params(context: torch.Tensor, weights: EntropyNetWeights) -> tuple[torch.Tensor, torch.Tensor]:
    """Laplace location and scale ``(mu, max(exp(out[1]), B_MIN))``."""
    out = check_finite(_net_outputs(context, weights), "entropy network output")
    mu = out[..., 0]
    scale = torch.exp(out[..., 1]).clamp_min(B_MIN)
    return mu, check_finite(scale, "Laplace scale")


def discrete_laplace_log2prob(x, mu, scale, width: float = 1.0) -> torch.Tensor:
    """``log2`` of the Laplace mass on ``[x - width/2, x + width/2]``.

    Written so both branches stay finite; far tails are evaluated in log
    space rather than as a difference of CDFs.
    """
    d = torch.abs(x - mu) / width
    b = scale / width
    # each branch only sees its own domain so the unused one stays finite
    d_tail = torch.clamp(d, min=0.5)
    d_center = torch.clamp(d, max=0.5)
    tail = math.log(0.5) + (0.5 - d_tail) / b + torch.log(-torch.expm1(-1.0 / b))
    center = torch.log(-0.5 * (torch.expm1(-(0.5 - d_center) / b) + torch.expm1(-(0.5 + d_center) / b)))
    return torch.where(d >= 0.5, tail, center) / _LN2


def discrete_laplace_prob(x, mu, scale, width: float = 1.0, floor: bool = False) -> torch.Tensor:
    """Bin probability; ``floor=True`` applies the coding floor ``P_MIN``."""
    p = torch.exp2(discrete_laplace_log2prob(
        torch.as_tensor(x, dtype=torch.float64),
        torch.as_tensor(mu, dtype=torch.float64),
        torch.as_tensor(scale, dtype=torch.float64),
        width,
    ))
    return p.clamp_min(P_MIN) if floor else p


def rate_bits_latents(
    pyramid: LatentPyramid | QuantizedPyramid,
    weights: EntropyNetWeights,
    mode: str = "hard",
    generator: torch.Generator | None = None,
    per_sample: bool = False,
) -> torch.Tensor:
    """Bits to code the pyramid under the context model.

    ``mode``: ``"hard"`` rounds first (gradient reaches the weights only),
    ``"noise"`` adds uniform noise (training proxy), ``"identity"`` uses the
    values as given. Contexts are built from the same values as the symbols.
    """
    if isinstance(pyramid, QuantizedPyramid):
        pyramid = pyramid.to_tensor(weights.tensors[0].dtype)
    if mode == "hard":
        values = pyramid.map(lambda g: _round_half_up(g.detach()))
    elif mode == "noise":
        values = relax_uniform_noise(pyramid, generator)
    elif mode == "identity":
        values = pyramid
    else:
        raise ValueError(f"unknown rate mode {mode!r}")
    ctx = pyramid_contexts(values, weights.config.context_length)
    mu, scale = predict_params(ctx, weights)
    bits = -discrete_laplace_log2prob(values.flat(), mu, scale).sum(-1)
    return bits if per_sample else bits.sum()


class NumpyPredictor:
    """Float64 per-context evaluation of an entropy network for the coder.

    Encoder and decoder must call this same code path so both sides derive
    identical probabilities.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]):
        self.layers = [(np.asarray(w, np.float64), np.asarray(b, np.float64)) for w, b in layers]

    @classmethod
    def from_weights(cls, weights: EntropyNetWeights) -> "NumpyPredictor":
        return cls([(w.detach().double().numpy(), b.detach().double().numpy()) for w, b in weights.layers])

    def __call__(self, context: np.ndarray) -> tuple[float, float]:
        h = context
        for w, b in self.layers[:-1]:
            h = np.maximum(h @ w + b, 0.0)
        w, b = self.layers[-1]
        out = h @ w + b
        mu, log_scale = float(out[0]), float(out[1])
        if not (math.isfinite(mu) and math.isfinite(log_scale)):
            raise ArithmeticError("entropy network output is non-finite")
        return mu, max(math.exp(min(log_scale, 700.0)), B_MIN)


def quantize_weights(weights: NetWeights, step: float):
    """Snap every weight to the grid ``round(w / step) * step``."""
    if not step > 0:
        raise ValueError(f"quantization step must be positive, got {step}")
    return weights.map(lambda t: torch.round(t.detach() / step) * step)


def weight_symbols(weights: NetWeights, step: float) -> np.ndarray:
    """Integer grid indices of (already quantized) weights."""
    return np.rint(weights.flat() / step).astype(np.int64)


def weight_prior_scale(symbols: np.ndarray) -> float:
    """Zero-mean Laplace scale ``std / sqrt(2)`` in units of the grid step."""
    if symbols.size == 0:
        return B_MIN
    return max(float(np.std(symbols.astype(np.float64))) / math.sqrt(2.0), B_MIN)


def weight_rate_bits(weights: NetWeights, step: float) -> float:
    """Bits for quantized weights under their discretized zero-mean Laplace prior."""
    sym = weight_symbols(weights, step)
    scale = weight_prior_scale(sym)
    lp = discrete_laplace_log2prob(
        torch.as_tensor(sym, dtype=torch.float64), 0.0, torch.tensor(scale, dtype=torch.float64)
    )
    return float(-lp.sum())


def step_grid(weights: NetWeights, exponents: Sequence[int] = range(-8, 1)) -> list[float]:
    """Candidate steps ``std(w) * 2**k``, coarsest first."""
    sd = float(np.std(weights.flat()))
    if sd == 0.0:
        sd = 1.0
    return [sd * 2.0**k for k in sorted(exponents, reverse=True)]


def search_weight_step(
    weights: EntropyNetWeights,
    probe_contexts: torch.Tensor,
    penalty: float = 1e4,
    exponents: Sequence[int] = range(-8, 1),
) -> tuple[float, EntropyNetWeights, list[tuple[float, float]]]:
    """Pick the step minimising ``weight bits + penalty * MSE`` of the net outputs.

    MSE compares the raw (mu, log scale) outputs before and after
    quantization on ``probe_contexts``. Returns the step, the quantized
    weights and the ``(step, objective)`` table.
    """
    with torch.no_grad():
        w64 = weights.to(torch.float64)
        probe = probe_contexts.to(torch.float64)
        ref = _net_outputs(probe, w64)
        table = []
        best = None
        for q in step_grid(weights, exponents):
            qw = quantize_weights(w64, q)
            mse = float(((_net_outputs(probe, qw) - ref) ** 2).mean())
            obj = weight_rate_bits(qw, q) + penalty * mse
            table.append((q, obj))
            if best is None or obj < best[1]:
                best = (q, obj, qw)
    q, _, qw = best
    return q, qw.to(weights.tensors[0].dtype), table


def post_quantize_budget(
    weights: NetWeights,
    mse_fn: Callable[[NetWeights], float],
    mse_budget: float,
    exponents: Sequence[int] = range(-8, 1),
) -> tuple[NetWeights, float, bool]:
    """Coarsest grid step whose output MSE stays within ``mse_budget``.

    Returns ``(quantized, step, within_budget)``; when no step qualifies the
    finest one is used and ``within_budget`` is False.
    """
    grid = step_grid(weights, exponents)
    for q in grid:
        qw = quantize_weights(weights, q)
        if mse_fn(qw) <= mse_budget:
            return qw, q, True
    q = grid[-1]
    warnings.warn(f"no quantization step met MSE budget {mse_budget}; using finest {q:.3g}")
    return quantize_weights(weights, q), q, False
