"""Dense tensor ops, reverse-mode gradients, Adam and the portable tensor file.

Tensors are ``torch.Tensor`` values in channels-last layout (``... x H x W x C``).
Gradients come from ``torch.autograd``; :func:`finite_difference_gradient`
is a forward-only oracle used to validate them.
"""

from __future__ import annotations

import functools
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "check_finite",
    "conv2d",
    "affine",
    "relu",
    "upsample_bilinear",
    "bilinear_matrix",
    "autodiff_gradients",
    "finite_difference_gradient",
    "AdamState",
    "adam_update",
    "set_threads",
    "save_tensor",
    "load_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
]

TENSOR_MAGIC = b"RUT1"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(ArithmeticError):
    """Raised when a forward pass produces NaN or Inf."""


def check_finite(x: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def conv2d(x: torch.Tensor, kernel: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Same-padded 2-D cross-correlation.

    Args:
        x: ``(..., H, W, Cin)``.
        kernel: ``(kh, kw, Cin, Cout)`` with odd ``kh`` and ``kw``.
        bias: ``(Cout,)``.

    Returns:
        ``(..., H, W, Cout)``.
    """
    if kernel.dim() != 4:
        raise ShapeError(f"kernel must be kh x kw x Cin x Cout, got {tuple(kernel.shape)}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {kh}x{kw}")
    if x.dim() < 3 or x.shape[-1] != cin:
        raise ShapeError(f"input {tuple(x.shape)} does not have {cin} channels in last dim")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({cout},)")
    if kh == 1 and kw == 1:
        return x @ kernel[0, 0] + bias
    lead = x.shape[:-3]
    h, w = x.shape[-3], x.shape[-2]
    xb = x.reshape(-1, h, w, cin).permute(0, 3, 1, 2)
    y = F.conv2d(xb, kernel.permute(3, 2, 0, 1), bias, padding=(kh // 2, kw // 2))
    return y.permute(0, 2, 3, 1).reshape(*lead, h, w, cout)


def affine(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """``x @ weight + bias`` over the last dimension."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"affine dims disagree: x {tuple(x.shape)}, weight {tuple(weight.shape)}, "
            f"bias {tuple(bias.shape)}"
        )
    return x @ weight + bias


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch's backward uses (x > 0), i.e. subgradient 0 at the kink.
    return torch.relu(x)


@functools.lru_cache(maxsize=256)
def _bilinear_matrix_np(n_in: int, n_out: int) -> np.ndarray:
    a = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        a[i, i0] += 1.0 - frac
        a[i, i1] += frac
    a.setflags(write=False)
    return a


def bilinear_matrix(n_in: int, n_out: int, dtype=torch.float64) -> torch.Tensor:
    """1-D linear interpolation matrix (``n_out x n_in``), align-corners-false."""
    return torch.tensor(_bilinear_matrix_np(n_in, n_out), dtype=dtype)


def upsample_bilinear(grid: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Separable bilinear upsampling of ``(..., h, w)`` to ``(..., H, W)``."""
    h, w = grid.shape[-2], grid.shape[-1]
    big_h, big_w = target
    if h > big_h or w > big_w:
        raise ShapeError(f"target {target} smaller than source {(h, w)}")
    if (h, w) == (big_h, big_w):
        return grid
    a_h = bilinear_matrix(h, big_h, grid.dtype)
    a_w = bilinear_matrix(w, big_w, grid.dtype)
    return a_h @ grid @ a_w.T


def autodiff_gradients(
    loss: torch.Tensor,
    leaves: Sequence[torch.Tensor],
    create_graph: bool = False,
) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. ``leaves``.

    Leaves the loss does not depend on get a zero gradient.
    """
    if loss.numel() != 1:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    check_finite(loss.detach(), "loss")
    grads = torch.autograd.grad(
        loss.reshape(()), list(leaves), create_graph=create_graph, allow_unused=True
    )
    return [torch.zeros_like(p) if g is None else g for g, p in zip(grads, leaves)]


def finite_difference_gradient(
    fn: Callable[[torch.Tensor], torch.Tensor | float],
    x: torch.Tensor,
    step: float = 1e-4,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x``.

    Only forward evaluations are used. ``indices`` restricts the check to a
    subset of flattened coordinates; the result then has ``len(indices)``
    entries.
    """
    base = x.detach().clone()
    flat = base.reshape(-1)
    idx = range(flat.numel()) if indices is None else indices
    out = np.empty(len(idx))
    with torch.no_grad():
        for k, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + step
            f_plus = float(fn(base))
            flat[i] = orig - step
            f_minus = float(fn(base))
            flat[i] = orig
            out[k] = (f_plus - f_minus) / (2.0 * step)
    return out


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


def adam_update(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[torch.Tensor], AdamState]:
    """One bias-corrected Adam step. Returns fresh leaf tensors and state."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    m = state.m or [torch.zeros_like(p) for p in params]
    v = state.v or [torch.zeros_like(p) for p in params]
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    with torch.no_grad():
        for p, g, mi, vi in zip(params, grads, m, v):
            if p.shape != g.shape:
                raise ShapeError(f"param {tuple(p.shape)} vs grad {tuple(g.shape)}")
            mi = beta1 * mi + (1.0 - beta1) * g
            vi = beta2 * vi + (1.0 - beta2) * g * g
            upd = lr * (mi / c1) / (torch.sqrt(vi / c2) + eps)
            new_params.append((p - upd).detach().requires_grad_(p.requires_grad))
            new_m.append(mi)
            new_v.append(vi)
    return new_params, AdamState(t, new_m, new_v)


def set_threads(n: int | None = None) -> int:
    """Set torch intra-op threads from ``n`` or ``$RUDD_THREADS`` (default 1)."""
    if n is None:
        n = int(os.environ.get("RUDD_THREADS", "1"))
    torch.set_num_threads(max(1, n))
    return torch.get_num_threads()


def tensor_to_bytes(a) -> bytes:
    """Portable tensor encoding: ``RUT1``, u32 rank, u32 dims, f32 LE data."""
    arr = np.asarray(a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else a)
    head = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC:
        raise ValueError("not a RUT1 tensor")
    (rank,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    off = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) != off + 4 * count:
        raise ValueError(f"RUT1 payload has {len(data) - off} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(dims).copy()


def save_tensor(path, a) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(a))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
