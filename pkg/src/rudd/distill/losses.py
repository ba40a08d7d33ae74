"""Utility losses comparing a synthetic set against the original data.

Models are given as ``forward(params, x) -> logits`` over a list of
parameter tensors, so the same code serves the ConvNet and the small
closed-form models used in tests. All three losses are differentiable
with respect to the synthetic images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from ..numerics import NonFiniteError
from .classifier import cross_entropy

__all__ = [
    "Forward",
    "ExpertTrajectory",
    "inner_unroll",
    "param_gradients",
    "loss_gm",
    "loss_tm",
    "loss_dm",
    "train_expert",
]

Params = Sequence[torch.Tensor]
Forward = Callable[[Params, torch.Tensor], torch.Tensor]
LossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class ExpertTrajectory:
    """Parameter snapshots ``snapshots[t]`` after ``t`` SGD steps on the original data."""

    snapshots: list[list[torch.Tensor]]

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, t: int) -> list[torch.Tensor]:
        return self.snapshots[t]


def param_gradients(
    forward: Forward,
    params: Params,
    x: torch.Tensor,
    y: torch.Tensor,
    loss_fn: LossFn = cross_entropy,
    create_graph: bool = False,
    step: int | None = None,
) -> list[torch.Tensor]:
    loss = loss_fn(forward(params, x), y)
    if not torch.isfinite(loss):
        where = f" at step {step}" if step is not None else ""
        raise NonFiniteError(f"inner loss is not finite{where}")
    return list(torch.autograd.grad(loss, list(params), create_graph=create_graph, allow_unused=True))


def _leaves(params: Params) -> list[torch.Tensor]:
    return [p.detach().clone().requires_grad_(True) for p in params]


@torch.enable_grad()
def inner_unroll(
    forward: Forward,
    params0: Params,
    x: torch.Tensor,
    y: torch.Tensor,
    steps: int,
    lr: float,
    create_graph: bool = False,
    loss_fn: LossFn = cross_entropy,
) -> list[list[torch.Tensor]]:
    """Plain SGD on ``(x, y)``; returns the snapshots ``[theta_0, ..., theta_T]``.

    With ``create_graph`` the snapshots stay differentiable with respect to
    ``x`` (and to ``params0`` if it requires grad); otherwise every snapshot
    is a detached leaf.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    theta = list(params0) if create_graph else [p.detach() for p in params0]
    if create_graph and not any(p.requires_grad for p in theta):
        theta = _leaves(theta)
    trace = [theta]
    for t in range(steps):
        cur = theta if create_graph else _leaves(theta)
        grads = param_gradients(forward, cur, x, y, loss_fn, create_graph, step=t)
        theta = [p - lr * (g if g is not None else 0.0) for p, g in zip(cur, grads)]
        if not create_graph:
            theta = [p.detach() for p in theta]
        trace.append(theta)
    return trace


def _flat(tensors) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for t in tensors])


@torch.enable_grad()
def loss_gm(
    forward: Forward,
    real: tuple[torch.Tensor, torch.Tensor],
    synthetic: tuple[torch.Tensor, torch.Tensor],
    trace: Sequence[Params],
    loss_fn: LossFn = cross_entropy,
) -> torch.Tensor:
    """Sum over checkpoints of squared L2 distances between real and synthetic gradients."""
    if len(trace) == 0:
        raise ValueError("empty parameter trace")
    total = 0.0
    for t, theta in enumerate(trace):
        leaves = _leaves(theta)
        g_real = param_gradients(forward, leaves, *real, loss_fn, step=t)
        g_syn = param_gradients(forward, leaves, *synthetic, loss_fn, create_graph=True, step=t)
        g_real = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(leaves, g_real)]
        g_syn = [torch.zeros_like(p) if g is None else g for p, g in zip(leaves, g_syn)]
        total = total + ((_flat(g_real) - _flat(g_syn)) ** 2).sum()
    return total


@torch.enable_grad()
def loss_tm(
    forward: Forward,
    expert: ExpertTrajectory,
    synthetic: tuple[torch.Tensor, torch.Tensor],
    t: int,
    t1: int,
    t2: int,
    lr: float,
    loss_fn: LossFn = cross_entropy,
) -> torch.Tensor:
    """Normalized distance between the student after ``t1`` synthetic steps and ``expert[t + t2]``."""
    if t < 0 or t + t2 >= len(expert):
        raise ValueError(f"expert segment {t}..{t + t2} outside 0..{len(expert) - 1}")
    if not 0 <= t1 < t2:
        raise ValueError("need 0 <= t1 < t2")
    start = [p.detach() for p in expert[t]]
    target = _flat(expert[t + t2]).detach()
    denom = ((target - _flat(start)) ** 2).sum()
    if denom <= 0:
        raise ValueError(f"degenerate expert segment {t}..{t + t2}: zero displacement")
    student = inner_unroll(forward, _leaves(start), *synthetic, t1, lr, create_graph=True, loss_fn=loss_fn)[-1]
    return ((target - _flat(student)) ** 2).sum() / denom


def loss_dm(
    features: Callable[[torch.Tensor], torch.Tensor],
    real: tuple[torch.Tensor, torch.Tensor],
    synthetic: tuple[torch.Tensor, torch.Tensor],
) -> torch.Tensor:
    """Squared distance between class-conditional feature means, summed over classes."""
    (xr, yr), (xs, ys) = real, synthetic
    classes = torch.unique(torch.cat([yr, ys]))
    fr, fs = features(xr), features(xs)
    total = 0.0
    for k in classes.tolist():
        mr, ms = yr == k, ys == k
        if not mr.any() or not ms.any():
            raise ValueError(f"class {k} has an empty batch on one side")
        diff = fr[mr].mean(dim=0) - fs[ms].mean(dim=0)
        total = total + (diff**2).sum()
    return total


@torch.enable_grad()
def train_expert(
    forward: Forward,
    params0: Params,
    x: torch.Tensor,
    y: torch.Tensor,
    steps: int,
    lr: float,
    batch_size: int,
    generator: torch.Generator | None = None,
    loss_fn: LossFn = cross_entropy,
) -> ExpertTrajectory:
    """Minibatch SGD on the original data, keeping a snapshot after every step."""
    theta = [p.detach() for p in params0]
    snaps = [theta]
    n = len(y)
    for t in range(steps):
        idx = torch.randint(n, (min(batch_size, n),), generator=generator)
        leaves = _leaves(theta)
        grads = param_gradients(forward, leaves, x[idx], y[idx], loss_fn, step=t)
        theta = [(p - lr * (g if g is not None else 0.0)).detach() for p, g in zip(leaves, grads)]
        snaps.append(theta)
    return ExpertTrajectory(snaps)
