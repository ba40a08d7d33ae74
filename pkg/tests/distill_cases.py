"""Small float64 distillation problems for finite-difference gradient checks."""

import numpy as np
import torch

from rudd.data import generate_toy
from rudd.decoder import DecoderConfig, decode, init_decoder
from rudd.distill import DistillConfig, init_state, joint_objective
from rudd.distill.algorithm import UtilityFactory, decode_synthetic
from rudd.distill.classifier import init_classifier
from rudd.distill.losses import inner_unroll, loss_gm
from rudd.entropy_model import EntropyNetConfig, init_entropy_net, rate_bits_latents
from rudd.latents import LatentPyramid, pyramid_dims

D = torch.float64
FD_STEP = 1e-6


def tiny_config(loss: str, seed: int = 0, **overrides) -> DistillConfig:
    kw = dict(
        spc=2, scales=2, context_length=4, entropy_width=6, entropy_depth=2, decoder="v4-40",
        loss=loss, init_steps=0, classifier_blocks=1, classifier_channels=4, inner_steps=2,
        inner_lr=0.05, expert_steps=6, expert_lr=0.05, expert_batch=8, tm_student_steps=1,
        tm_expert_steps=2, real_per_class=4, seed=seed, dtype="float64",
    )
    kw.update(overrides)
    return DistillConfig(**kw)


def central_difference(fn, x: torch.Tensor, step: float = FD_STEP) -> torch.Tensor:
    flat = x.detach().reshape(-1).clone()
    out = torch.empty_like(flat)
    for i in range(flat.numel()):
        up, down = flat.clone(), flat.clone()
        up[i] += step
        down[i] -= step
        out[i] = (fn(up.reshape(x.shape)) - fn(down.reshape(x.shape))) / (2 * step)
    return out.reshape(x.shape)


def rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(float(numeric.abs().max()), 1e-8)
    return float((analytic - numeric).abs().max()) / scale


def directional_error(fn, params: list[torch.Tensor], grads: list[torch.Tensor], gen, step=FD_STEP) -> float:
    """Compare ``grad . v`` with a central difference of ``fn`` along a random ``v``."""
    v = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, v))
    f_up = fn([p.detach() + step * d for p, d in zip(params, v)])
    f_dn = fn([p.detach() - step * d for p, d in zip(params, v)])
    numeric = float(f_up - f_dn) / (2 * step)
    return abs(analytic - numeric) / max(abs(numeric), 1e-8)


class JointProblem:
    """Joint objective on a randomized 4x4 state as a function of its tensors."""

    def __init__(self, loss: str, seed: int, lam: float = 3.0):
        self.config = tiny_config(loss, seed)
        self.data = generate_toy(2, 6, 4, 4, seed=seed)
        gen = torch.Generator().manual_seed(seed)
        state = init_state(2, 4, 4, self.config)
        state.latents = [z.map(lambda g: torch.randn(g.shape, generator=gen, dtype=D) * 2) for z in state.latents]
        jitter = lambda t: t + 0.2 * torch.randn(t.shape, generator=gen, dtype=D)  # noqa: E731
        # zero biases would put hidden units exactly on the ReLU kink for all-zero contexts
        state.decoders = [d.map(jitter) for d in state.decoders]
        state.entropy = [e.map(jitter) for e in state.entropy]
        self.state = state
        self.lam = lam
        self.noise_seed = seed + 99
        self.slices = list(range(len(state.latents)))
        factory = UtilityFactory(self.data, self.config)
        if loss == "gm":
            # the trace is a constant of the objective; build it once
            ccfg = factory.ccfg
            theta0 = init_classifier(ccfg, gen, D)
            real = factory.real_batch(range(2), np.random.default_rng(seed))
            with torch.no_grad():
                xs0 = decode_synthetic(state, self.slices, "noise", torch.Generator().manual_seed(self.noise_seed))
            trace = inner_unroll(factory.forward, theta0, xs0, state.labels, self.config.inner_steps, self.config.inner_lr)
            self.utility = lambda xs, ys: loss_gm(factory.forward, real, (xs, ys), trace)
        else:
            self.utility = factory(0, np.arange(2))
        self.counts = []
        for z, e, d in zip(state.latents, state.entropy, state.decoders):
            self.counts.append((len(z.grids), len(e.tensors), len(d.tensors)))

    def tensors(self) -> list[torch.Tensor]:
        out = []
        for z, e, d in zip(self.state.latents, self.state.entropy, self.state.decoders):
            out += list(z.grids) + list(e.tensors) + list(d.tensors)
        return [t.detach() for t in out]

    def latent_indices(self) -> list[int]:
        idx, pos = [], 0
        for nz, ne, nd in self.counts:
            idx += list(range(pos, pos + nz))
            pos += nz + ne + nd
        return idx

    def __call__(self, tensors: list[torch.Tensor]) -> torch.Tensor:
        st = self.state
        it = iter(tensors)
        for s, (nz, ne, nd) in enumerate(self.counts):
            z = st.latents[s]
            st.latents[s] = LatentPyramid(z.height, z.width, [next(it) for _ in range(nz)])
            st.entropy[s] = st.entropy[s].with_tensors([next(it) for _ in range(ne)])
            st.decoders[s] = st.decoders[s].with_tensors([next(it) for _ in range(nd)])
        gen = torch.Generator().manual_seed(self.noise_seed)
        total, _, _ = joint_objective(st, self.slices, self.utility, self.lam, gen, relax="noise")
        return total

    def check(self, seed: int) -> tuple[float, float]:
        """(max relative error on the latent gradient, directional error over all tensors)."""
        base = self.tensors()
        leaves = [t.clone().requires_grad_() for t in base]
        total = self(leaves)
        grads = torch.autograd.grad(total, leaves, allow_unused=True)
        grads = [torch.zeros_like(p) if g is None else g for p, g in zip(leaves, grads)]
        worst = 0.0
        for i in self.latent_indices():
            def f(x, i=i):
                with torch.no_grad():
                    ts = list(base)
                    ts[i] = x
                    return float(self(ts))

            worst = max(worst, rel_error(grads[i], central_difference(f, base[i])))

        def g(ts):
            with torch.no_grad():
                return self(ts)

        direc = directional_error(g, base, grads, torch.Generator().manual_seed(seed))
        self(base)
        return worst, direc


def decode_problem(seed: int, size: int = 8, scales: int = 3) -> tuple[float, float]:
    """Decoder output projected on a random image; FD over latents and a direction over all tensors."""
    gen = torch.Generator().manual_seed(seed)
    dims, _ = pyramid_dims(size, size, scales)
    grids = [torch.randn(h, w, generator=gen, dtype=D) * 2 for h, w in dims]
    dec = init_decoder(DecoderConfig(8, 4, scales), gen, D)
    dec = dec.map(lambda t: t + 0.2 * torch.randn(t.shape, generator=gen, dtype=D))
    proj = torch.randn(size, size, 3, generator=gen, dtype=D)
    ng = len(grids)

    def fn(ts):
        return (decode(LatentPyramid(size, size, list(ts[:ng])), dec.with_tensors(ts[ng:])) * proj).sum()

    return _check_all(fn, grids + list(dec.tensors), range(ng), seed)


def rate_problem(seed: int, size: int = 8, scales: int = 3) -> tuple[float, float]:
    """Noise-relaxed rate with a fixed noise draw."""
    gen = torch.Generator().manual_seed(seed)
    dims, _ = pyramid_dims(size, size, scales)
    grids = [torch.randn(h, w, generator=gen, dtype=D) * 3 for h, w in dims]
    ent = init_entropy_net(EntropyNetConfig(8, 8, 3), gen, D)
    ent = ent.map(lambda t: t + 0.2 * torch.randn(t.shape, generator=gen, dtype=D))
    ng = len(grids)

    def fn(ts):
        noise = torch.Generator().manual_seed(seed + 1)
        return rate_bits_latents(LatentPyramid(size, size, list(ts[:ng])), ent.with_tensors(ts[ng:]), "noise", noise)

    return _check_all(fn, grids + list(ent.tensors), range(ng), seed)


def _check_all(fn, tensors, full_idx, seed) -> tuple[float, float]:
    base = [t.detach() for t in tensors]
    leaves = [t.clone().requires_grad_() for t in base]
    grads = torch.autograd.grad(fn(leaves), leaves)
    worst = 0.0
    for i in full_idx:
        def f(x, i=i):
            with torch.no_grad():
                ts = list(base)
                ts[i] = x
                return float(fn(ts))

        worst = max(worst, rel_error(grads[i], central_difference(f, base[i])))

    def g(ts):
        with torch.no_grad():
            return fn(ts)

    return worst, directional_error(g, base, list(grads), torch.Generator().manual_seed(seed + 5))
