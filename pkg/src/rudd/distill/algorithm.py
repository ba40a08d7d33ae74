"""Three-phase joint rate-utility distillation.

1. Initialization: every slice fits its latents and networks to randomly
   drawn originals under ``rate + beta * squared error``.
2. Joint optimization: Adam on latents and both networks under
   ``rate + lambda * utility`` with a two-stage lambda.
3. Post-quantization of the networks and entropy coding of the result.

Samples are stored class-major (sample ``i`` has label ``i // spc``) and
slices are consecutive runs of ``slice_size`` samples.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..codec import (
    BitAllocation,
    DatasetBitstream,
    QuantizedDataset,
    SliceNetworks,
    decode_dataset,
    encode_dataset,
)
from ..data import LabeledImageSet
from ..decoder import DecoderConfig, DecoderWeights, decode, init_decoder, post_quantize_decoder
from ..entropy_model import (
    EntropyNetConfig,
    EntropyNetWeights,
    init_entropy_net,
    pyramid_contexts,
    rate_bits_latents,
    search_weight_step,
)
from ..latents import LatentPyramid, quantize_round, relax_ste, relax_uniform_noise, zeros_pyramid
from ..numerics import NonFiniteError, tensor_from_bytes, tensor_to_bytes
from .classifier import (
    ClassifierConfig,
    accuracy,
    classifier_features,
    classifier_logits,
    init_classifier,
    train_classifier,
)
from .losses import ExpertTrajectory, inner_unroll, loss_dm, loss_gm, loss_tm, train_expert

__all__ = [
    "LOSS_KINDS",
    "DistillConfig",
    "DistillState",
    "DistillResult",
    "EvalReport",
    "lambda_schedule",
    "init_state",
    "run_phase1",
    "joint_objective",
    "joint_step",
    "run_phase3",
    "run_algorithm1",
    "decode_images",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]

LOSS_KINDS = ("gm", "tm", "dm")
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class DistillConfig:
    spc: int = 2
    scales: int = 4
    context_length: int = 8
    entropy_width: int = 16
    entropy_depth: int = 2
    decoder: str = "v4-40"
    slice_size: int = 0  # 0: one slice per class
    loss: str = "dm"
    beta: float = 1e6
    lambda_hi: float = 100.0
    lambda_lo: float = 100.0
    init_steps: int = 1000
    init_lr: float = 0.01
    joint_steps: int = 500
    joint_lr: float = 1e-3
    classes_per_step: int = 0  # 0: every class each step
    real_per_class: int = 32
    mse_budget: float = 5e-5
    weight_penalty: float = 1e4
    classifier_blocks: int = 2
    classifier_channels: int = 32
    inner_steps: int = 2  # gm: checkpoints along a synthetic-data trace
    inner_lr: float = 0.01
    expert_steps: int = 30
    expert_lr: float = 0.01
    expert_batch: int = 64
    tm_student_steps: int = 2
    tm_expert_steps: int = 4
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.spc < 1:
            raise ValueError("spc must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.lambda_lo > self.lambda_hi:
            raise ValueError("lambda_lo must not exceed lambda_hi")
        if self.slice_size < 0 or self.classes_per_step < 0:
            raise ValueError("slice_size and classes_per_step must be >= 0")
        if not 0 <= self.tm_student_steps < self.tm_expert_steps <= self.expert_steps:
            raise ValueError("need tm_student_steps < tm_expert_steps <= expert_steps")
        DecoderConfig.preset(self.decoder, self.scales)
        EntropyNetConfig(self.context_length, self.entropy_width, self.entropy_depth)

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def effective_slice_size(self) -> int:
        return self.slice_size or self.spc

    def entropy_config(self) -> EntropyNetConfig:
        return EntropyNetConfig(self.context_length, self.entropy_width, self.entropy_depth)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig.preset(self.decoder, self.scales)

    def fingerprint(self, phase: int) -> str:
        """Hash of the fields that influence phases ``1..phase``."""
        phase1 = {
            "spc", "scales", "context_length", "entropy_width", "entropy_depth", "decoder",
            "slice_size", "beta", "init_steps", "init_lr", "seed", "dtype",
        }
        d = dataclasses.asdict(self)
        if phase == 1:
            d = {k: v for k, v in d.items() if k in phase1}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def lambda_schedule(step: int, total: int, lambda_hi: float, lambda_lo: float) -> float:
    """``lambda_hi`` for the first half of the steps, ``lambda_lo`` after."""
    if lambda_lo > lambda_hi:
        raise ValueError(f"lambda_lo={lambda_lo} exceeds lambda_hi={lambda_hi}")
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    return lambda_hi if step < total / 2 else lambda_lo


@dataclass
class DistillState:
    """Trainable synthetic set: one batched pyramid and network pair per slice."""

    height: int
    width: int
    num_classes: int
    latents: list[LatentPyramid]
    labels: torch.Tensor
    entropy: list[EntropyNetWeights]
    decoders: list[DecoderWeights]
    phase: int = 0  # last completed phase
    seed: int = 0

    def __post_init__(self):
        n = sum(p.batch_shape[0] for p in self.latents)
        if n != len(self.labels):
            raise ValueError(f"{n} latent samples but {len(self.labels)} labels")
        if not len(self.latents) == len(self.entropy) == len(self.decoders):
            raise ValueError("one latent batch, entropy net and decoder per slice")

    @property
    def num_samples(self) -> int:
        return len(self.labels)

    @property
    def slice_offsets(self) -> list[int]:
        return [0] + np.cumsum([p.batch_shape[0] for p in self.latents]).tolist()

    def parameters(self) -> list[torch.Tensor]:
        out = []
        for z, e, d in zip(self.latents, self.entropy, self.decoders):
            out += list(z.grids) + list(e.tensors) + list(d.tensors)
        return out

    def requires_grad_(self, flag: bool = True) -> "DistillState":
        for p in self.parameters():
            p.requires_grad_(flag)
        return self


def init_state(num_classes: int, height: int, width: int, config: DistillConfig) -> DistillState:
    n = num_classes * config.spc
    size = config.effective_slice_size
    gen = torch.Generator().manual_seed(config.seed)
    dt = config.torch_dtype
    latents, ents, decs = [], [], []
    for start in range(0, n, size):
        count = min(size, n - start)
        latents.append(zeros_pyramid(height, width, config.scales, (count,), dt))
        ents.append(init_entropy_net(config.entropy_config(), gen, dt))
        decs.append(init_decoder(config.decoder_config(), gen, dt))
    labels = torch.arange(num_classes).repeat_interleave(config.spc)
    return DistillState(height, width, num_classes, latents, labels, ents, decs, 0, config.seed)


def _check(loss: torch.Tensor, what: str, step: int) -> torch.Tensor:
    if not bool(torch.isfinite(loss)):
        raise NonFiniteError(f"{what} is not finite at step {step}")
    return loss


def _draw_targets(data: LabeledImageSet, labels: torch.Tensor, rng: np.random.Generator) -> np.ndarray:
    """One original per synthetic sample, same class, without replacement where possible."""
    idx = np.empty(len(labels), dtype=np.int64)
    labels = labels.numpy()
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        pool = data.class_indices(int(k))
        replace = len(pool) < len(members)
        idx[members] = rng.choice(pool, size=len(members), replace=replace)
    return idx


def run_phase1(
    state: DistillState,
    data: LabeledImageSet,
    config: DistillConfig,
    targets: np.ndarray | None = None,
    log: Callable[[dict], None] | None = None,
) -> DistillState:
    """Fit every slice to its target originals.

    Per sample the objective is ``rate_bits + beta * ||decoded - target||^2``
    with the squared norm summed over pixels and channels.

    Rate uses uniform-noise latents; the decoder sees rounded latents with a
    straight-through gradient.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    if targets is None:
        targets = _draw_targets(data, state.labels, rng)
    dt = config.torch_dtype
    x_all = torch.as_tensor(data.images[targets], dtype=dt)
    gen = torch.Generator().manual_seed(config.seed + 1)
    offs = state.slice_offsets
    for s in range(len(state.latents)):
        x = x_all[offs[s] : offs[s + 1]]
        z, ent, dec = state.latents[s], state.entropy[s], state.decoders[s]
        params = [p.detach().clone().requires_grad_() for p in list(z.grids) + ent.tensors + dec.tensors]
        nz, ne = len(z.grids), len(ent.tensors)
        opt = torch.optim.Adam(params, lr=config.init_lr)
        for step in range(config.init_steps):
            zs = LatentPyramid(z.height, z.width, params[:nz])
            e = ent.with_tensors(params[nz : nz + ne])
            d = dec.with_tensors(params[nz + ne :])
            rate = rate_bits_latents(zs, e, "noise", gen, per_sample=True).mean()
            err = (decode(relax_ste(zs), d) - x) ** 2
            loss = rate + config.beta * err.sum(dim=(-3, -2, -1)).mean()
            _check(loss, "initialization loss", step)
            mse = err.mean()
            rate, mse = float(rate.detach()), float(mse.detach())
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log is not None and (step % 100 == 0 or step == config.init_steps - 1):
                log({"phase": 1, "slice": s, "step": step, "rate_bits": rate, "mse": mse})
        state.latents[s] = LatentPyramid(z.height, z.width, [p.detach() for p in params[:nz]])
        state.entropy[s] = ent.with_tensors([p.detach() for p in params[nz : nz + ne]])
        state.decoders[s] = dec.with_tensors([p.detach() for p in params[nz + ne :]])
    state.phase = 1
    return state


def _classifier_config(data_shape: tuple[int, int], num_classes: int, config: DistillConfig) -> ClassifierConfig:
    return ClassifierConfig(num_classes, *data_shape, config.classifier_blocks, config.classifier_channels)


def decode_synthetic(
    state: DistillState, slices, relax: str = "ste", generator: torch.Generator | None = None
) -> torch.Tensor:
    """Images of the chosen slices through the relaxed decoder path."""
    out = []
    for s in slices:
        z = state.latents[s]
        if relax == "ste":
            z = relax_ste(z)
        elif relax == "noise":
            z = relax_uniform_noise(z, generator)
        elif relax != "identity":
            raise ValueError(f"unknown relaxation {relax!r}")
        out.append(decode(z, state.decoders[s]))
    return torch.cat(out)


def joint_objective(
    state: DistillState,
    slices,
    utility: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    lam: float,
    generator: torch.Generator | None = None,
    relax: str = "ste",
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """``mean rate per sample + lam * utility(images, labels)`` over ``slices``.

    Returns ``(objective, rate_bits_per_sample, utility)``. Network rates are
    constants here and left out.
    """
    offs = state.slice_offsets
    rates = [
        rate_bits_latents(state.latents[s], state.entropy[s], "noise", generator, per_sample=True)
        for s in slices
    ]
    rate = torch.cat(rates).mean()
    images = decode_synthetic(state, slices, relax, generator)
    labels = torch.cat([state.labels[offs[s] : offs[s + 1]] for s in slices])
    util = utility(images, labels)
    return rate + lam * util, rate, util


class UtilityFactory:
    """Builds the per-step utility closure for a loss kind.

    Each call draws a class-balanced real minibatch and fresh randomness
    (a random extractor for DM, a random init for GM, an expert segment for
    TM) from the step's seed.
    """

    def __init__(self, data: LabeledImageSet, config: DistillConfig):
        self.data = data
        self.config = config
        self.dtype = config.torch_dtype
        self.ccfg = _classifier_config(data.shape, data.num_classes, config)
        self.x = torch.as_tensor(data.images, dtype=self.dtype)
        self.y = torch.as_tensor(data.labels, dtype=torch.long)
        self.forward = lambda p, x: classifier_logits(p, x, self.ccfg)
        self.expert: ExpertTrajectory | None = None
        if config.loss == "tm":
            gen = torch.Generator().manual_seed(config.seed + 7)
            theta0 = init_classifier(self.ccfg, gen, self.dtype)
            self.expert = train_expert(
                self.forward, theta0, self.x, self.y, config.expert_steps, config.expert_lr,
                config.expert_batch, gen,
            )

    def real_batch(self, classes, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        idx = []
        for k in classes:
            pool = self.data.class_indices(int(k))
            m = min(self.config.real_per_class, len(pool))
            idx.append(rng.choice(pool, size=m, replace=False))
        idx = np.concatenate(idx)
        return self.x[idx], self.y[idx]

    def __call__(self, step: int, classes) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
        cfg = self.config
        rng = np.random.Generator(np.random.Philox(key=cfg.seed, counter=[step, 0, 0, 0]))
        gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
        real = self.real_batch(classes, rng)
        if cfg.loss == "dm":
            theta = init_classifier(self.ccfg, gen, self.dtype)
            feats = lambda x: classifier_features(theta, x, self.ccfg)  # noqa: E731
            return lambda xs, ys: loss_dm(feats, real, (xs, ys))
        if cfg.loss == "gm":
            theta0 = init_classifier(self.ccfg, gen, self.dtype)

            def gm(xs, ys):
                trace = inner_unroll(self.forward, theta0, xs.detach(), ys, cfg.inner_steps, cfg.inner_lr)
                return loss_gm(self.forward, real, (xs, ys), trace)

            return gm
        t_max = len(self.expert) - 1 - cfg.tm_expert_steps
        t = int(rng.integers(t_max + 1))
        return lambda xs, ys: loss_tm(
            self.forward, self.expert, (xs, ys), t, cfg.tm_student_steps, cfg.tm_expert_steps, cfg.inner_lr
        )


def _slices_for_classes(state: DistillState, classes) -> list[int]:
    offs = state.slice_offsets
    labels = state.labels.numpy()
    wanted = set(int(k) for k in classes)
    return [s for s in range(len(state.latents)) if wanted & set(labels[offs[s] : offs[s + 1]].tolist())]


def joint_step(
    state: DistillState,
    params: list[torch.Tensor],
    optimizer: torch.optim.Optimizer,
    utilities: UtilityFactory,
    lam: float,
    step: int,
) -> tuple[float, float]:
    """One Adam step of the joint objective on the classes drawn for ``step``.

    ``params`` are the leaf tensors bound into ``state``. Returns the batch's
    rate in bits per sample and its utility loss.
    """
    cfg = utilities.config
    k = state.num_classes
    rng = np.random.Generator(np.random.Philox(key=cfg.seed + 1, counter=[step, 0, 0, 0]))
    if cfg.classes_per_step and cfg.classes_per_step < k:
        classes = np.sort(rng.choice(k, size=cfg.classes_per_step, replace=False))
    else:
        classes = np.arange(k)
    slices = _slices_for_classes(state, classes)
    # every class present in the chosen slices must be in the real batch too
    offs = state.slice_offsets
    classes = np.unique(np.concatenate([state.labels[offs[s] : offs[s + 1]].numpy() for s in slices]))
    gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
    total, rate, util = joint_objective(state, slices, utilities(step, classes), lam, gen)
    _check(total, "joint objective", step)
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return float(rate.detach()), float(util.detach())


def _bind(state: DistillState) -> list[torch.Tensor]:
    """Replace the state's tensors by fresh leaves that require grad."""
    params = []
    for s in range(len(state.latents)):
        z = state.latents[s]
        grids = [g.detach().clone().requires_grad_() for g in z.grids]
        state.latents[s] = LatentPyramid(z.height, z.width, grids)
        state.entropy[s] = state.entropy[s].map(lambda t: t.detach().clone().requires_grad_())
        state.decoders[s] = state.decoders[s].map(lambda t: t.detach().clone().requires_grad_())
        params += grids + state.entropy[s].tensors + state.decoders[s].tensors
    return params


def run_phase2(
    state: DistillState,
    data: LabeledImageSet,
    config: DistillConfig,
    log: Callable[[dict], None] | None = None,
) -> tuple[DistillState, list[dict]]:
    utilities = UtilityFactory(data, config)
    params = _bind(state)
    opt = torch.optim.Adam(params, lr=config.joint_lr)
    rows = []
    for step in range(config.joint_steps):
        lam = lambda_schedule(step, config.joint_steps, config.lambda_hi, config.lambda_lo)
        rate, util = joint_step(state, params, opt, utilities, lam, step)
        row = {"step": step, "rate_bits": rate, "utility": util, "lambda": lam}
        rows.append(row)
        if log is not None and (step % 50 == 0 or step == config.joint_steps - 1):
            log({"phase": 2, **row})
    for s in range(len(state.latents)):
        state.latents[s] = state.latents[s].map(lambda g: g.detach())
        state.entropy[s] = state.entropy[s].detach()
        state.decoders[s] = state.decoders[s].detach()
    state.phase = 2
    return state, rows


@dataclass
class QuantizationReport:
    entropy_steps: list[float]
    decoder_steps: list[float]
    within_budget: list[bool]


def run_phase3(state: DistillState, config: DistillConfig) -> tuple[QuantizedDataset, QuantizationReport]:
    """Round the latents, grid-quantize both networks of every slice."""
    latents = []
    slices = []
    report = QuantizationReport([], [], [])
    for s in range(len(state.latents)):
        q = quantize_round(state.latents[s].map(lambda g: g.detach()))
        latents += q
        probe = state.latents[s].map(lambda g: torch.floor(g.detach() + 0.5))
        dec_q, q_d, ok = post_quantize_decoder(state.decoders[s], probe, config.mse_budget)
        ctx = pyramid_contexts(probe, config.context_length).reshape(-1, config.context_length)
        q_e, ent_q, _ = search_weight_step(state.entropy[s], ctx, config.weight_penalty)
        slices.append(SliceNetworks(ent_q, q_e, dec_q, q_d))
        report.entropy_steps.append(q_e)
        report.decoder_steps.append(q_d)
        report.within_budget.append(ok)
    ds = QuantizedDataset(
        state.num_classes, state.height, state.width, config.scales, config.entropy_config(),
        config.decoder_config(), config.effective_slice_size, latents, state.labels.numpy(), slices,
    )
    return ds, report


# -- checkpoints ---------------------------------------------------------------

_CKPT_MAGIC = b"RUDC"


def save_checkpoint(path, state: DistillState, fingerprint: str) -> None:
    """JSON header plus RUT1 tensors: per slice latent grids, entropy net, decoder."""
    blobs = []
    layout = []
    for z, e, d in zip(state.latents, state.entropy, state.decoders):
        tensors = list(z.grids) + list(e.tensors) + list(d.tensors)
        layout.append(len(tensors))
        blobs += [tensor_to_bytes(t.detach()) for t in tensors]
    header = {
        "phase": state.phase,
        "fingerprint": fingerprint,
        "height": state.height,
        "width": state.width,
        "num_classes": state.num_classes,
        "seed": state.seed,
        "labels": state.labels.tolist(),
        "layout": layout,
        "sizes": [len(b) for b in blobs],
    }
    head = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs))
    tmp.replace(path)


def load_checkpoint(path, config: DistillConfig) -> tuple[DistillState, dict]:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + n])
    pos = 8 + n
    tensors = []
    for size in header["sizes"]:
        tensors.append(torch.as_tensor(tensor_from_bytes(data[pos : pos + size]), dtype=config.torch_dtype))
        pos += size
    template = init_state(header["num_classes"], header["height"], header["width"], config)
    it = iter(tensors)
    for s, count in enumerate(header["layout"]):
        z, e, d = template.latents[s], template.entropy[s], template.decoders[s]
        group = [next(it) for _ in range(count)]
        nz, ne = len(z.grids), len(e.tensors)
        template.latents[s] = LatentPyramid(z.height, z.width, group[:nz])
        template.entropy[s] = e.with_tensors(group[nz : nz + ne])
        template.decoders[s] = d.with_tensors(group[nz + ne :])
    template.labels = torch.tensor(header["labels"], dtype=torch.long)
    template.phase = header["phase"]
    return template, header


# -- driver --------------------------------------------------------------------


@dataclass
class DistillResult:
    stream: DatasetBitstream
    dataset: QuantizedDataset
    state: DistillState
    metrics: list[dict] = field(default_factory=list)
    quantization: QuantizationReport | None = None

    @property
    def allocation(self) -> BitAllocation:
        return self.stream.allocation


def _checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        (n,) = struct.unpack_from("<I", head, 4)
        return json.loads(fh.read(n))


def _checkpoint_usable(path: Path | None, config: DistillConfig, phase: int) -> bool:
    if path is None or not path.exists():
        return False
    try:
        meta = _checkpoint_header(path)
    except ValueError:
        return False
    return meta.get("fingerprint") == config.fingerprint(phase) and meta.get("phase") == phase


def run_algorithm1(
    config: DistillConfig,
    data: LabeledImageSet,
    checkpoint_dir=None,
    log: Callable[[dict], None] | None = None,
) -> DistillResult:
    """Run all three phases; completed phases are reloaded from ``checkpoint_dir``."""
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)
    paths = {p: (ckdir / f"phase{p}.ckpt" if ckdir else None) for p in (1, 2)}
    metrics_path = ckdir / "phase2_metrics.json" if ckdir else None

    if _checkpoint_usable(paths[2], config, 2) and metrics_path.exists():
        state, _ = load_checkpoint(paths[2], config)
        rows = json.loads(metrics_path.read_text())
    else:
        if _checkpoint_usable(paths[1], config, 1):
            state, _ = load_checkpoint(paths[1], config)
        else:
            state = init_state(data.num_classes, *data.shape, config)
            state = run_phase1(state, data, config, log=log)
            if paths[1] is not None:
                save_checkpoint(paths[1], state, config.fingerprint(1))
        state, rows = run_phase2(state, data, config, log=log)
        if paths[2] is not None:
            save_checkpoint(paths[2], state, config.fingerprint(2))
            metrics_path.write_text(json.dumps(rows))
    ds, report = run_phase3(state, config)
    stream = encode_dataset(ds)
    state.phase = 3
    return DistillResult(stream, ds, state, rows, report)


# -- evaluation ----------------------------------------------------------------


@torch.no_grad()
def decode_images(ds: QuantizedDataset, dtype=torch.float32) -> tuple[np.ndarray, np.ndarray]:
    """Decoded synthetic images clamped to ``[0, 1]`` and their labels."""
    images = []
    for s, nets in enumerate(ds.slices):
        dec = nets.decoder.to(dtype)
        for i in ds.slice_members(s):
            images.append(decode(ds.latents[i], dec).clamp(0.0, 1.0))
    if not images:
        return np.zeros((0, ds.height, ds.width, 3), np.float32), ds.labels.copy()
    return torch.stack(images).to(torch.float32).numpy(), ds.labels.copy()


@dataclass
class EvalReport:
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def __str__(self) -> str:
        return f"{100 * self.mean:.2f} +- {100 * self.std:.2f} % over {len(self.accuracies)} trials"


def train_and_test(
    train_images,
    train_labels,
    test: LabeledImageSet,
    classifier: ClassifierConfig,
    trials: int = 5,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> EvalReport:
    accs = []
    for trial in range(trials):
        params = train_classifier(train_images, train_labels, classifier, steps, lr, batch_size, seed + trial)
        accs.append(accuracy(params, test.images, test.labels, classifier))
    return EvalReport(accs)


def evaluate(
    stream: DatasetBitstream | bytes,
    test: LabeledImageSet,
    classifier: ClassifierConfig | None = None,
    trials: int = 5,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> EvalReport:
    """Decode the stream, train ``trials`` classifiers on it and test each."""
    data = stream.data if isinstance(stream, DatasetBitstream) else bytes(stream)
    ds, _ = decode_dataset(data)
    if (ds.height, ds.width) != test.shape or ds.num_classes != test.num_classes:
        raise ValueError("test set does not match the stream's image size or class count")
    images, labels = decode_images(ds)
    if classifier is None:
        classifier = ClassifierConfig(ds.num_classes, ds.height, ds.width, 2, 32)
    return train_and_test(images, labels, test, classifier, trials, steps, lr, batch_size, seed)
