"""Acceptance gate: one PASS/FAIL line per criterion, thresholds pinned."""

import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

from codec_cases import FIXTURES, describe, random_dataset
from distill_cases import JointProblem, decode_problem, rate_problem
from rudd.cli import cmd_curve, load_config
from rudd.codec import decode_dataset, encode_dataset, raw_bpc, soft_label_rate_bound
from rudd.codec.rangecoder import LaplaceModel, range_decode, range_encode
from rudd.data import generate_toy
from rudd.decoder import DecoderConfig, decode, init_decoder, param_count, post_quantize_decoder
from rudd.distill import DistillConfig, init_state, run_phase1
from rudd.distill.algorithm import run_phase3, train_and_test
from rudd.entropy_model import (
    EntropyNetConfig,
    discrete_laplace_prob,
    extract_contexts,
    init_entropy_net,
    predict_params,
    quantize_weights,
)
from rudd.latents import LatentPyramid, QuantizedPyramid, quantize_round

D = torch.float64
DESK = Path(__file__).parent.parent / "configs" / "desk.cfg"

DECODER_TABLE = {
    "v4-40": 571, "v4-160": 1771, "v4-240": 2571, "v4-480": 4971,
    "v4-960": 9771, "v4-1200": 12171, "v5-240": 11611, "v5-320": 15371,
}
SOFT_BOUND_TARGET, SOFT_BOUND_TOL = 15456, 2
CODER_SLACK_BITS, CODER_SLACK_FRACTION = 32, 1e-3
FD_TOLERANCE, FD_INSTANCES = 1e-3, 30
OVERFIT_MSE = 1e-3
LAMBDA_MID, LAMBDA_GRID = 10.0, (2.5, 10.0, 40.0)
UTILITY_FRACTION, BPC_FRACTION = 0.8, 0.25


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str, seconds: float):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'} ({seconds:.1f}s): {detail}")

    return emit


def test_criterion_01_decoder_param_counts(report):
    t = time.perf_counter()
    got = {name: param_count(DecoderConfig.preset(name)) for name in DECODER_TABLE}
    ok = got == DECODER_TABLE
    report(1, ok, f"decoder parameter counts {list(got.values())}", time.perf_counter() - t)
    assert ok


def test_criterion_02_soft_label_bound(report):
    t = time.perf_counter()
    bits = soft_label_rate_bound(1000, 2.0**-24)
    ok = abs(bits - SOFT_BOUND_TARGET) <= SOFT_BOUND_TOL
    report(2, ok, f"soft-label bound K=1000 eps=2^-24: {bits:.2f} bits", time.perf_counter() - t)
    assert ok


def test_criterion_03_raw_baseline(report):
    t = time.perf_counter()
    bits = raw_bpc(128, 128, bit_depth=32)
    ok = bits == 192 * 1024 * 8
    report(3, ok, f"raw 128x128x3 float32 image: {bits} bits = {bits / 8 / 1024:g} KiB per class", time.perf_counter() - t)
    assert ok


def random_state_dataset(seed: int):
    """A randomized distillation state pushed through post-quantization."""
    rng = np.random.default_rng(seed)
    k, spc = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    size = int(rng.choice([8, 16, 32]))
    scales = int(rng.integers(1, 5))
    cfg = DistillConfig(
        spc=spc, scales=scales, context_length=int(rng.choice([4, 8])), entropy_width=8,
        slice_size=int(rng.integers(1, k * spc + 1)), decoder=str(rng.choice(["v4-40", "v4-160"])),
        seed=seed, dtype="float64", mse_budget=1e-3,
    )
    gen = torch.Generator().manual_seed(seed)
    st = init_state(k, size, size, cfg)
    scale = float(rng.uniform(0.5, 6.0))
    st.latents = [z.map(lambda g: torch.randn(g.shape, generator=gen, dtype=D) * scale) for z in st.latents]
    st.entropy = [e.map(lambda t: t + 0.3 * torch.randn(t.shape, generator=gen, dtype=D)) for e in st.entropy]
    st.decoders = [d.map(lambda t: t + 0.3 * torch.randn(t.shape, generator=gen, dtype=D)) for d in st.decoders]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # tight budgets on random nets may be unreachable
        ds, _ = run_phase3(st, cfg)
    return ds


def test_criterion_04_lossless_round_trip(report):
    t = time.perf_counter()
    mismatches = []
    for seed in range(200):
        ds = random_state_dataset(seed)
        back, _ = decode_dataset(encode_dataset(ds).data, dtype=D)
        same = describe(back) == describe(ds) and np.array_equal(back.labels, ds.labels)
        same = same and all(
            np.array_equal(a.entropy.flat(), b.entropy.flat()) and np.array_equal(a.decoder.flat(), b.decoder.flat())
            for a, b in zip(ds.slices, back.slices)
        )
        if not same:
            mismatches.append(seed)
    elapsed = time.perf_counter() - t
    ok = not mismatches and elapsed < 120
    report(4, ok, f"200 randomized states round-trip, mismatches {mismatches}", elapsed)
    assert ok


def test_criterion_05_coder_near_optimal(report):
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = -math.inf
    failures = 0
    for _ in range(10):
        mu, b = float(rng.uniform(-20, 20)), float(rng.uniform(0.2, 30))
        symbols = np.rint(rng.laplace(mu, b, size=100_000)).astype(int)
        model = LaplaceModel(mu, b)
        data = range_encode(symbols.tolist(), lambda i, h: model)
        ce = float(-np.log2(discrete_laplace_prob(torch.tensor(symbols, dtype=D), mu, b).numpy()).sum())
        limit = ce * (1 + CODER_SLACK_FRACTION) + CODER_SLACK_BITS
        worst = max(worst, (8 * len(data) - CODER_SLACK_BITS - ce) / ce)
        failures += 8 * len(data) > limit
        assert range_decode(data, lambda i, h: model, len(symbols)) == symbols.tolist()
    elapsed = time.perf_counter() - t
    ok = failures == 0 and elapsed < 60
    report(5, ok, f"10 x 1e5 Laplace symbols, worst (bits - 32) / cross-entropy - 1 = {100 * worst:.3f}% (limit 0.1%)", elapsed)
    assert ok


def test_criterion_06_gradient_suites(report):
    t = time.perf_counter()
    worst = {}
    for name, fn in [
        ("decode", decode_problem),
        ("rate", rate_problem),
        ("gm", lambda s: JointProblem("gm", s).check(s)),
        ("tm", lambda s: JointProblem("tm", s).check(s)),
        ("dm", lambda s: JointProblem("dm", s).check(s)),
    ]:
        worst[name] = max(max(fn(seed)) for seed in range(FD_INSTANCES))
    elapsed = time.perf_counter() - t
    ok = max(worst.values()) <= FD_TOLERANCE and elapsed < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(6, ok, f"worst relative FD error over {FD_INSTANCES} instances each: {detail}", elapsed)
    assert ok


def test_criterion_07_phase1_overfit(report):
    t = time.perf_counter()
    data = generate_toy(4, 10, 16, 16, seed=0)
    cfg = DistillConfig(spc=1, scales=4, beta=1e6, init_steps=3000, seed=0)
    st = run_phase1(init_state(1, 16, 16, cfg), data, cfg, targets=np.array([0]))
    with torch.no_grad():
        image = decode(quantize_round(st.latents[0])[0], st.decoders[0]).clamp(0, 1).numpy()
    mse = float(((image - data.images[0]) ** 2).mean())
    elapsed = time.perf_counter() - t
    ok = mse <= OVERFIT_MSE and elapsed < 120
    report(7, ok, f"one 16x16 image, beta 1e6, 3000 steps: MSE {mse:.2e}", elapsed)
    assert ok


@pytest.fixture(scope="module")
def frontier(tmp_path_factory):
    """Three-point lambda sweep of the desk config plus the train-on-originals baseline."""
    t = time.perf_counter()
    cfg = load_config(DESK)
    rows = cmd_curve(cfg, list(LAMBDA_GRID), tmp_path_factory.mktemp("frontier"))
    train, test = cfg.train_set(), cfg.test_set()
    base = train_and_test(
        train.images, train.labels, test, cfg.classifier(train.num_classes, train.shape),
        cfg.eval_trials, cfg.eval_steps, cfg.eval_lr, cfg.eval_batch, cfg.distill.seed,
    )
    raw = raw_bpc(*train.shape, per_class=cfg.distill.spc)
    return rows, base, raw, time.perf_counter() - t


def test_criterion_08_frontier_shape(report, frontier):
    rows, _, _, elapsed = frontier
    bpcs = [r["bpc"] for r in rows]
    rate_ok = all(a <= b for a, b in zip(bpcs, bpcs[1:]))
    by_rate = sorted(rows, key=lambda r: r["bpc"])
    acc_ok = all(
        hi["mean_acc"] + hi["std_acc"] >= lo["mean_acc"] - lo["std_acc"] for lo, hi in zip(by_rate, by_rate[1:])
    )
    ok = rate_ok and acc_ok and elapsed < 600
    pts = "; ".join(f"lambda {r['lambda']:g}: {r['bpc']:.0f} bpc, {100 * r['mean_acc']:.1f}+-{100 * r['std_acc']:.1f}%" for r in rows)
    report(8, ok, pts, elapsed)
    assert ok


def test_criterion_09_desk_utility(report, frontier):
    rows, base, raw, elapsed = frontier
    mid = next(r for r in rows if r["lambda"] == LAMBDA_MID)
    ok = mid["mean_acc"] >= UTILITY_FRACTION * base.mean and mid["bpc"] <= BPC_FRACTION * raw and elapsed < 600
    report(
        9, ok,
        f"lambda {LAMBDA_MID:g}: accuracy {100 * mid['mean_acc']:.1f}% vs originals {100 * base.mean:.1f}%, "
        f"bpc {mid['bpc']:.0f} vs raw {raw} ({100 * mid['bpc'] / raw:.1f}%)",
        elapsed,
    )
    assert ok


def test_criterion_10_allocation_accounting(report):
    t = time.perf_counter()
    streams = [encode_dataset(random_dataset(s, 2 + s % 4, 1 + s % 3, 8, 8, 3, slice_size=1 + s % 5)) for s in range(40)]
    bad = 0
    for st in streams:
        a = st.allocation
        d = a.to_dict()
        parts = a.explicit_bits + a.implicit_bits + a.label_bits + a.header_bits
        bad += parts != 8 * len(st.data) or not {"explicit_bits", "implicit_bits"} <= d.keys()
    _, alloc = decode_dataset((FIXTURES / "golden.rudd").read_bytes())
    bad += alloc.total_bits != 8 * (FIXTURES / "golden.rudd").stat().st_size
    ok = bad == 0
    report(10, ok, f"explicit + implicit + label + header == file bits on {len(streams) + 1} streams", time.perf_counter() - t)
    assert ok


def test_criterion_11_property_suite(report):
    t = time.perf_counter()
    rng = np.random.default_rng(11)
    gen = torch.Generator().manual_seed(11)
    failures = []
    for i in range(25):
        # causality: perturbing symbols at and after m never moves predictions up to m
        ctx_len = int(rng.choice([4, 8, 16]))
        net = init_entropy_net(EntropyNetConfig(ctx_len, 8, 3), gen, D)
        net = net.map(lambda w: w + 0.3 * torch.randn(w.shape, generator=gen, dtype=D))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        g = torch.tensor(rng.integers(-6, 7, size=(h, w)).astype(float))
        m = int(rng.integers(h * w))
        bumped = g.clone().reshape(-1)
        bumped[m:] += torch.tensor(rng.normal(size=h * w - m) * 5)
        mu0, b0 = predict_params(extract_contexts(g, ctx_len), net)
        mu1, b1 = predict_params(extract_contexts(bumped.reshape(h, w), ctx_len), net)
        if not (torch.equal(mu0[: m + 1], mu1[: m + 1]) and torch.equal(b0[: m + 1], b1[: m + 1])):
            failures.append(f"causality {i}")

        # quantizer idempotence
        pyr = LatentPyramid(h, w, [torch.tensor(rng.normal(size=(h, w)) * 10 ** rng.uniform(-1, 3))])
        q = quantize_round(pyr)
        if quantize_round(q.to_tensor(D)) != q or not isinstance(q, QuantizedPyramid):
            failures.append(f"quantizer {i}")

        # discrete Laplace sums to one without the probability floor
        mu, b = float(rng.uniform(-5, 5)), float(rng.uniform(0.05, 20))
        ks = torch.arange(-3000, 3001, dtype=D)
        if abs(float(discrete_laplace_prob(ks, mu, b).sum()) - 1) > 1e-9:
            failures.append(f"normalization {i}")

        # post-quantization is idempotent at the chosen step
        dec = init_decoder(DecoderConfig(8, 0, 2), gen, D)
        dec = dec.map(lambda w: w + 0.2 * torch.randn(w.shape, generator=gen, dtype=D))
        probe = LatentPyramid(8, 8, [torch.randn(2, 8 >> s, 8 >> s, generator=gen, dtype=D) for s in range(2)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qd, step, _ = post_quantize_decoder(dec, probe, float(10 ** rng.uniform(-6, -2)))
        q_e = float(10 ** rng.uniform(-3, 0))
        qq = quantize_weights(net, q_e)
        if not np.array_equal(quantize_weights(qd, step).flat(), qd.flat()):
            failures.append(f"decoder requantize {i}")
        if not np.allclose(quantize_weights(qq, q_e).flat(), qq.flat(), rtol=0, atol=1e-15):
            failures.append(f"entropy requantize {i}")
    elapsed = time.perf_counter() - t
    ok = not failures and elapsed < 120
    report(11, ok, f"causality, quantizer and post-quantization idempotence, Laplace normalization on 25 instances; failures {failures}", elapsed)
    assert ok
