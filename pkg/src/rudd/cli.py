"""Command line: ``rudd distill | bpc | eval | curve``.

Configs are plain ``key = value`` text with ``#`` comments. Exit codes are
0 on success, 1 on runtime failure and 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import BitstreamError, bpc, decode_dataset, read_header
from .codec.accounting import raw_bpc
from .data import LabeledImageSet, generate_toy, load_images
from .distill import ClassifierConfig, DistillConfig, decode_images, evaluate, run_algorithm1, train_and_test
from .numerics import set_threads

log = logging.getLogger("rudd")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
REQUIRED_KEYS = ("dataset", "spc", "loss", "lambda_hi", "lambda_lo")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one pipeline run needs: data source, distillation and evaluation settings."""

    dataset: str  # "toy" or a directory of class subdirectories
    distill: DistillConfig
    testset: str | None = None
    classes: int = 4
    per_class: int = 200
    test_per_class: int = 100
    height: int = 16
    width: int = 16
    data_seed: int = 0
    eval_trials: int = 5
    eval_steps: int = 300
    eval_lr: float = 1e-3
    eval_batch: int = 64
    out: str = "out"
    extra: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, distill=dataclasses.replace(self.distill, seed=seed))

    def with_lambda(self, lam: float) -> "RunConfig":
        d = self.distill
        return dataclasses.replace(
            self, distill=dataclasses.replace(d, lambda_lo=lam, lambda_hi=max(d.lambda_hi, lam))
        )

    def train_set(self) -> LabeledImageSet:
        if self.dataset == "toy":
            return generate_toy(self.classes, self.per_class, self.height, self.width, self.data_seed)
        return load_images(self.dataset)

    def test_set(self) -> LabeledImageSet:
        if self.testset:
            return load_images(self.testset)
        if self.dataset == "toy":
            return generate_toy(
                self.classes, self.test_per_class, self.height, self.width, self.data_seed + 1, split="test"
            )
        raise ConfigError("testset is required when dataset is a directory")

    def classifier(self, num_classes: int, shape: tuple[int, int]) -> ClassifierConfig:
        return ClassifierConfig(
            num_classes, *shape, self.distill.classifier_blocks, self.distill.classifier_channels
        )


_RUN_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name not in ("distill", "extra")}
_DISTILL_FIELDS = {f.name: f for f in dataclasses.fields(DistillConfig)}


def _convert(kind, raw: str):
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    if "int" in kind and "float" not in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    if "None" in kind and raw.lower() in ("", "none"):
        return None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; errors name the offending line."""
    values: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key not in _RUN_FIELDS and key not in _DISTILL_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {values[key][0]})")
        values[key] = (lineno, raw)
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    run_kw, dist_kw = {}, {}
    for key, (lineno, raw) in values.items():
        target, fields = (run_kw, _RUN_FIELDS) if key in _RUN_FIELDS else (dist_kw, _DISTILL_FIELDS)
        try:
            target[key] = _convert(fields[key].type, raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {raw!r} for {key!r}") from None
    try:
        distill = DistillConfig(**dist_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(distill=distill, **run_kw)
    if cfg.dataset != "toy" and not Path(cfg.dataset).is_dir():
        raise ConfigError(f"dataset {cfg.dataset!r} is neither 'toy' nor a directory")
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# -- commands ------------------------------------------------------------------


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "rate_bits", "utility", "lambda"])
        for r in rows:
            w.writerow([r["step"], f"{r['rate_bits']:.6g}", f"{r['utility']:.6g}", f"{r['lambda']:.6g}"])


def cmd_distill(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.train_set()
    result = run_algorithm1(cfg.distill, data, checkpoint_dir=out / "checkpoints", log=lambda r: log.info("%s", r))
    (out / "distilled.rudd").write_bytes(result.stream.data)
    _write_metrics(out / "metrics.csv", result.metrics)
    alloc = result.allocation.to_dict(data.num_classes)
    alloc["raw_bpc"] = raw_bpc(*data.shape, per_class=cfg.distill.spc)
    alloc["decoder_within_budget"] = all(result.quantization.within_budget)
    (out / "allocation.json").write_text(json.dumps(alloc, indent=2) + "\n")
    if not alloc["decoder_within_budget"]:
        log.warning("decoder quantization exceeded the MSE budget on some slices")
    return alloc


def bpc_report(data: bytes) -> dict:
    hdr = read_header(data)
    _, alloc = decode_dataset(data)
    d = alloc.to_dict(hdr["num_classes"])
    d["bpc"] = bpc(data)
    d["file_bytes"] = len(data)
    d["num_samples"] = hdr["num_samples"]
    return d


def _format_bpc(d: dict) -> str:
    total = d["total_bits"]
    lines = [f"bpc: {d['bpc']:.2f} bits/class ({d['file_bytes']} bytes, {d['num_classes']} classes)"]
    for key, name in [
        ("explicit_bits", "explicit (latents)"),
        ("implicit_bits", "implicit (networks)"),
        ("label_bits", "labels"),
        ("header_bits", "header/framing"),
    ]:
        lines.append(f"  {name:<22}{d[key]:>10d} bits  {100 * d[key] / total:6.2f} %")
    return "\n".join(lines)


def cmd_eval(data: bytes, test: LabeledImageSet, cfg: RunConfig | None, trials: int, seed: int) -> dict:
    hdr = read_header(data)
    if cfg is None:
        clf = ClassifierConfig(hdr["num_classes"], hdr["height"], hdr["width"], 2, 32)
        steps, lr, batch = 300, 1e-3, 64
    else:
        clf = cfg.classifier(hdr["num_classes"], (hdr["height"], hdr["width"]))
        steps, lr, batch = cfg.eval_steps, cfg.eval_lr, cfg.eval_batch
    rep = evaluate(data, test, clf, trials, steps, lr, batch, seed)
    return {"mean": rep.mean, "std": rep.std, "accuracies": rep.accuracies, "bpc": bpc(data)}


def _curve_point(args) -> dict:
    cfg, lam, out = args
    point = cfg.with_lambda(lam)
    alloc = cmd_distill(point, out)
    data = (out / "distilled.rudd").read_bytes()
    ev = cmd_eval(data, cfg.test_set(), cfg, cfg.eval_trials, cfg.distill.seed)
    return {"lambda": lam, "bpc": alloc["bpc"], "mean_acc": ev["mean"], "std_acc": ev["std"]}


def shuffled_label_sanity(data: bytes, test: LabeledImageSet, cfg: RunConfig, seed: int = 0) -> dict:
    """Accuracy after training on decoded images with permuted labels (expect chance).

    Each trial draws its own permutation; with few samples a single
    permutation can leave most labels in place.
    """
    ds, _ = decode_dataset(data)
    images, labels = decode_images(ds)
    clf = cfg.classifier(ds.num_classes, (ds.height, ds.width))
    accs = []
    for trial in range(cfg.eval_trials):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[trial, 0, 0, 0]))
        rep = train_and_test(
            images, rng.permutation(labels), test, clf, 1, cfg.eval_steps, cfg.eval_lr, cfg.eval_batch, seed + trial,
        )
        accs += rep.accuracies
    return {
        "kind": "shuffled_labels",
        "mean_acc": float(np.mean(accs)),
        "std_acc": float(np.std(accs)),
        "chance": 1 / ds.num_classes,
    }


def cmd_curve(cfg: RunConfig, lambdas: list[float], out: Path, jobs: int = 1, sanity: bool = False) -> list[dict]:
    lambdas = sorted(set(lambdas))
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, lam, out / f"lambda_{lam:g}") for lam in lambdas]
    # Phase 1 does not depend on lambda: run one point, then seed the others' checkpoints.
    rows = [_curve_point(tasks[0])]
    first = tasks[0][2] / "checkpoints" / "phase1.ckpt"
    for _, _, d in tasks[1:]:
        (d / "checkpoints").mkdir(parents=True, exist_ok=True)
        if first.exists():
            shutil.copyfile(first, d / "checkpoints" / "phase1.ckpt")
    if jobs > 1 and len(tasks) > 2:
        with ProcessPoolExecutor(jobs) as pool:
            rows += list(pool.map(_curve_point, tasks[1:]))
    else:
        rows += [_curve_point(t) for t in tasks[1:]]
    rows.sort(key=lambda r: r["lambda"])
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["lambda", "bpc", "mean_acc", "std_acc"])
        w.writeheader()
        w.writerows(rows)
    if sanity:
        mid = tasks[len(tasks) // 2][2]
        check = shuffled_label_sanity((mid / "distilled.rudd").read_bytes(), cfg.test_set(), cfg, cfg.distill.seed)
        (out / "sanity.json").write_text(json.dumps(check, indent=2) + "\n")
        rows.append(check)
    return rows


# -- entry point ---------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rudd", description="Rate-utility dataset distillation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="torch threads (default $RUDD_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distill", parents=[common], help="run the three-phase pipeline")
    d.add_argument("--config", required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")

    b = sub.add_parser("bpc", parents=[common], help="bits per class and bit allocation of a stream")
    b.add_argument("file")
    b.add_argument("--json", action="store_true", help="machine-readable output")

    e = sub.add_parser("eval", parents=[common], help="train classifiers on a decoded stream")
    e.add_argument("file")
    e.add_argument("--config", help="config supplying the test set and classifier settings")
    e.add_argument("--testset", help="directory of test PNGs (overrides the config)")
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("curve", parents=[common], help="rate-utility curve over lambda_lo values")
    c.add_argument("--config", required=True)
    c.add_argument("--lambdas", required=True, help="comma-separated lambda_lo values")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--sanity", action="store_true", help="also train on shuffled labels")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    set_threads(args.threads)
    try:
        if args.command == "bpc":
            report = bpc_report(Path(args.file).read_bytes())
            print(json.dumps(report, indent=2) if args.json else _format_bpc(report))
            return EXIT_OK
        if args.command == "eval":
            cfg = load_config(args.config) if args.config else None
            if args.testset:
                test = load_images(args.testset)
            elif cfg is not None:
                test = cfg.test_set()
            else:
                raise ConfigError("eval needs --testset or --config")
            trials = args.trials or (cfg.eval_trials if cfg else 5)
            res = cmd_eval(Path(args.file).read_bytes(), test, cfg, trials, args.seed)
            print(json.dumps(res, indent=2))
            return EXIT_OK
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out or cfg.out)
        if args.command == "distill":
            alloc = cmd_distill(cfg, out)
            print(f"wrote {out / 'distilled.rudd'}: {alloc['bpc']:.1f} bits/class")
            return EXIT_OK
        try:
            lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"bad --lambdas {args.lambdas!r}") from None
        if not lambdas:
            raise ConfigError("--lambdas is empty")
        rows = cmd_curve(cfg, lambdas, out, args.jobs, args.sanity)
        for r in rows:
            print(json.dumps(r))
        return EXIT_OK
    except ConfigError as exc:
        print(f"rudd: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BitstreamError, OSError, ValueError, ArithmeticError) as exc:
        print(f"rudd: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
