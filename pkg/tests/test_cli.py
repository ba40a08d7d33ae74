import csv
import dataclasses
import json
import time
from pathlib import Path

import pytest

from conftest import FIXTURES
from rudd.cli import ConfigError, main, parse_config, shuffled_label_sanity
from rudd.codec import encode_dataset
from rudd.distill import init_state, run_phase1
from rudd.distill.algorithm import run_phase3

CONFIGS = Path(__file__).parent.parent / "configs"
SMOKE = (CONFIGS / "smoke.cfg").read_text()


def write_config(tmp_path, text=SMOKE, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    start = time.perf_counter()
    code = main(["distill", "--config", str(CONFIGS / "smoke.cfg"), "--out", str(out)])
    return code, out, time.perf_counter() - start


def test_smoke_distill(smoke_run):
    code, out, elapsed = smoke_run
    assert code == 0 and elapsed < 60
    for name in ("distilled.rudd", "metrics.csv", "allocation.json"):
        assert (out / name).exists()
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == 50 and list(rows[0]) == ["step", "rate_bits", "utility", "lambda"]
    assert float(rows[0]["lambda"]) == 10 and float(rows[-1]["lambda"]) == 5


def test_same_seed_same_bytes(smoke_run, tmp_path):
    _, out, _ = smoke_run
    assert main(["distill", "--config", str(CONFIGS / "smoke.cfg"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "distilled.rudd").read_bytes() == (out / "distilled.rudd").read_bytes()


def test_allocation_sums_to_file_bits(smoke_run, capsys):
    _, out, _ = smoke_run
    assert main(["bpc", str(out / "distilled.rudd"), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    parts = rep["explicit_bits"] + rep["implicit_bits"] + rep["label_bits"] + rep["header_bits"]
    assert parts == rep["total_bits"] == 8 * (out / "distilled.rudd").stat().st_size
    assert rep["num_classes"] == 2
    saved = json.loads((out / "allocation.json").read_text())
    assert saved["total_bits"] == rep["total_bits"]


def test_bpc_of_fixture(capsys):
    assert main(["bpc", str(FIXTURES / "golden.rudd"), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["bpc"] == 1928.0 and rep["num_classes"] == 3
    assert main(["bpc", str(FIXTURES / "golden.rudd")]) == 0
    assert "1928.00 bits/class" in capsys.readouterr().out


def test_bpc_bad_stream(tmp_path, capsys):
    bad = tmp_path / "bad.rudd"
    bad.write_bytes(b"XXXX" + (FIXTURES / "golden.rudd").read_bytes()[4:])
    assert main(["bpc", str(bad)]) == 1
    assert "magic" in capsys.readouterr().err


def test_eval_reports_accuracy(smoke_run, capsys):
    _, out, _ = smoke_run
    assert main(["eval", str(out / "distilled.rudd"), "--config", str(CONFIGS / "smoke.cfg"), "--trials", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert len(rep["accuracies"]) == 2 and 0 <= rep["mean"] <= 1


def test_missing_key_exit_2(tmp_path, capsys):
    text = "\n".join(line for line in SMOKE.splitlines() if not line.startswith("loss"))
    assert main(["distill", "--config", write_config(tmp_path, text)]) == 2
    assert "'loss'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "line, needle",
    [("spc = two", "line"), ("colour = red", "unknown key"), ("just words", "line"), ("spc = 0", "spc")],
)
def test_config_errors(line, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(SMOKE.replace("spc = 1", line))


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError, match="first on line"):
        parse_config(SMOKE + "\nseed = 3\n")


def test_usage_errors():
    assert main([]) == 2
    assert main(["distill"]) == 2
    assert main(["distill", "--config", "/nonexistent.cfg"]) == 2


def test_seed_flag_changes_output(smoke_run, tmp_path):
    _, out, _ = smoke_run
    assert main(["distill", "--config", str(CONFIGS / "smoke.cfg"), "--out", str(tmp_path), "--seed", "1"]) == 0
    assert (tmp_path / "distilled.rudd").read_bytes() != (out / "distilled.rudd").read_bytes()


def test_curve_sorted_with_sanity(tmp_path, capsys):
    cfg = write_config(tmp_path, SMOKE.replace("joint_steps = 50", "joint_steps = 10"))
    out = tmp_path / "curve"
    assert main(["curve", "--config", cfg, "--lambdas", "8,2,4", "--out", str(out), "--sanity"]) == 0
    rows = list(csv.DictReader(open(out / "curve.csv")))
    assert [float(r["lambda"]) for r in rows] == [2.0, 4.0, 8.0]
    assert all(float(r["bpc"]) > 0 and 0 <= float(r["mean_acc"]) <= 1 for r in rows)
    sanity = json.loads((out / "sanity.json").read_text())
    assert sanity["kind"] == "shuffled_labels" and sanity["chance"] == 0.5
    printed = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert printed[-1]["kind"] == "shuffled_labels"


def test_curve_bad_lambdas(tmp_path):
    assert main(["curve", "--config", write_config(tmp_path), "--lambdas", "a,b"]) == 2


def test_shuffled_labels_near_chance():
    cfg = parse_config(SMOKE)
    distill = dataclasses.replace(cfg.distill, spc=10, init_steps=150)
    cfg = dataclasses.replace(cfg, distill=distill, eval_trials=8)
    st = run_phase1(init_state(2, 8, 8, distill), cfg.train_set(), distill)
    ds, _ = run_phase3(st, distill)
    rep = shuffled_label_sanity(encode_dataset(ds).data, cfg.test_set(), cfg, seed=0)
    assert abs(rep["mean_acc"] - 0.5) <= 0.15
