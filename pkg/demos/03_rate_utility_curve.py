"""
Sweeping the rate-utility trade-off
===================================

Run the pipeline at several utility weights and print the frontier: higher
weights buy accuracy with bits. Training on shuffled labels lands near chance,
with a wide spread across trials on so few samples.
"""

import dataclasses
import tempfile
from pathlib import Path

from rudd.cli import cmd_curve, load_config
from rudd.numerics import set_threads

set_threads(1)

# the smoke config with more samples per class and more evaluation trials
cfg = load_config(Path(__file__).parent.parent / "configs" / "smoke.cfg")
cfg = dataclasses.replace(cfg, distill=dataclasses.replace(cfg.distill, spc=4, init_steps=150), eval_trials=5)
with tempfile.TemporaryDirectory() as out:
    rows = cmd_curve(cfg, [1.0, 4.0, 16.0], Path(out), sanity=True)

print(f"{'lambda':>8} {'bpc':>8} {'accuracy':>10}")
for r in rows:
    if "lambda" in r:
        print(f"{r['lambda']:>8g} {r['bpc']:>8.0f} {100 * r['mean_acc']:>9.1f}%")
    else:
        print(f"shuffled labels: {100 * r['mean_acc']:.1f} +- {100 * r['std_acc']:.1f}% (chance {100 * r['chance']:.0f}%)")
