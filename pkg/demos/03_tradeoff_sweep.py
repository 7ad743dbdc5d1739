"""Sweep the weight between terminal utility and survival and compare every
trained policy, and full retention, on one shared set of test paths.

Uses five weights and a reduced training budget (several minutes on one
core).  Set REINSURE_NN_WORKERS to train in parallel.

Run:  python3 demos/03_tradeoff_sweep.py
"""

import os

from reinsure_nn.config import load_config
from reinsure_nn.experiments import pareto_sweep

cfg = load_config(overrides={"n_batches": 600, "seed": 5})
res = pareto_sweep(
    cfg.model, cfg.architecture, cfg.training, betas=[0.0, 0.25, 0.5, 0.75, 1.0],
    test_m=2**18, workers=int(os.environ.get("REINSURE_NN_WORKERS", "1")),
)

print(f"{'beta':>6} {'E[utility]':>11} {'ruin':>8} {'survival':>9}")
for pt in res.points:
    print(f"{pt.beta:6.2f} {pt.expected_utility:11.4f} {pt.ruin_probability:8.4f} {pt.survival_probability:9.4f}")
b = res.baseline
print(f"{'b = 1':>6} {b.expected_utility:11.4f} {b.ruin_probability:8.4f} {b.survival_probability:9.4f}")

# No trained point should be dominated by full retention in the
# (survival, utility) plane.
better = [pt.beta for pt in res.points
          if pt.expected_utility > b.expected_utility or pt.survival_probability > b.survival_probability]
print(f"\npoints improving on full retention in at least one coordinate: {better}")
