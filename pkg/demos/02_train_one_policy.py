"""Train a retention policy for a mix of terminal utility and survival, then
print the learned retention level across surplus values.

This uses the full desk budget of 2000 batches and takes a few minutes.  A
shorter run stops before the mixed-objective policy has learned to retain
more risk at high surplus.  Pass a beta on the command line to change the
trade-off (1 = utility only, 0 = survival only).

Run:  python3 demos/02_train_one_policy.py 0.4
"""

import sys

import numpy as np

from reinsure_nn.config import load_config
from reinsure_nn.policy import eval_retention_batch
from reinsure_nn.training import train

beta = float(sys.argv[1]) if len(sys.argv) > 1 else 0.4
cfg = load_config(overrides={"beta": beta, "test_size": 2**18, "seed": 3})
policy, report = train(cfg.model, cfg.objective, cfg.architecture, cfg.training)

print(f"beta = {beta}: stopped after {len(report.train_objective)} batches ({report.stop_reason})")
print(f"test objective {report.test_objective:.5f} +- {report.test_stderr:.5f}")
print(f"expected utility {report.expected_utility:.4f}, ruin probability {report.ruin_probability:.4f}")

xs = np.arange(-1.0, 10.5, 1.0)
print("\nsurplus  retention")
for x, b in zip(xs, eval_retention_batch(policy, xs)):
    print(f"{x:7.1f}  {b:9.3f}  " + "#" * int(round(40 * b)))
