"""Command-line entry points.

    reinsure-nn baseline       ruin probability without reinsurance
    reinsure-nn gamma-sweep    expected surrogate loss against the exact ruin probability
    reinsure-nn train          train one policy at the configured beta
    reinsure-nn retention-curve  sample trained retention curves on a surplus grid
    reinsure-nn pareto         beta sweep and the utility/survival trade-off

Every command accepts ``--config FILE``, ``--seed``, ``--out DIR``,
``--scale desk|paper`` (``--paper-scale`` for short) and ``--<key> VALUE``
for any config key.  The ``REINSURE_NN_WORKERS`` environment variable sets
the number of worker processes for independent training runs.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import EXPERIMENTS, VALID_KEYS, ConfigError, RunConfig, format_key_values, load_config
from .experiments import (
    baseline_ruin,
    checkpoint_id,
    extract_retention_curve,
    gamma_sweep,
    pareto_sweep,
    training_seed,
)
from .model import NumericalError, derive_seed
from .objective import ObjectiveParams
from .policy import load_policy, policy_to_bytes, retention_text
from .training import train

logger = logging.getLogger("reinsure_nn")

WORKERS_ENV = "REINSURE_NN_WORKERS"


def _f(x) -> str:
    return f"{x:.17g}"


def csv_text(header: List[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_f(v) if isinstance(v, float) else ("" if v is None else str(v)) for v in row))
    return "\n".join(lines) + "\n"


class OutputSet:
    """Collects output files and writes them all at the end, each through a
    temporary name followed by a rename."""

    def __init__(self, root: Path):
        self.root = root
        self.files: Dict[str, bytes] = {}

    def add(self, name: str, content) -> None:
        self.files[name] = content.encode() if isinstance(content, str) else content

    def commit(self) -> None:
        for name, data in self.files.items():
            target = self.root / name
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


def check_output_dir(path: Path) -> None:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"output_dir {path} is not a directory")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output_dir {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output_dir {path} is not writable")


def _grid(cfg: RunConfig) -> np.ndarray:
    lo, hi, step = cfg.grid
    k = int(np.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(k + 1), 12)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _curve_rows(curves):
    for beta, curve in curves:
        for x, b in zip(curve.surplus_grid, curve.retention_values):
            yield (float(beta), float(x), float(b))


def _run_baseline(cfg: RunConfig, out: OutputSet) -> None:
    seed = derive_seed(cfg.seed, "baseline")
    p, se = baseline_ruin(cfg.model, cfg.baseline_size, seed)
    out.add("baseline.csv", csv_text(["ruin_prob", "stderr", "n_paths"], [(p, se, cfg.baseline_size)]))
    logger.info("ruin probability without reinsurance: %.5f +- %.5f", p, se)


def _run_gamma_sweep(cfg: RunConfig, out: OutputSet) -> None:
    res = gamma_sweep(cfg.model, cfg.gammas, cfg.sweep_size, derive_seed(cfg.seed, "gamma-sweep"))
    rows = [(g, m, res.exact_ruin_prob, se) for g, m, se in zip(res.gammas, res.surrogate_means, res.surrogate_stderrs)]
    out.add("gamma_sweep.csv", csv_text(["gamma", "surrogate_mean", "exact", "stderr"], rows))
    curve_rows = [(g, float(x), float(v)) for g in res.gammas for x, v in zip(res.curve_x, res.curve(g))]
    out.add("surrogate_curves.csv", csv_text(["gamma", "x", "g"], curve_rows))


def _run_train(cfg: RunConfig, out: OutputSet) -> None:
    policy, report = train(cfg.model, cfg.objective, cfg.architecture, cfg.training)
    out.add("train_log.csv", "\n".join(report.log_lines()) + "\n")
    out.add("train_summary.txt", format_key_values(report.summary()))
    out.add("policy.bin", policy_to_bytes(policy))
    out.add("retention.txt", retention_text(policy, _grid(cfg)))
    curve = extract_retention_curve(policy, _grid(cfg), cfg.objective.beta)
    out.add("retention_curves.csv", csv_text(["beta", "x", "b"], _curve_rows([(cfg.objective.beta, curve)])))


def _run_retention_curve(cfg: RunConfig, out: OutputSet) -> None:
    grid = _grid(cfg)
    if cfg.policy:
        policy = load_policy(cfg.policy)
        curves = [(cfg.objective.beta, extract_retention_curve(policy, grid, cfg.objective.beta))]
    else:
        curves = []
        for beta in cfg.betas:
            obj = ObjectiveParams(beta=beta, gamma=cfg.objective.gamma, alpha=cfg.model.alpha)
            tcfg = replace(cfg.training, seed=training_seed(cfg.seed, beta))
            policy, _ = train(cfg.model, obj, cfg.architecture, tcfg, evaluate_test=False)
            curves.append((beta, extract_retention_curve(policy, grid, beta)))
    out.add("retention_curves.csv", csv_text(["beta", "x", "b"], _curve_rows(curves)))


def _run_pareto(cfg: RunConfig, out: OutputSet) -> None:
    res = pareto_sweep(
        cfg.model, cfg.architecture, cfg.training, cfg.betas,
        gamma=cfg.objective.gamma, workers=_workers(),
    )
    header = ["beta", "expected_utility", "survival_prob", "ruin_prob", "surrogate",
              "utility_stderr", "ruin_stderr", "status", "label"]
    rows = [
        (pt.beta, pt.expected_utility, pt.survival_probability, pt.ruin_probability, pt.surrogate_loss,
         pt.utility_stderr, pt.ruin_stderr, pt.status, pt.policy_checkpoint_id)
        for pt in res.points + [res.baseline]
    ]
    out.add("pareto.csv", csv_text(header, rows))
    grid = _grid(cfg)
    curves = [(b, extract_retention_curve(p, grid, b)) for b, p in res.policies.items()]
    out.add("retention_curves.csv", csv_text(["beta", "x", "b"], _curve_rows(curves)))
    for b, p in res.policies.items():
        out.add(f"policies/{checkpoint_id(b)}.bin", policy_to_bytes(p))


_RUNNERS = {
    "baseline": _run_baseline,
    "gamma-sweep": _run_gamma_sweep,
    "train": _run_train,
    "retention-curve": _run_retention_curve,
    "pareto": _run_pareto,
}


def run_record(cfg: RunConfig, command: str) -> str:
    rec = {"command": command, "package_version": __version__, "numpy_version": np.__version__,
           "python_version": platform.python_version()}
    rec.update(cfg.resolved)
    rec["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return format_key_values(rec)


def run(cfg: RunConfig) -> int:
    """Execute one experiment and write its outputs.  Returns an exit status."""
    if cfg.experiment not in _RUNNERS:
        logger.error("unknown experiment %r", cfg.experiment)
        return 2
    try:
        check_output_dir(cfg.output_dir)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    out = OutputSet(cfg.output_dir)
    try:
        _RUNNERS[cfg.experiment](cfg, out)
    except (NumericalError, ValueError, OSError) as exc:
        logger.error("%s failed: %s", cfg.experiment, exc)
        return 1
    out.add("run_record.txt", run_record(cfg, cfg.experiment))
    out.commit()
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="output_dir", metavar="DIR")
    common.add_argument("--scale", choices=("desk", "paper"))
    common.add_argument("--paper-scale", dest="scale", action="store_const", const="paper",
                        help="shorthand for --scale paper")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in VALID_KEYS:
        if key in ("seed", "scale", "output_dir"):
            continue
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        common.add_argument(*flags, dest=key, metavar="VALUE")
    parser = argparse.ArgumentParser(prog="reinsure-nn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    overrides = {k: getattr(args, k) for k in VALID_KEYS if getattr(args, k, None) is not None}
    try:
        cfg = load_config(args.config, overrides, experiment=args.command)
    except (ConfigError, OSError) as exc:
        print(f"reinsure-nn: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
