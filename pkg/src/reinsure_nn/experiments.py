"""Reproduction harness: no-reinsurance baseline, surrogate sweep over the
sharpness parameter, retention curves and the Pareto front over beta."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .model import ModelParams, constant_policy, derive_seed, iter_scenario_chunks, roll_surplus
from .objective import ObjectiveAccumulator, ObjectiveParams, surrogate_loss
from .policy import MlpArchitecture, MlpPolicy, eval_retention_batch, policy_fn
from .training import TrainConfig, TrainingDiverged, TrainReport, train

logger = logging.getLogger(__name__)

DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(11))
DEFAULT_GAMMAS = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0, 10000.0)


def default_surplus_grid() -> np.ndarray:
    return np.round(np.arange(-1.0, 10.0 + 1e-9, 0.05), 10)


@dataclass
class GammaSweepResult:
    gammas: List[float]
    surrogate_means: List[float]
    surrogate_stderrs: List[float]
    exact_ruin_prob: float
    mc_stderr: float
    n_paths: int
    curve_x: np.ndarray = field(default_factory=lambda: np.linspace(-3.0, 3.0, 601))

    def curve(self, gamma: float) -> np.ndarray:
        """Samples of the surrogate on ``curve_x``, for plotting the loss family."""
        return surrogate_loss(self.curve_x, gamma)


@dataclass
class ParetoPoint:
    beta: Optional[float]
    expected_utility: float
    ruin_probability: float
    surrogate_loss: float
    policy_checkpoint_id: str
    utility_stderr: float = math.nan
    ruin_stderr: float = math.nan
    status: str = "ok"

    @property
    def survival_probability(self) -> float:
        return 1.0 - self.ruin_probability


@dataclass
class RetentionCurve:
    surplus_grid: np.ndarray
    retention_values: np.ndarray
    beta: Optional[float] = None


@dataclass
class ParetoSweepResult:
    points: List[ParetoPoint]
    baseline: ParetoPoint
    policies: Dict[float, MlpPolicy]
    reports: Dict[float, TrainReport]
    test_seed: int
    test_size: int


def _binomial_stderr(p: float, m: int) -> float:
    return math.sqrt(p * (1.0 - p) / m)


def baseline_ruin(model: ModelParams, m: int, seed: int):
    """Monte Carlo ruin probability without reinsurance, with its binomial
    standard error."""
    if m < 1:
        raise ValueError("m must be at least 1")
    ruined = 0
    for chunk in iter_scenario_chunks(model, m, seed):
        X = roll_surplus(model, chunk, constant_policy(1.0)).X
        ruined += int(np.count_nonzero(X.min(axis=1) < 0))
    p = ruined / m
    return p, _binomial_stderr(p, m)


def gamma_sweep(model: ModelParams, gammas: Sequence[float], m: int, seed: int) -> GammaSweepResult:
    """Expected surrogate loss of the running minimum without reinsurance,
    for each sharpness in ``gammas``, all on one shared batch of paths."""
    gammas = [float(g) for g in gammas]
    if any(not g > 0 for g in gammas):
        raise ValueError("gammas must be positive")
    sums = [[] for _ in gammas]
    sq = [[] for _ in gammas]
    ruined = 0
    for chunk in iter_scenario_chunks(model, m, seed):
        fmin = roll_surplus(model, chunk, constant_policy(1.0)).X.min(axis=1)
        ruined += int(np.count_nonzero(fmin < 0))
        for k, g in enumerate(gammas):
            v = surrogate_loss(fmin, g)
            sums[k].append(float(np.sum(v)))
            sq[k].append(float(np.sum(v * v)))
    means = [math.fsum(s) / m for s in sums]
    ses = [math.sqrt(max(math.fsum(q) / m - mu * mu, 0.0) / m) for q, mu in zip(sq, means)]
    p = ruined / m
    return GammaSweepResult(gammas, means, ses, p, _binomial_stderr(p, m), m)


def extract_retention_curve(policy: MlpPolicy, surplus_grid, beta: Optional[float] = None) -> RetentionCurve:
    grid = np.asarray(surplus_grid, dtype=float)
    if not np.all(np.isfinite(grid)):
        raise ValueError("surplus grid must be finite")
    return RetentionCurve(grid, eval_retention_batch(policy, grid), beta)


def checkpoint_id(beta: float) -> str:
    return f"beta_{beta:g}"


def evaluate_on_shared_batch(model: ModelParams, obj: ObjectiveParams, policy_evals: dict, m: int, seed: int):
    """Evaluate several policies on one batch of test paths (common random
    numbers).  Returns one accumulator per key of ``policy_evals``."""
    accs = {k: ObjectiveAccumulator(obj) for k in policy_evals}
    for chunk in iter_scenario_chunks(model, m, seed):
        for k, fn in policy_evals.items():
            accs[k].add(roll_surplus(model, chunk, fn).X)
    return accs


def _train_one(args):
    model, obj, arch, cfg = args
    try:
        policy, report = train(model, obj, arch, cfg, evaluate_test=False)
        return policy, report, "ok"
    except TrainingDiverged as exc:
        logger.warning("beta=%g diverged: %s", obj.beta, exc)
        return exc.policy, exc.report, "diverged"


def training_seed(master: int, beta: float) -> int:
    return derive_seed(master, f"train-beta-{beta!r}")


def pareto_sweep(
    model: ModelParams,
    arch: MlpArchitecture,
    cfg: TrainConfig,
    betas: Sequence[float] = DEFAULT_BETAS,
    test_m: Optional[int] = None,
    gamma: float = 10.0,
    workers: int = 1,
) -> ParetoSweepResult:
    """Train one policy per beta and evaluate all of them, plus the
    no-reinsurance strategy, on one shared test batch."""
    betas = sorted(float(b) for b in betas)
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise ValueError("betas must lie in [0, 1]")
    test_m = cfg.test_size if test_m is None else test_m
    jobs = [
        (model, ObjectiveParams(beta=b, gamma=gamma, alpha=model.alpha), arch,
         replace(cfg, seed=training_seed(cfg.seed, b)))
        for b in betas
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]

    policies = {b: r[0] for b, r in zip(betas, results)}
    reports = {b: r[1] for b, r in zip(betas, results)}
    test_seed = derive_seed(cfg.seed, "test")
    evals = {b: policy_fn(p) for b, p in policies.items()}
    evals[None] = constant_policy(1.0)
    obj = ObjectiveParams(beta=1.0, gamma=gamma, alpha=model.alpha)
    accs = evaluate_on_shared_batch(model, obj, evals, test_m, test_seed)

    def point(key, status, ident):
        a = accs[key]
        return ParetoPoint(
            beta=key,
            expected_utility=a.mean("utility"),
            ruin_probability=a.mean("ruin"),
            surrogate_loss=a.mean("surrogate"),
            policy_checkpoint_id=ident,
            utility_stderr=a.stderr("utility"),
            ruin_stderr=a.stderr("ruin"),
            status=status,
        )

    points = [point(b, r[2], checkpoint_id(b)) for b, r in zip(betas, results)]
    baseline = point(None, "ok", "no_reinsurance")
    return ParetoSweepResult(points, baseline, policies, reports, test_seed, test_m)


def best_constant_retention(model: ModelParams, obj: ObjectiveParams, m: int, seed: int, levels=None):
    """Brute-force search over constant retentions on a shared test batch.

    Returns ``(best_level, best_objective, stderr, objectives)``.
    """
    levels = np.round(np.linspace(0.0, 1.0, 101), 2) if levels is None else np.asarray(levels)
    accs = evaluate_on_shared_batch(model, obj, {float(b): constant_policy(float(b)) for b in levels}, m, seed)
    values = np.array([accs[float(b)].mean("scalarized") for b in levels])
    k = int(np.argmax(values))
    return float(levels[k]), float(values[k]), accs[float(levels[k])].stderr("scalarized"), values
