"""Backpropagation through the unrolled surplus recursion, Adam, and the
training loop with plateau learning-rate decay and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import (
    ModelParams,
    NumericalError,
    ScenarioBatch,
    derive_seed,
    iter_scenario_chunks,
    reinsurance_cost_slope,
    roll_surplus,
    sample_scenarios,
)
from .objective import ObjectiveAccumulator, ObjectiveParams, path_objectives, surrogate_grad, utility_grad
from .policy import MlpArchitecture, MlpPolicy, forward, init_policy, policy_fn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_batches: int = 2000
    batch_size: int = 2**14
    initial_lr: float = 1e-3
    plateau_patience: int = 10
    lr_decay_factor: float = 10.0
    min_lr: float = 1e-5
    early_stop_patience: int = 20
    seed: int = 0
    eval_batch_size: int = 2**16
    test_size: int = 2**25
    epoch_batches: int = 50
    improvement_tol: float = 1e-4
    # reuse one training batch every iteration instead of fresh sampling
    fixed_dataset: bool = False

    def __post_init__(self):
        if self.min_lr > self.initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be at least 1")
        if min(self.batch_size, self.eval_batch_size, self.test_size, self.n_batches, self.epoch_batches) < 1:
            raise ValueError("batch sizes and counts must be at least 1")
        if self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must exceed 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(n_batches=2000, batch_size=2**12, eval_batch_size=2**15, test_size=2**20)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)


@dataclass
class GradientTape:
    """Parameter gradients plus the per-step adjoints of surplus and retention."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    surplus_adjoint: np.ndarray
    retention_adjoint: np.ndarray

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params))


@dataclass
class TrainReport:
    train_objective: List[float] = field(default_factory=list)
    lr_trace: List[float] = field(default_factory=list)
    validation_objective: List[float] = field(default_factory=list)
    best_objective: float = -math.inf
    best_epoch: int = 0
    stop_reason: str = "exhausted"
    expected_utility: float = math.nan
    ruin_probability: float = math.nan
    surrogate_loss: float = math.nan
    test_objective: float = math.nan
    test_stderr: float = math.nan

    def log_lines(self) -> List[str]:
        """Rows ``iteration, lr, train objective, validation objective``.

        The validation column is filled on epoch boundaries only."""
        rows = ["iteration,lr,train_objective,validation_objective"]
        per_epoch = len(self.train_objective) // max(len(self.validation_objective) - 1, 1)
        for k, (obj, lr) in enumerate(zip(self.train_objective, self.lr_trace)):
            val = ""
            if per_epoch and (k + 1) % per_epoch == 0 and (k + 1) // per_epoch < len(self.validation_objective):
                val = f"{self.validation_objective[(k + 1) // per_epoch]:.17g}"
            rows.append(f"{k},{lr:.17g},{obj:.17g},{val}")
        return rows

    def summary(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "iterations": len(self.train_objective),
            "best_validation_objective": self.best_objective,
            "best_epoch": self.best_epoch,
            "final_lr": self.lr_trace[-1] if self.lr_trace else math.nan,
            "test_objective": self.test_objective,
            "test_objective_stderr": self.test_stderr,
            "expected_utility": self.expected_utility,
            "ruin_probability": self.ruin_probability,
            "surrogate_loss": self.surrogate_loss,
        }


class TrainingDiverged(NumericalError):
    """Raised when training hits a non-finite loss; carries the last good state."""

    def __init__(self, msg, policy: MlpPolicy, report: TrainReport):
        super().__init__(msg)
        self.policy = policy
        self.report = report


def _backprop_net(policy: MlpPolicy, acts, delta: np.ndarray, gw, gb) -> np.ndarray:
    """Accumulate parameter gradients for output sensitivity ``delta`` (m x 1)
    and return the sensitivity with respect to the input features."""
    for k in range(len(policy.weights) - 1, -1, -1):
        h, w = acts[k], policy.weights[k]
        gw[k] += h.T @ delta
        gb[k] += delta.sum(axis=0)
        if w.shape[1] == 1:
            delta = delta * w[:, 0]
        else:
            delta = delta @ w.T
        if k > 0:
            d = h * h
            np.subtract(1.0, d, out=d)
            d *= delta
            delta = d
    return delta


def episode_loss_and_grad(
    policy: MlpPolicy, scenarios: ScenarioBatch, model: ModelParams, obj: ObjectiveParams
):
    """Loss ``-mean(u_beta)`` over the batch and its gradient by BPTT.

    The running-minimum term is differentiated through the argmin step
    (first index on ties).
    """
    caches = []

    def recording_policy(x, step):
        b, acts = forward(policy, x, step)
        caches.append((b, acts))
        return b

    paths = roll_surplus(model, scenarios, recording_policy)
    X, S = paths.X, paths.claims
    m, n1 = X.shape
    n = n1 - 1
    po = path_objectives(X, obj)
    loss = -float(np.mean(po.scalarized))
    if not math.isfinite(loss):
        raise NumericalError("non-finite loss")

    aX = np.zeros((m, n1))
    aX[:, n] -= obj.beta * utility_grad(X[:, n], obj.alpha) / m
    k_min = np.argmin(X, axis=1)
    aX[np.arange(m), k_min] += (1.0 - obj.beta) * surrogate_grad(po.running_min, obj.gamma) / m

    ab = np.zeros((m, n))
    gw = [np.zeros_like(w) for w in policy.weights]
    gb = [np.zeros_like(b) for b in policy.biases]
    slope = reinsurance_cost_slope(model)
    scale = policy.architecture.input_scale
    for i in range(n - 1, -1, -1):
        b, acts = caches[i]
        a_next = aX[:, i + 1]
        ab[:, i] = a_next * (-slope - S[:, i])
        delta = (ab[:, i] * b * (1.0 - b))[:, None]
        d_in = _backprop_net(policy, acts, delta, gw, gb)
        aX[:, i] += a_next + d_in[:, 0] / scale
        bad = ~np.isfinite(aX[:, i])
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"non-finite adjoint on path {scenarios.start + j} at step {i}")
    tape = GradientTape(gw, gb, aX, ab)
    if not np.all(np.isfinite(tape.flat())):
        raise NumericalError("non-finite parameter gradient")
    return loss, tape


def adam_step(policy: MlpPolicy, grad: GradientTape, state: AdamState, lr: float):
    """One bias-corrected Adam update.  Returns ``(policy, state)``; inputs are
    not modified."""
    g = grad.flat()
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = policy.flat() - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return policy.with_flat(theta), new_state


def evaluate_policy(
    model: ModelParams, obj: ObjectiveParams, policy_eval, m: int, seed: int
) -> ObjectiveAccumulator:
    """Stream ``m`` test paths through ``policy_eval`` and accumulate the
    objective terms."""
    acc = ObjectiveAccumulator(obj)
    for chunk in iter_scenario_chunks(model, m, seed):
        acc.add(roll_surplus(model, chunk, policy_eval).X)
    return acc


def train(
    model: ModelParams,
    obj: ObjectiveParams,
    arch: MlpArchitecture,
    cfg: TrainConfig,
    evaluate_test: bool = True,
):
    """Train a retention policy by mini-batch Adam.

    Returns ``(best_policy, report)`` where the best policy is the one with
    the highest validation objective seen at an epoch boundary.
    """
    policy = init_policy(arch, derive_seed(cfg.seed, "init"))
    state = AdamState.zeros(policy.parameter_count)
    val_batch = sample_scenarios(model, cfg.eval_batch_size, derive_seed(cfg.seed, "validation"))

    def validate(p):
        po = path_objectives(roll_surplus(model, val_batch, policy_fn(p)).X, obj)
        return float(np.mean(po.scalarized))

    report = TrainReport()
    lr = cfg.initial_lr
    best = validate(policy)
    best_policy = policy.copy()
    report.validation_objective.append(best)
    report.best_objective = best
    wait = plateau_wait = 0

    for k in range(cfg.n_batches):
        batch_index = 0 if cfg.fixed_dataset else k
        batch = sample_scenarios(model, cfg.batch_size, derive_seed(cfg.seed, "train", batch_index))
        try:
            loss, grad = episode_loss_and_grad(policy, batch, model, obj)
        except NumericalError as exc:
            report.stop_reason = "diverged"
            raise TrainingDiverged(f"iteration {k}: {exc}", best_policy, report) from exc
        report.train_objective.append(-loss)
        report.lr_trace.append(lr)
        policy, state = adam_step(policy, grad, state, lr)

        if (k + 1) % cfg.epoch_batches:
            continue
        epoch = (k + 1) // cfg.epoch_batches
        val = validate(policy)
        report.validation_objective.append(val)
        significant = val > best + cfg.improvement_tol * abs(best)
        if val > best:
            best, best_policy = val, policy.copy()
            report.best_epoch = epoch
        if significant:
            wait = plateau_wait = 0
        else:
            wait += 1
            plateau_wait += 1
            if plateau_wait >= cfg.plateau_patience and lr > cfg.min_lr:
                lr = max(lr / cfg.lr_decay_factor, cfg.min_lr)
                plateau_wait = 0
                logger.info("epoch %d: learning rate reduced to %g", epoch, lr)
            if wait >= cfg.early_stop_patience:
                report.stop_reason = "early-stopped"
                logger.info("epoch %d: early stop", epoch)
                break
        logger.debug("epoch %d lr %g validation %.6f best %.6f", epoch, lr, val, best)

    report.best_objective = max(report.validation_objective)
    if evaluate_test:
        acc = evaluate_policy(model, obj, policy_fn(best_policy), cfg.test_size, derive_seed(cfg.seed, "test"))
        report.test_objective = acc.mean("scalarized")
        report.test_stderr = acc.stderr("scalarized")
        report.expected_utility = acc.mean("utility")
        report.ruin_probability = acc.mean("ruin")
        report.surrogate_loss = acc.mean("surrogate")
    return best_policy, report
