"""Utility, ruin functional, tanh surrogate and the scalarized objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import NumericalError


@dataclass(frozen=True)
class ObjectiveParams:
    beta: float = 0.4
    gamma: float = 10.0
    alpha: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def _floor(alpha: float) -> float:
    return -700.0 / alpha


def utility(wealth, alpha: float):
    """Exponential (CARA) utility ``-exp(-alpha * w)``, increasing in wealth.

    Wealth is clamped below at ``-700 / alpha`` so the exponential cannot
    overflow.
    """
    w = np.maximum(wealth, _floor(alpha))
    return -np.exp(-alpha * w)


def utility_grad(wealth, alpha: float):
    w = np.asarray(wealth, dtype=float)
    return np.where(w > _floor(alpha), alpha * np.exp(-alpha * np.maximum(w, _floor(alpha))), 0.0)


def surrogate_loss(x, gamma: float):
    """Smooth ruin indicator ``0.5 + 0.5 * tanh(-gamma * x)``."""
    return 0.5 + 0.5 * np.tanh(-gamma * np.asarray(x, dtype=float))


def surrogate_grad(x, gamma: float):
    t = np.tanh(-gamma * np.asarray(x, dtype=float))
    return -0.5 * gamma * (1.0 - t * t)


def running_min(path) -> float:
    """Minimum of a surplus path over every grid point, initial one included."""
    arr = np.asarray(path, dtype=float)
    if arr.size == 0:
        raise ValueError("empty path")
    if not np.all(np.isfinite(arr)):
        raise NumericalError("non-finite value in surplus path")
    return float(arr.min())


@dataclass
class PathObjective:
    """Per-path objective terms, vectors over the batch."""

    terminal_utility: np.ndarray
    running_min: np.ndarray
    surrogate_value: np.ndarray
    ruin_flag: np.ndarray
    scalarized: np.ndarray


def path_objectives(X: np.ndarray, obj: ObjectiveParams) -> PathObjective:
    """Evaluate the objective terms of each row of the surplus matrix ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise NumericalError("non-finite value in surplus paths")
    u = utility(X[:, -1], obj.alpha)
    fmin = X.min(axis=1)
    g = surrogate_loss(fmin, obj.gamma)
    return PathObjective(
        terminal_utility=u,
        running_min=fmin,
        surrogate_value=g,
        ruin_flag=(fmin < 0).astype(np.int8),
        scalarized=obj.beta * u - (1.0 - obj.beta) * g,
    )


class ObjectiveSummary(NamedTuple):
    mean_scalarized: float
    mean_utility: float
    ruin_prob: float
    mean_surrogate: float


def scalarized_objective(batch, obj: ObjectiveParams) -> ObjectiveSummary:
    """Empirical averages over the paths of a batch.

    ``batch`` is a :class:`~reinsure_nn.model.SurplusPathBatch` or a bare
    surplus matrix.  The ruin probability uses the exact indicator.
    """
    X = batch.X if hasattr(batch, "X") else batch
    po = path_objectives(X, obj)
    return ObjectiveSummary(
        float(np.mean(po.scalarized)),
        float(np.mean(po.terminal_utility)),
        float(np.mean(po.ruin_flag)),
        float(np.mean(po.surrogate_value)),
    )


class ObjectiveAccumulator:
    """Streaming means and standard errors over chunks of paths.

    Chunk sums are combined with ``math.fsum`` so the result depends only on
    how paths are chunked, not on the order chunks finish in.
    """

    _keys = ("scalarized", "utility", "ruin", "surrogate")

    def __init__(self, obj: ObjectiveParams):
        self.obj = obj
        self.count = 0
        self._sums = {k: [] for k in self._keys}
        self._sq = {k: [] for k in self._keys}

    def add(self, X: np.ndarray) -> None:
        po = path_objectives(X, self.obj)
        cols = {
            "scalarized": po.scalarized,
            "utility": po.terminal_utility,
            "ruin": po.ruin_flag.astype(float),
            "surrogate": po.surrogate_value,
        }
        for k, v in cols.items():
            self._sums[k].append(float(np.sum(v)))
            self._sq[k].append(float(np.sum(v * v)))
        self.count += len(po.scalarized)

    def mean(self, key: str) -> float:
        return math.fsum(self._sums[key]) / self.count

    def stderr(self, key: str) -> float:
        mu = self.mean(key)
        var = max(math.fsum(self._sq[key]) / self.count - mu * mu, 0.0)
        if self.count > 1:
            var *= self.count / (self.count - 1)
        return math.sqrt(var / self.count)

    def summary(self) -> ObjectiveSummary:
        return ObjectiveSummary(*(self.mean(k) for k in self._keys))
