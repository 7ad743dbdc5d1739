"""Discretized Cramér-Lundberg surplus with an Ornstein-Uhlenbeck perturbation.

The surplus evolves on a uniform grid ``t_i = i * T / n`` as

    X[i+1] = X[i] + p_i - c(b_i) + L[i] - b_i * S[i]

where ``p_i`` is the insurer's expected-value premium, ``c(b)`` the
reinsurer's expected-value premium for ceding ``1 - b`` of the claims,
``L`` a discretized OU process and ``S[i]`` the aggregate claims of period
``(t_i, t_{i+1}]``.

Exogenous randomness (``S`` and the OU shocks) is pre-sampled into a
:class:`ScenarioBatch` so the same paths can be replayed under different
policies.  Paths are generated in fixed-size blocks, each block drawing
from its own stream keyed by ``(seed, block index)``; any slice of a batch
is therefore bit-identical however the work is split.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, Iterator, Optional

import numpy as np

BLOCK_SIZE = 4096
_SEED_MASK = (1 << 64) - 1


class NumericalError(ArithmeticError):
    """A non-finite value appeared in a simulation or gradient computation."""


@dataclass(frozen=True)
class ModelParams:
    """Market and model constants.  Defaults are the base model."""

    initial_wealth: float = 1.0
    time_horizon: float = 10.0
    n_steps: int = 10
    lam: float = 1.0
    mu: float = 1.0
    eta: float = 0.5
    theta: float = 0.7
    alpha: float = 0.3
    kappa: float = 0.0
    xi: float = 0.2
    nu: float = 0.05
    ou_initial: Optional[float] = None

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if self.time_horizon <= 0:
            raise ValueError("time_horizon must be positive")
        if self.initial_wealth <= 0:
            raise ValueError("initial_wealth must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.theta <= self.eta:
            raise ValueError("theta must exceed eta")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.xi < 0 or self.nu < 0:
            raise ValueError("xi and nu must be non-negative")

    @property
    def dt(self) -> float:
        return self.time_horizon / self.n_steps

    @property
    def l0(self) -> float:
        """Initial OU value; the mean-reversion level unless set explicitly."""
        return self.kappa if self.ou_initial is None else self.ou_initial

    def time_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class ScenarioBatch:
    """Pre-sampled claims and OU shocks for paths ``start .. start + m - 1``.

    ``claims[j, i]`` is the aggregate claim amount of path j in period i and
    ``ou_noise[j, i]`` the standard normal shock driving ``L[i+1]``.
    """

    claims: np.ndarray
    ou_noise: np.ndarray
    seed: int
    start: int = 0

    @property
    def batch_size(self) -> int:
        return self.claims.shape[0]

    @property
    def n_steps(self) -> int:
        return self.claims.shape[1]


@dataclass
class SurplusPathBatch:
    """Rolled-out paths: surplus ``X`` and OU values ``L`` are m x (n+1),
    retentions ``B`` are m x n."""

    X: np.ndarray
    L: np.ndarray
    B: np.ndarray
    claims: np.ndarray


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Hash ``(master, label, index)`` into an independent 64-bit seed."""
    h = hashlib.blake2b(f"{int(master)}|{label}|{int(index)}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def premium(params: ModelParams, step: int) -> float:
    """Insurer premium for period ``(t_step, t_step+1]``; zero at the horizon."""
    if not 0 <= step <= params.n_steps:
        raise IndexError(f"step {step} outside 0..{params.n_steps}")
    if step == params.n_steps:
        return 0.0
    return (1.0 + params.eta) * params.lam * params.mu * params.dt


def reinsurance_cost(params: ModelParams, b, step: int = 0):
    """Reinsurer premium for retaining the fraction ``b`` (scalar or array)."""
    if not 0 <= step < params.n_steps:
        raise IndexError(f"step {step} outside 0..{params.n_steps - 1}")
    arr = np.asarray(b, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError("retention must lie in [0, 1]")
    cost = (1.0 + params.theta) * params.lam * params.mu * (1.0 - arr) * params.dt
    return float(cost) if cost.ndim == 0 else cost


def reinsurance_cost_slope(params: ModelParams) -> float:
    """d c(b) / d b, constant under the expected-value principle."""
    return -(1.0 + params.theta) * params.lam * params.mu * params.dt


def ou_step(params: ModelParams, level, shock):
    """One step of the discretized OU perturbation.

    The shock is scaled by ``dt`` (not ``sqrt(dt)``); the two agree on the
    unit grid of the base model.
    """
    dt = params.dt
    return level + params.xi * (params.kappa - level) * dt + params.nu * dt * shock


def ou_paths(params: ModelParams, ou_noise: np.ndarray) -> np.ndarray:
    m, n = ou_noise.shape
    L = np.empty((m, n + 1))
    L[:, 0] = params.l0
    for i in range(n):
        L[:, i + 1] = ou_step(params, L[:, i], ou_noise[:, i])
    return L


def _block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=(int(block),))
    return np.random.Generator(np.random.PCG64(ss))


def _sample_block(params: ModelParams, seed: int, block: int):
    rng = _block_rng(seed, block)
    n = params.n_steps
    counts = rng.poisson(params.lam * params.dt, size=(BLOCK_SIZE, n))
    # a sum of k iid exponentials with mean mu is Gamma(k, mu); Gamma(0, .) is 0
    claims = rng.gamma(counts, params.mu)
    noise = rng.standard_normal((BLOCK_SIZE, n))
    return claims, noise


def sample_scenarios(
    params: ModelParams, m: int, seed: int, start: int = 0, workers: int = 1
) -> ScenarioBatch:
    """Sample claims and OU shocks for paths ``start .. start + m - 1``.

    Deterministic in ``(params, seed, path index)``: a sub-range sampled on
    its own equals the corresponding rows of a larger batch.
    """
    if m < 1:
        raise ValueError("batch size must be at least 1")
    if start < 0:
        raise ValueError("start must be non-negative")
    first, last = start // BLOCK_SIZE, (start + m - 1) // BLOCK_SIZE
    blocks = range(first, last + 1)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda k: _sample_block(params, seed, k), blocks))
    else:
        parts = [_sample_block(params, seed, k) for k in blocks]
    offset = start - first * BLOCK_SIZE
    claims = np.concatenate([p[0] for p in parts])[offset:offset + m]
    noise = np.concatenate([p[1] for p in parts])[offset:offset + m]
    return ScenarioBatch(claims=claims, ou_noise=noise, seed=seed, start=start)


def iter_scenario_chunks(
    params: ModelParams, m: int, seed: int, chunk: int = 16 * BLOCK_SIZE
) -> Iterator[ScenarioBatch]:
    """Yield consecutive slices of the size-m batch, ``chunk`` paths at a time."""
    for start in range(0, m, chunk):
        yield sample_scenarios(params, min(chunk, m - start), seed, start=start)


def constant_policy(b: float) -> Callable[[np.ndarray, int], np.ndarray]:
    """Policy function retaining the fixed fraction ``b`` at every step."""
    if not 0.0 <= b <= 1.0:
        raise ValueError("retention must lie in [0, 1]")
    return lambda x, step: np.full_like(x, b)


def surplus_step(params: ModelParams, x, b, level, claims, step: int):
    """One application of the surplus recursion."""
    return x + premium(params, step) - reinsurance_cost(params, b, step) + level - b * claims


def roll_surplus(
    params: ModelParams,
    scenarios: ScenarioBatch,
    policy_eval: Callable[[np.ndarray, int], np.ndarray],
) -> SurplusPathBatch:
    """Roll the surplus recursion forward under a feedback policy.

    ``policy_eval(surplus, step)`` maps the vector of current surpluses to
    retentions in [0, 1].  The horizon retention ``b_n = 1`` has no effect
    on the recorded grid values and is not stored.
    """
    S = scenarios.claims
    m, n = S.shape
    if n != params.n_steps:
        raise ValueError(f"scenarios have {n} steps, model has {params.n_steps}")
    L = ou_paths(params, scenarios.ou_noise)
    X = np.empty((m, n + 1))
    B = np.empty((m, n))
    X[:, 0] = params.initial_wealth
    for i in range(n):
        b = np.asarray(policy_eval(X[:, i], i), dtype=float)
        if np.any(~((b >= 0.0) & (b <= 1.0))):
            raise ValueError(f"policy returned retention outside [0, 1] at step {i}")
        B[:, i] = b
        X[:, i + 1] = surplus_step(params, X[:, i], b, L[:, i], S[:, i], i)
        bad = ~np.isfinite(X[:, i + 1])
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise NumericalError(f"non-finite surplus on path {scenarios.start + j} at step {i + 1}")
    return SurplusPathBatch(X=X, L=L, B=B, claims=S)
