"""Feedforward retention policies with a logistic readout.

A policy maps the current surplus to a retention level in (0, 1):
affine -> tanh for every hidden layer, then affine -> logistic.  The same
network is evaluated at every step of an episode.  With ``input_dim=2`` the
step index is appended as a second input feature, giving a time-dependent
policy from a single shared network.

Affine maps use ``np.einsum`` rather than BLAS so that each row's result is
independent of the batch it is evaluated in.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .model import NumericalError

_MAGIC = b"RNNPOL"
_VERSION = 1
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int = 1
    hidden_layers: Tuple[int, ...] = (32, 32)
    hidden_activation: str = "tanh"
    output_squash: str = "logistic"
    # fixed affine conditioning of the surplus input, (x - shift) / scale
    input_shift: float = 0.0
    input_scale: float = 1.0
    # start the readout weights at zero so the initial policy is constant
    zero_output_init: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim not in (1, 2):
            raise ValueError("input_dim must be 1 (surplus) or 2 (surplus, step)")
        if not self.hidden_layers or min(self.hidden_layers) < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_squash != "logistic":
            raise ValueError(f"unsupported output squash {self.output_squash!r}")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_layers, 1]

    @property
    def parameter_count(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


@dataclass
class MlpPolicy:
    architecture: MlpArchitecture
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        """All parameters in checkpoint order: W0, b0, W1, b1, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "MlpPolicy":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.parameter_count,):
            raise ValueError("parameter vector has the wrong length")
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[k:k + w.size].reshape(w.shape).copy())
            k += w.size
            bs.append(vec[k:k + b.size].copy())
            k += b.size
        return MlpPolicy(self.architecture, ws, bs)

    def copy(self) -> "MlpPolicy":
        return self.with_flat(self.flat())


def init_policy(arch: MlpArchitecture, seed: int) -> MlpPolicy:
    """Glorot-uniform weights, zero biases.

    With ``arch.zero_output_init`` the readout weights are zeroed after
    sampling, so every initial policy retains exactly one half at every
    surplus level."""
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    s = arch.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    if arch.zero_output_init:
        ws[-1][:] = 0.0
    return MlpPolicy(arch, ws, bs)


def zero_policy(arch: MlpArchitecture) -> MlpPolicy:
    s = arch.layer_sizes
    return MlpPolicy(
        arch,
        [np.zeros((a, b)) for a, b in zip(s[:-1], s[1:])],
        [np.zeros(b) for b in s[1:]],
    )


def _affine(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    z = np.einsum("ij,jk->ik", h, w)
    z += b
    return z


def features(arch: MlpArchitecture, surplus: np.ndarray, step: int = 0) -> np.ndarray:
    x = (np.asarray(surplus, dtype=float).reshape(-1) - arch.input_shift) / arch.input_scale
    if arch.input_dim == 1:
        return x[:, None]
    return np.column_stack([x, np.full_like(x, float(step))])


def forward(policy: MlpPolicy, surplus: np.ndarray, step: int = 0):
    """Batch forward pass.  Returns ``(retention, hidden activations)``;
    the activation list starts with the input features."""
    h = features(policy.architecture, surplus, step)
    acts = [h]
    last = len(policy.weights) - 1
    for k, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        z = _affine(h, w, b)
        if k < last:
            h = np.tanh(z, out=z)
            acts.append(h)
    return expit(z[:, 0]), acts


def eval_retention_batch(policy: MlpPolicy, surpluses, step: int = 0) -> np.ndarray:
    x = np.asarray(surpluses, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite surplus passed to policy")
    return forward(policy, x, step)[0]


def eval_retention(policy: MlpPolicy, surplus: float, step: int = 0) -> float:
    return float(eval_retention_batch(policy, np.array([surplus], dtype=float), step)[0])


def policy_fn(policy: MlpPolicy):
    """Adapter to the ``(surplus, step) -> retention`` callable used by rollouts."""
    return lambda x, step: eval_retention_batch(policy, x, step)


def policy_to_bytes(policy: MlpPolicy) -> bytes:
    """Checkpoint layout: magic, version, JSON architecture header, then the
    parameters in layer order as little-endian float64, row-major."""
    header = json.dumps(asdict(policy.architecture), sort_keys=True).encode()
    payload = policy.flat().astype("<f8").tobytes()
    return _MAGIC + struct.pack("<HI", _VERSION, len(header)) + header + payload


def policy_from_bytes(data: bytes) -> MlpPolicy:
    if not data.startswith(_MAGIC):
        raise ValueError("not a policy checkpoint")
    version, hlen = struct.unpack_from("<HI", data, len(_MAGIC))
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = len(_MAGIC) + struct.calcsize("<HI")
    arch = MlpArchitecture(**json.loads(data[off:off + hlen]))
    params = np.frombuffer(data[off + hlen:], dtype="<f8").astype(float)
    return zero_policy(arch).with_flat(params)


def save_policy(policy: MlpPolicy, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(policy_to_bytes(policy))
    tmp.replace(path)


def load_policy(path) -> MlpPolicy:
    return policy_from_bytes(Path(path).read_bytes())


def retention_text(policy: MlpPolicy, grid: Sequence[float], step: int = 0) -> str:
    """Plain-text table of ``x b(x)`` on a surplus grid."""
    grid = np.asarray(grid, dtype=float)
    b = eval_retention_batch(policy, grid, step)
    lines = ["# surplus retention"]
    lines += [f"{x:.17g} {v:.17g}" for x, v in zip(grid, b)]
    return "\n".join(lines) + "\n"
