"""Flat ``key = value`` run configuration.

Unspecified keys take the base-model values; the ``scale`` key selects the
desk-sized or full training protocol before individual overrides apply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from .experiments import DEFAULT_BETAS, DEFAULT_GAMMAS
from .model import ModelParams
from .objective import ObjectiveParams
from .policy import MlpArchitecture
from .training import TrainConfig

EXPERIMENTS = ("baseline", "gamma-sweep", "train", "retention-curve", "pareto")

# config key -> ModelParams field
MODEL_KEYS = {
    "initial_wealth": "initial_wealth",
    "time_horizon": "time_horizon",
    "n_steps": "n_steps",
    "lambda": "lam",
    "mu": "mu",
    "eta": "eta",
    "theta": "theta",
    "alpha": "alpha",
    "kappa": "kappa",
    "xi": "xi",
    "nu": "nu",
    "ou_initial": "ou_initial",
}
OBJECTIVE_KEYS = ("beta", "gamma")
ARCH_KEYS = ("hidden_layers", "input_dim", "input_normalization", "input_shift", "input_scale", "zero_output_init")
TRAIN_KEYS = (
    "n_batches",
    "batch_size",
    "initial_lr",
    "plateau_patience",
    "lr_decay_factor",
    "min_lr",
    "early_stop_patience",
    "eval_batch_size",
    "test_size",
    "epoch_batches",
    "improvement_tol",
    "fixed_dataset",
)
RUN_KEYS = (
    "seed",
    "scale",
    "output_dir",
    "betas",
    "gammas",
    "baseline_size",
    "sweep_size",
    "grid_min",
    "grid_max",
    "grid_step",
    "policy",
)
VALID_KEYS = tuple(MODEL_KEYS) + OBJECTIVE_KEYS + ARCH_KEYS + TRAIN_KEYS + RUN_KEYS

_INT_KEYS = {
    "n_steps", "input_dim", "n_batches", "batch_size", "plateau_patience", "early_stop_patience",
    "eval_batch_size", "test_size", "epoch_batches", "seed", "baseline_size", "sweep_size",
}
_BOOL_KEYS = {"fixed_dataset", "input_normalization", "zero_output_init"}
_STR_KEYS = {"scale", "output_dir", "policy"}
_LIST_KEYS = {"hidden_layers", "betas", "gammas"}

SCALE_DEFAULTS = {
    "desk": dict(n_batches=2000, batch_size=2**12, eval_batch_size=2**15, test_size=2**20,
                 baseline_size=2**22, sweep_size=2**22),
    "paper": dict(n_batches=2000, batch_size=2**14, eval_batch_size=2**16, test_size=2**25,
                  baseline_size=2**25, sweep_size=2**25),
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw) -> object:
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if key in _LIST_KEYS:
            items = [t for t in s.replace(";", ",").split(",") if t.strip()]
            conv = int if key == "hidden_layers" else float
            return tuple(conv(t) for t in items)
        if key in _BOOL_KEYS:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if key in _STR_KEYS:
            return s
        if key == "ou_initial" and s.lower() in ("", "none"):
            return None
        if key in _INT_KEYS:
            return int(float(s)) if float(s).is_integer() else int(s)
        return float(s)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> Dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    model: ModelParams
    objective: ObjectiveParams
    architecture: MlpArchitecture
    training: TrainConfig
    experiment: Optional[str] = None
    output_dir: Path = Path("results")
    scale: str = "desk"
    seed: int = 0
    betas: Tuple[float, ...] = DEFAULT_BETAS
    gammas: Tuple[float, ...] = DEFAULT_GAMMAS
    baseline_size: int = 2**22
    sweep_size: int = 2**22
    grid: Tuple[float, float, float] = (-1.0, 10.0, 0.05)
    policy: Optional[str] = None
    resolved: Dict[str, object] = field(default_factory=dict)


def normalization_from_model(model: ModelParams) -> Tuple[float, float]:
    """Input shift and scale: initial capital, and the expected aggregate
    claims over the horizon."""
    scale = model.lam * model.mu * model.time_horizon
    return model.initial_wealth, scale if scale > 0 else 1.0


def load_config(
    path=None, overrides: Optional[Mapping[str, object]] = None, experiment: Optional[str] = None
) -> RunConfig:
    """Resolve a run configuration from an optional file plus overrides.

    Precedence: overrides > file > scale preset > base-model defaults.
    """
    values: Dict[str, object] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    unknown = sorted(set(values) - set(VALID_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}; valid keys: {', '.join(VALID_KEYS)}")
    values = {k: _parse_value(k, v) for k, v in values.items()}

    scale = values.get("scale", "desk")
    if scale not in SCALE_DEFAULTS:
        raise ConfigError("scale must be 'desk' or 'paper'")
    resolved = dict(SCALE_DEFAULTS[scale])
    resolved.update(values)

    try:
        model = ModelParams(**{MODEL_KEYS[k]: resolved[k] for k in MODEL_KEYS if k in resolved})
        objective = ObjectiveParams(
            beta=resolved.get("beta", 0.4), gamma=resolved.get("gamma", 10.0), alpha=model.alpha
        )
        arch_kw = {}
        if "hidden_layers" in resolved:
            arch_kw["hidden_layers"] = resolved["hidden_layers"]
        for k in ("input_dim", "zero_output_init"):
            if k in resolved:
                arch_kw[k] = resolved[k]
        if resolved.get("input_normalization", True):
            arch_kw["input_shift"], arch_kw["input_scale"] = normalization_from_model(model)
        for k in ("input_shift", "input_scale"):
            if k in resolved:
                arch_kw[k] = resolved[k]
        architecture = MlpArchitecture(**arch_kw)
        seed = int(resolved.get("seed", 0))
        training = TrainConfig(seed=seed, **{k: resolved[k] for k in TRAIN_KEYS if k in resolved})
        betas = tuple(resolved.get("betas", DEFAULT_BETAS))
        if any(not 0 <= b <= 1 for b in betas):
            raise ValueError("betas must lie in [0, 1]")
        gammas = tuple(resolved.get("gammas", DEFAULT_GAMMAS))
        if any(not g > 0 for g in gammas):
            raise ValueError("gammas must be positive")
        grid = (
            float(resolved.get("grid_min", -1.0)),
            float(resolved.get("grid_max", 10.0)),
            float(resolved.get("grid_step", 0.05)),
        )
        if not (grid[2] > 0 and grid[1] >= grid[0]):
            raise ValueError("surplus grid needs grid_step > 0 and grid_max >= grid_min")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if experiment is not None and experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")

    full = {k: resolved.get(k) for k in VALID_KEYS}
    full.update({k: getattr(model, f) for k, f in MODEL_KEYS.items()})
    full.update(beta=objective.beta, gamma=objective.gamma, seed=seed, scale=scale,
                hidden_layers=architecture.hidden_layers, input_dim=architecture.input_dim,
                input_shift=architecture.input_shift, input_scale=architecture.input_scale,
                zero_output_init=architecture.zero_output_init,
                input_normalization=bool(resolved.get("input_normalization", True)),
                betas=betas, gammas=gammas, grid_min=grid[0], grid_max=grid[1], grid_step=grid[2],
                baseline_size=int(resolved["baseline_size"]), sweep_size=int(resolved["sweep_size"]),
                output_dir=str(resolved.get("output_dir", "results")))
    full.update({k: getattr(training, k) for k in TRAIN_KEYS})
    return RunConfig(
        model=model,
        objective=objective,
        architecture=architecture,
        training=training,
        experiment=experiment,
        output_dir=Path(full["output_dir"]),
        scale=scale,
        seed=seed,
        betas=betas,
        gammas=gammas,
        baseline_size=int(resolved["baseline_size"]),
        sweep_size=int(resolved["sweep_size"]),
        grid=grid,
        policy=resolved.get("policy"),
        resolved=full,
    )


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return "" if v is None else str(v)


def format_key_values(d: Mapping[str, object]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in d.items())
