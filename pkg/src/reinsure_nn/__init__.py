"""Neural-network proportional reinsurance policies for a perturbed
Cramér-Lundberg surplus, trained against a utility/ruin trade-off."""

__version__ = "0.1.0"

from .model import (
    ModelParams,
    NumericalError,
    ScenarioBatch,
    SurplusPathBatch,
    constant_policy,
    derive_seed,
    ou_step,
    premium,
    reinsurance_cost,
    roll_surplus,
    sample_scenarios,
)
from .objective import ObjectiveParams, running_min, scalarized_objective, surrogate_loss, utility
from .policy import MlpArchitecture, MlpPolicy, eval_retention, eval_retention_batch, init_policy
from .training import TrainConfig, adam_step, episode_loss_and_grad, train
