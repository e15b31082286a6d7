"""Learning a turn-limited pursuer's engagement envelope from sacrificial
straight-line probes, selecting informative probes actively, and planning
time-optimal evader paths around everything still consistent with the data.
"""

from .domain import (
    CandidateSet,
    Dataset,
    InterceptionModel,
    LearningCase,
    TrialRecord,
)
from .geometry import (
    ParamBounds,
    PursuerParams,
    ez_value,
    ez_values,
    rr_gradient,
    rr_gradients,
    rr_value,
    rr_values,
    turn_straight_length,
)
from .inference import OptimizerConfig, run_learning_loop
from .losses import LossConfig, total_loss, total_loss_gradient
from .metrics import GridSpec, param_error, region_metrics
from .planner import (
    KinematicLimits,
    SplinePath,
    plan_safe_path,
    validate_path,
)
from .selection import SelectionGrid, d_gain, expected_d_gain, select_bed, select_boundary
from .truthsim import NoiseSpec, TrajectorySpec, simulate_engagement

__all__ = [
    "CandidateSet",
    "Dataset",
    "GridSpec",
    "InterceptionModel",
    "KinematicLimits",
    "LearningCase",
    "LossConfig",
    "NoiseSpec",
    "OptimizerConfig",
    "ParamBounds",
    "PursuerParams",
    "SelectionGrid",
    "SplinePath",
    "TrajectorySpec",
    "TrialRecord",
    "ez_value",
    "ez_values",
    "param_error",
    "plan_safe_path",
    "region_metrics",
    "rr_gradient",
    "rr_gradients",
    "rr_value",
    "rr_values",
    "run_learning_loop",
    "d_gain",
    "expected_d_gain",
    "select_bed",
    "select_boundary",
    "simulate_engagement",
    "total_loss",
    "total_loss_gradient",
    "turn_straight_length",
    "validate_path",
]
