"""Planar-arm trajectory optimization with Gaussian-process priors, restarted
accelerated gradient descent and moment-adapted stochastic descent for
escaping body-obstacle stuck cases."""

from .agd import AgdConfig, AgdResult, agd_minimize, agd_run
from .environment import Box, Circle, Scene, collision_cost, signed_distance, signed_distance_batch
from .gp import GPModel, State, Trajectory, build_gp, interpolate, sample, upsample_matrix
from .isago import IsagoConfig, PlanResult, Problem, plan
from .kinematics import ArmModel, Ccb, make_arm
from .objective import ObjectiveContext, check_stuck, evaluate, obs_cost, obs_grad
from .stoma import StomaConfig, StomaResult, stoma_run

__version__ = "0.1.0"

__all__ = [
    "AgdConfig",
    "AgdResult",
    "ArmModel",
    "Box",
    "Ccb",
    "Circle",
    "GPModel",
    "IsagoConfig",
    "ObjectiveContext",
    "PlanResult",
    "Problem",
    "Scene",
    "State",
    "StomaConfig",
    "StomaResult",
    "Trajectory",
    "agd_minimize",
    "agd_run",
    "build_gp",
    "check_stuck",
    "collision_cost",
    "evaluate",
    "interpolate",
    "make_arm",
    "obs_cost",
    "obs_grad",
    "plan",
    "sample",
    "signed_distance",
    "signed_distance_batch",
    "stoma_run",
    "upsample_matrix",
]
