"""Lipschitz-budget stability certificates and certified neural perturbation training."""

from .certificate import (
    QcMultipliers,
    StabilityCertificate,
    Verdict,
    certify_multipliers,
    max_level,
    verify_certificate,
)
from .conic import SdpProblem, SdpSolution, Status
from .interval import Box, Interval, bound_range
from .model import (
    ParamBox,
    PlantModel,
    SafePolytope,
    example_params,
    example_plant,
    example_polytope,
    linearize,
)
from .policy import Mlp, TrainConfig, lipschitz_upper_bound, project_to_lipschitz, train
from .sector import SectorBound, compute_sector, uncertainty_vertices
from .sim import lqr_gain, monte_carlo_eval, rk4_rollout, utility
from .synthesis import SynthesisConfig, SynthesisResult, init_nominal, synthesize

__all__ = [
    "Box", "Interval", "Mlp", "ParamBox", "PlantModel", "QcMultipliers", "SafePolytope", "SdpProblem",
    "SdpSolution", "SectorBound", "StabilityCertificate", "Status", "SynthesisConfig", "SynthesisResult",
    "TrainConfig", "Verdict", "bound_range", "certify_multipliers", "compute_sector", "example_params",
    "example_plant", "example_polytope", "init_nominal", "linearize", "lipschitz_upper_bound", "lqr_gain",
    "max_level", "monte_carlo_eval", "project_to_lipschitz", "rk4_rollout", "synthesize", "train",
    "uncertainty_vertices", "utility", "verify_certificate",
]
