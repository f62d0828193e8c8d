"""Interface reduced magnetic vector potential (RMVP) eddy-current solver with curl-conforming splines."""

from .domain import MU0, FrequencySettings, MultipatchDomain, build_cylinder_in_box
from .solver import RMVPResult, solve_rmvp, total_field
from .source import CoilSource, KernelRule, build_helicoidal_coil, circular_coil, eval_A_s, eval_B_s
from .spaces import CurlSpace

__version__ = "0.1.0"

__all__ = [
    "MU0",
    "FrequencySettings",
    "MultipatchDomain",
    "build_cylinder_in_box",
    "RMVPResult",
    "solve_rmvp",
    "total_field",
    "CoilSource",
    "KernelRule",
    "build_helicoidal_coil",
    "circular_coil",
    "eval_A_s",
    "eval_B_s",
    "CurlSpace",
]
