"""Adaptive-sampling proximal gradient methods for stochastic composite problems."""

from .controllers import ControllerConfig
from .problems import LogisticL1Instance, PoolQuadratic, exact_phi, make_pool_quadratic
from .prox import ProxFunction
from .solver import RunRecord, SolverConfig, solve, solve_deterministic

__version__ = "0.1.0"

__all__ = [
    "ControllerConfig",
    "LogisticL1Instance",
    "PoolQuadratic",
    "ProxFunction",
    "RunRecord",
    "SolverConfig",
    "exact_phi",
    "make_pool_quadratic",
    "solve",
    "solve_deterministic",
]
