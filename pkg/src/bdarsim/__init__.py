"""Simulator and numerical toolkit for balanced dynamic alternative routing
on the complete graph: exact jump-chain simulation with a compiled core,
coupled chains for mixing experiments, the mean-field drift with its ODE and
fixed-point solvers, equilibrium statistics, and an exact small-instance
oracle."""

from .core import ModelParams, NetworkState
from .jumpchain import (
    VARIANT_BDAR,
    VARIANT_FDAR,
    RunTally,
    simulate,
    steps_for_time,
)
from .kernels import COMPILED

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "NetworkState",
    "RunTally",
    "simulate",
    "steps_for_time",
    "VARIANT_BDAR",
    "VARIANT_FDAR",
    "COMPILED",
    "__version__",
]
