"""Budgeted kernelized bandits (BKB) next to exact GP-UCB on finite arm sets."""

from .bkb import BetaMode, BkbParams, Trace, VarSum, run_bkb, run_gpucb
from .dictionary import SamplingParams, make_rng, qbar_floor
from .environment import Environment, fig1_environment, gp_environment
from .gp_exact import ExactPosterior
from .kernels import Family, KernelSpec, gram

__all__ = [
    "BetaMode",
    "BkbParams",
    "Environment",
    "ExactPosterior",
    "Family",
    "KernelSpec",
    "SamplingParams",
    "Trace",
    "VarSum",
    "fig1_environment",
    "gp_environment",
    "gram",
    "make_rng",
    "qbar_floor",
    "run_bkb",
    "run_gpucb",
]

__version__ = "0.1.0"
