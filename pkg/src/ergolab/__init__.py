"""
ergolab - transfer operators, equilibrium states and their statistics for skew products
"""

from .__version__ import __version__
from .base_dynamics import IntervalMap, check_structure, doubling, l_adic, manneville_pomeau, piecewise_affine
from .config import ExperimentConfig, settings
from .exceptions import (
    BranchError,
    BuilderNotFoundError,
    ClassSViolation,
    ConfigurationError,
    ErgolabError,
    HypothesisViolation,
    InvalidInputError,
    MeasureError,
    PotentialError,
    SpectralError,
    StabilityError,
    TransferError,
)
from .experiments import run_experiment
from .measures import AtomicMeasure, LeafFamily, wk_norm
from .skew_transfer import SkewSystem, equilibrium

__all__ = [
    "__version__",
    "IntervalMap",
    "check_structure",
    "doubling",
    "l_adic",
    "manneville_pomeau",
    "piecewise_affine",
    "ExperimentConfig",
    "settings",
    "run_experiment",
    "AtomicMeasure",
    "LeafFamily",
    "wk_norm",
    "SkewSystem",
    "equilibrium",
    "ErgolabError",
    "InvalidInputError",
    "BranchError",
    "PotentialError",
    "SpectralError",
    "MeasureError",
    "TransferError",
    "ClassSViolation",
    "HypothesisViolation",
    "StabilityError",
    "ConfigurationError",
    "BuilderNotFoundError",
]
