"""Causal mediation analysis from many randomized trials."""

__version__ = "0.1.0"

from .drf import PolynomialDrf, elasticity, evaluate, select_order, wald_battery
from .estimators import (
    DrfEstimate,
    cmma,
    full_sample_2sls,
    liml_estimator,
    lsem,
    sobel_iv,
    weight_adjusted_2sls,
)
from .model import Dataset, TrialRegistry, TrialSummary, check_relevance, summarize_trials
from .simulate import SimulationConfig, generate, run_benchmark

__all__ = [
    "Dataset",
    "DrfEstimate",
    "PolynomialDrf",
    "SimulationConfig",
    "TrialRegistry",
    "TrialSummary",
    "check_relevance",
    "cmma",
    "elasticity",
    "evaluate",
    "full_sample_2sls",
    "generate",
    "liml_estimator",
    "lsem",
    "run_benchmark",
    "select_order",
    "sobel_iv",
    "summarize_trials",
    "wald_battery",
    "weight_adjusted_2sls",
]
