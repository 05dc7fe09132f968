"""Vaccine-effectiveness estimation for test-negative designs with several
reasons for testing: simulation, stratum estimators, kernel curves, inference
and a Monte Carlo harness."""
from .backend import BACKEND
from .demo import demo_bias
from .errors import TNDError
from .estimators import (
    Estimand,
    Method,
    VeEstimate,
    combine_estimates,
    estimate_pooled_naive,
    estimate_stratum_ve,
    estimate_ve_curve,
    rrp_convert,
    rrp_infer,
)
from .glm import GlmFit, fit_glm
from .inference import combined_variance, equality_test
from .kernel import kernel_curve
from .montecarlo import run_curve_monte_carlo, run_monte_carlo
from .simulate import Dataset, Reason, ScenarioConfig, generate_dataset, true_ve

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "Estimand", "GlmFit", "Method", "Reason", "ScenarioConfig", "TNDError",
    "VeEstimate", "combine_estimates", "combined_variance", "demo_bias", "equality_test",
    "estimate_pooled_naive", "estimate_stratum_ve", "estimate_ve_curve", "fit_glm", "generate_dataset",
    "kernel_curve", "rrp_convert", "rrp_infer", "run_curve_monte_carlo", "run_monte_carlo", "true_ve",
]
