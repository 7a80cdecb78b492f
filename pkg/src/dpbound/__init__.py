"""Certified upper bounds on system failure probability from per-component validation data."""

from .baselines import clopper_pearson_upper, gp_fit, gp_predict, gp_sample, mccp, surr_model_bound
from .benchmarks import BENCHMARK_NAMES, calibrate_threshold, make_benchmark, make_misfit_models, make_validation_data
from .empirical import SignalRoute, WeightedSamples, mmd_biased, mmd_biased_sq, mmd_unbiased, mmd_unbiased_sq
from .failure import FailureProgramConfig, build_grid, failure_bound
from .graph import Component, ComponentGraph, simulate
from .harness import RunConfig, ValidationReport, aggregate, gaussian_illustration, run_validation
from .kernels import KernelFamily, KernelSpec, gram
from .propagation import build_sdp, estimate_input_bounds, run_propagation, solve_bound
from .tuning import search_lengthscales

__version__ = "0.1.0"
