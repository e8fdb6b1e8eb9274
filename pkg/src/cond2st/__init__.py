"""Conditional two-sample testing.

Two routes are provided: converting a conditional independence test
(:func:`cond2st.cit.convert`, with the GCM built in) and comparing marginal
distributions after density-ratio reweighting (:mod:`cond2st.drt`).
"""

from .cit import CitAdapter, convert, gcm_statistic, gcm_test, kstar
from .core import (
    Cond2STError,
    DegenerateVariance,
    DimensionMismatch,
    InvalidData,
    PairedData,
    PooledData,
    SplitTooSmall,
    TestOutcome,
    make_rng,
    pool,
    split_paired,
)
from .drt import (
    DrtConfig,
    classifier_test,
    classifier_test_cv,
    mean_comparison,
    mmd_linear_test,
    mmd_linear_test_cv,
    mmd_quadratic_estimate,
    weighted_rank_sum,
)
from .harness import ExperimentPlan, RejectionSummary, emit_report, load_csv, run_monte_carlo
from .kernels import KernelSpec, gram, kernel_eval
from .ratio import DensityRatioModel, estimate_ratio, fit_klr, fit_ll, predict_ratio
from .synth import BiasSpec, ScenarioConfig, biased_subsample, gen_scenario, true_marginal_ratio

__version__ = "0.1.0"

__all__ = [
    "BiasSpec", "CitAdapter", "Cond2STError", "DegenerateVariance", "DensityRatioModel",
    "DimensionMismatch", "DrtConfig", "ExperimentPlan", "InvalidData", "KernelSpec",
    "PairedData", "PooledData", "RejectionSummary", "ScenarioConfig", "SplitTooSmall",
    "TestOutcome", "biased_subsample", "classifier_test", "classifier_test_cv", "convert",
    "emit_report", "estimate_ratio", "fit_klr", "fit_ll", "gcm_statistic", "gcm_test",
    "gen_scenario", "gram", "kernel_eval", "kstar", "load_csv", "make_rng", "mean_comparison",
    "mmd_linear_test", "mmd_linear_test_cv", "mmd_quadratic_estimate", "pool",
    "predict_ratio", "run_monte_carlo", "split_paired", "true_marginal_ratio",
    "weighted_rank_sum",
]
