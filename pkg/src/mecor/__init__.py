"""Measurement-error correction for continuous endpoints in two-arm trials."""

from mecor.calibration import CalibrationDataset, fit_differential, fit_systematic, theta1_significant
from mecor.correction import (
    ci_bootstrap,
    ci_delta,
    ci_fieller,
    ci_zero_variance,
    correct_differential,
    correct_systematic,
    naive_estimate,
    power_type2,
    sample_size_inflation,
    solve_sample_size,
)
from mecor.error_models import (
    Classical,
    Differential,
    Heteroscedastic,
    PrognosticFactor,
    Systematic,
    TrialGenerator,
    contaminate,
    generate_true,
    tau_from_r2,
)
from mecor.errors import MecorError
from mecor.stats_core import TrialDataset, ols_fit

__version__ = "0.1.0"

__all__ = [
    "CalibrationDataset",
    "Classical",
    "Differential",
    "Heteroscedastic",
    "MecorError",
    "PrognosticFactor",
    "Systematic",
    "TrialDataset",
    "TrialGenerator",
    "ci_bootstrap",
    "ci_delta",
    "ci_fieller",
    "ci_zero_variance",
    "contaminate",
    "correct_differential",
    "correct_systematic",
    "fit_differential",
    "fit_systematic",
    "generate_true",
    "naive_estimate",
    "ols_fit",
    "power_type2",
    "sample_size_inflation",
    "solve_sample_size",
    "tau_from_r2",
    "theta1_significant",
]
