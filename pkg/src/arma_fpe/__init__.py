"""Conditional least squares for ARMA models with moment and prediction-error diagnostics."""

from .arma_core import (
    ArmaParams,
    ModelOrder,
    NoiseSpec,
    ParamSpace,
    Series,
    decay_fit,
    derivative_path,
    expand_rational,
    filter_bank,
    residuals,
    simulate,
    validate_params,
)
from .estimator import FitConfig, FitReport, fit, fpe, predict_one_step, select_order, sum_of_squares

__version__ = "0.1.0"
