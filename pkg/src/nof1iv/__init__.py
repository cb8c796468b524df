"""Causal effect estimation for randomized n-of-1 trials with imperfect compliance.

The package covers instrumental-variable and intention-to-treat estimation,
exact randomization tests, confidence intervals by test inversion, a
simulator for ten linear and non-linear response models, and a reproducible
Monte Carlo harness.
"""
from .errors import (
    CannotInvertError,
    ConfigError,
    DataError,
    DegenerateInstrumentError,
    DegenerateRegressionError,
    EmptyIntervalError,
    InvalidArgumentError,
    Nof1Error,
    UndefinedEstimatorError,
)
from .estimators import (
    EstimateReport,
    estimate_ace_z_on_x,
    estimate_ace_z_on_y,
    estimate_itt,
    estimate_iv,
    full_report,
    naive_t_test,
    residualize_on_w,
    sample_cov,
)
from .rand_inference import (
    PValueProfile,
    RandTestConfig,
    RandTestResult,
    ci_from_profile,
    pvalue_profile,
    rand_test_location,
    rand_test_sharp_null,
)
from .sim_models import (
    ComplianceKind,
    ComplianceSpec,
    ErrorFamily,
    ModelSpec,
    ResponseFamily,
    ResponseModelSpec,
    SelectionMechanism,
    SelectionSpec,
    TrialSeries,
    apply_selection,
    simulate_compliance,
    simulate_instrument,
    simulate_response,
    simulate_trial,
)

__version__ = "0.1.0"
