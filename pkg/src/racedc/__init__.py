"""Distributed estimation by residual adjustment and projected pro-forma regression."""

from .aggregate import (
    C2ViolationError, GlobalEstimate, RaceFailure, gral_solve, gral_solve_arrays,
    race_linear, race_nonlinear, threshold,
)
from .baselines import (
    BaselineResult, DegenerateAggregateError, aee_nonlinear, dc_lasso, dc_pce, dc_ridge,
    full_oracle, simple_average,
)
from .datagen import (
    CovarianceSpec, DataBatch, LinearModelSpec, NonlinearModelSpec, gen_covariance,
    gen_linear_batches, gen_nonlinear_batches, pool,
)
from .local_estimators import (
    ConvergenceError, LocalFit, lasso_cv_fit, lasso_fit, nls_fit, ols_fit, pce_fit, ridge_fit,
)
from .remodel import AdjustmentSpec, ProjectedRecord, ProjectionSpec, project_linear
from ._linalg import SingularSystemError

__version__ = "0.1.0"
