"""Covariance-parameter estimation for gridded Gaussian random fields.

Grid-search maximum likelihood and neural-network estimators (on raw fields
or on empirical variograms) for the Matern(nu=1) model with a nugget.
"""

from .errors import CovestError, DomainError, FormatError, InputError, NumericalError, TrainingError
from .gp import (
    CovParams,
    FactorCache,
    FieldStack,
    GridGeometry,
    build_cov,
    concentrated_loglik,
    edf,
    lambda_for_edf,
    loglik,
    matern_nu1,
    profile_sigma2,
    simulate,
    spectral_factor,
)
from .grids import ParamGrid, ScalingStats, scale, scaling_stats, test_grid, training_grid, unscale
from .ml import EstimateRecord, ml_fit, ml_fit_batch
from .variogram import empirical_variogram, lag_table, variogram_stack

__version__ = "0.1.0"
