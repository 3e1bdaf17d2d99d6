"""Weak-instrument-robust inference for marginal treatment effect models.

Submodules
----------
data
    CSV loading, per-cell statistics and their covariance estimates.
basis, weights
    Polynomial MTE design matrices and target weight vectors.
linear
    AR and conditional Wald tests for linear MTE models, and test inversion.
mlc
    MLC tests, classical Wald and the identification pretest for any order.
aggregate
    Combining covariate-cell intervals into one for the population target.
bias
    Misspecification bias of pooled regressions and the singularity check.
montecarlo
    Simulation designs, size surfaces and power curves.
cli
    The ``mte`` command.

The inference modules are not imported here so that ``mte --help`` stays fast.
"""
from .basis import MteSpec, build_A, build_H, build_Mj, basis_h, control_lambda, control_lambda_deriv
from .data import CellStats, CovarianceSet, Dataset, cell_stats, covariance_estimates, load_csv
from .errors import ConfigError, DataError, MteError, NumericalError, OverlapError
from .results import ConfidenceSet, TestResult
from .weights import PolicySpec, Target, WeightVector, counterfactual_propensity, weight_vector

__version__ = "0.1.0"
