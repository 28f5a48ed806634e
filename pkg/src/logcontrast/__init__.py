"""Robust sparse log-contrast regression for compositional covariates.

A mean-shift vector absorbs outlying responses; sparse penalties on the
coefficients and the shifts are fitted under linear zero-sum constraints,
started from a robust initializer and tuned by robust cross-validation.
"""

__version__ = "0.1.0"

from .composition import (  # noqa: E402
    CompositionalDataset,
    ConstraintMatrix,
    Design,
    build_constraint,
    build_design,
    clr_transform,
    log_transform,
    projector_complement,
    replace_zeros,
    total_sum_normalize,
)
from .penalties import PenaltyKind, PenaltySpec, adaptive_weights, penalty_value, prox  # noqa: E402
from .psc import InitResult, robust_init  # noqa: E402
from .selection import CVResult, LambdaPath, RobustModel, lambda_grid, robust_cv, select_lambda  # noqa: E402
from .solver import (  # noqa: E402
    FitResult,
    RegressionProblem,
    default_penalty,
    dual_descent_fit,
    fit_path,
    refit_inliers,
    slcm_fit,
)
from .workflow import RobustFit, fit_robust, nonrobust_fit  # noqa: E402

__all__ = [
    "CVResult",
    "CompositionalDataset",
    "ConstraintMatrix",
    "Design",
    "FitResult",
    "InitResult",
    "LambdaPath",
    "PenaltyKind",
    "PenaltySpec",
    "RegressionProblem",
    "RobustFit",
    "RobustModel",
    "adaptive_weights",
    "build_constraint",
    "build_design",
    "clr_transform",
    "default_penalty",
    "dual_descent_fit",
    "fit_path",
    "fit_robust",
    "lambda_grid",
    "log_transform",
    "nonrobust_fit",
    "penalty_value",
    "projector_complement",
    "prox",
    "refit_inliers",
    "replace_zeros",
    "robust_cv",
    "robust_init",
    "select_lambda",
    "slcm_fit",
    "total_sum_normalize",
]
