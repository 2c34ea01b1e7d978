"""procuraudit - regression over the amount (OLS, exclude-and-refit, standardized residuals)

Coefficients are solved through a reduced QR factorization rather than the
normal equations; X^T X squares the condition number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from loguru import logger
from scipy.linalg import solve_triangular

from errors import DegenerateAfterExclusionError, DimensionError, SingularDesignError

# sigma below this (relative to max|y|) counts as an exact fit
EXACT_FIT_RTOL = 1e-10


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray       # intercept first
    residual_std: float
    n_used: int
    excluded_rows: frozenset = field(default_factory=frozenset)
    exact_fit: bool = False

    @property
    def n_coefficients(self) -> int:
        return len(self.coefficients)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_coefficients:
            raise DimensionError(f"design has shape {X.shape}, model has {self.n_coefficients} coefficients")
        return X @ self.coefficients

    def to_json(self) -> str:
        return json.dumps({
            "coefficients": [float(c) for c in self.coefficients],
            "sigma": self.residual_std,
            "n_used": self.n_used,
            "excluded": sorted(self.excluded_rows),
        })

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


@dataclass(frozen=True)
class ResidualScores:
    residual: np.ndarray
    z: np.ndarray
    overspend_flag: np.ndarray


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionError(f"design {X.shape} does not match response {y.shape}")
    return X, y


def fit_ols(X, y) -> LinearModel:
    """Least squares with sigma = sqrt(RSS / (n - p))."""
    X, y = _check_xy(X, y)
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"need more rows than coefficients, got n={n}, p={p}")
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesignError(f"design matrix is rank deficient (p={p})")

    q, r = np.linalg.qr(X)
    beta = solve_triangular(r, q.T @ y)
    resid = y - X @ beta
    sigma = math.sqrt(float(resid @ resid) / (n - p))
    scale = max(1.0, float(np.max(np.abs(y))))
    return LinearModel(
        coefficients=beta,
        residual_std=sigma,
        n_used=n,
        exact_fit=sigma <= EXACT_FIT_RTOL * scale,
    )


def _standardize(model: LinearModel, resid: np.ndarray) -> np.ndarray:
    if model.exact_fit or model.residual_std == 0.0:
        return np.zeros_like(resid)
    return resid / model.residual_std


def residual_scores(model: LinearModel, X, y, z_threshold: float = 3.0) -> ResidualScores:
    """r = y - X b, z = r / sigma. Only over-utilization (z > threshold) is flagged."""
    X, y = _check_xy(X, y)
    resid = y - model.predict(X)
    z = _standardize(model, resid)
    return ResidualScores(residual=resid, z=z, overspend_flag=(z > z_threshold).astype(np.int8))


def robust_fit(X, y, z_threshold: float = 3.0, max_iter: int = 5, row_keys=None) -> LinearModel:
    """Fit, drop rows with |z| > z_threshold from the fitting set, refit; repeat.

    Stops when nothing is dropped or after max_iter rounds. excluded_rows
    holds the keys of every dropped row.
    """
    X, y = _check_xy(X, y)
    n, p = X.shape
    keys = list(row_keys) if row_keys is not None else list(range(n))
    if len(keys) != n:
        raise DimensionError(f"{len(keys)} row keys for {n} rows")

    included = np.ones(n, dtype=bool)
    model = fit_ols(X, y)
    for iteration in range(max_iter):
        idx = np.flatnonzero(included)
        z = _standardize(model, y[idx] - X[idx] @ model.coefficients)
        drop = idx[np.abs(z) > z_threshold]
        if drop.size == 0:
            break
        included[drop] = False
        remaining = int(included.sum())
        logger.debug(f"[regress] round {iteration + 1}: excluded {drop.size}, {remaining} rows left")
        if remaining <= p:
            raise DegenerateAfterExclusionError(f"only {remaining} rows left for {p} coefficients")
        try:
            model = fit_ols(X[included], y[included])
        except SingularDesignError as e:
            raise DegenerateAfterExclusionError(str(e)) from e

    excluded = frozenset(keys[i] for i in np.flatnonzero(~included))
    logger.info(f"[regress] fitted on {model.n_used} rows, excluded {len(excluded)}, sigma={model.residual_std:.4g}")
    return replace(model, excluded_rows=excluded)


def design_from_matrix(matrix, predictors=("num:log_cuantia",), target="num:log_valor_definitivo"):
    """[1 | predictors] and y from FeatureMatrix columns.

    Returns (X, y, complete) where complete marks rows none of whose inputs
    were imputed.
    """
    n = matrix.shape[0]
    X = np.column_stack([np.ones(n)] + [matrix.column(c) for c in predictors])
    y = matrix.column(target)
    complete = np.ones(n, dtype=bool)
    for name in list(predictors) + [target]:
        flag = "flag:missing_" + name.split(":", 1)[1]
        if flag in matrix.column_names:
            complete &= matrix.column(flag) == 0
    return X, y, complete
