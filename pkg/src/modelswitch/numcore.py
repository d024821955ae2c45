"""Penalised least squares, AIC ridge selection and the cap operator.

The ridge objective is ``(1/n) * RSS + rho * sum(b_k**2)`` over the penalised
coefficients, so the normal equations read ``(X'X + n*rho*I_pen) b = X'y``.
The intercept, when a basis declares one, is column 0 and is left
unpenalised unless ``penalize_intercept`` is set.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, IllConditionedError, InputDomainError

DEFAULT_RHO_GRID = (0.0,) + tuple(float(x) for x in np.logspace(-8, 2, 25))


@dataclass(frozen=True)
class RidgeConfig:
    rho: float = 0.0
    penalize_intercept: bool = False
    rho_grid: tuple = ()

    def __post_init__(self):
        if not self.rho >= 0.0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        grid = tuple(float(r) for r in self.rho_grid)
        if any(r < 0 or not math.isfinite(r) for r in grid):
            raise ConfigError(f"rho_grid entries must be finite and >= 0: {grid}")
        if len(set(grid)) != len(grid):
            raise ConfigError(f"rho_grid has repeated values: {grid}")
        object.__setattr__(self, "rho_grid", tuple(sorted(grid)))


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    cap: float = math.inf
    rss: float = 0.0
    effective_dof: float = 0.0
    rho: float = 0.0
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64)
        if not np.all(np.isfinite(coef)):
            raise InputDomainError("coefficients must be finite")
        if not self.cap >= 0:
            raise InputDomainError(f"cap must be >= 0, got {self.cap}")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    def with_cap(self, cap):
        return LinearFit(self.coefficients, cap, self.rss, self.effective_dof, self.rho, self.degenerate)


def cap(x, B):
    """``sign(x) * min(|x|, B)``; works elementwise on arrays, B may be inf."""
    if isinstance(x, np.ndarray):
        return np.clip(x, -B, B)
    return math.copysign(min(abs(x), B), x) if x != 0 else 0.0 * x


def _check_design(features, targets=None):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InputDomainError(f"features must be a non-empty n x K matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputDomainError("features contain non-finite entries")
    if targets is None:
        return X, None
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise InputDomainError(f"targets length {y.shape[0]} != rows {X.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise InputDomainError("targets contain non-finite entries")
    return X, y


def _penalty_diag(n_obs, n_feat, rho, penalize_intercept, has_intercept):
    pen = np.full(n_feat, n_obs * rho)
    if has_intercept and not penalize_intercept:
        pen[0] = 0.0
    return pen


def _factor(gram, pen):
    """Cholesky of gram + diag(pen).

    Unpenalised systems that are rank deficient raise; full-rank ones whose
    factorisation fails numerically get a 1e-12*trace/K jitter and a warning.
    """
    A = gram + np.diag(pen)
    k = gram.shape[0]
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() ** 2 > 1e-13 * diag.max() ** 2 or np.any(pen > 0):
            return factor
    except linalg.LinAlgError:
        if np.any(pen > 0):
            rank = int(np.linalg.matrix_rank(A))
            raise IllConditionedError(
                f"penalised normal equations not positive definite (rank {rank} of {k})", rank
            ) from None
    rank = int(np.linalg.matrix_rank(gram))
    if rank < k:
        raise IllConditionedError(f"normal equations singular at rho=0: design rank {rank} of {k}", rank)
    jitter = 1e-12 * np.trace(gram) / k
    warnings.warn(f"rho=0 normal equations ill-conditioned; added jitter {jitter:.3g}", RuntimeWarning)
    try:
        return linalg.cho_factor(A + jitter * np.eye(k), lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise IllConditionedError(f"normal equations singular at rho=0 even with jitter (rank {rank})", rank) from None


def solve_operator(features, rho, penalize_intercept=False, has_intercept=True):
    """K x n matrix S with ``S @ y`` the ridge coefficients for targets y."""
    X, _ = _check_design(features)
    pen = _penalty_diag(X.shape[0], X.shape[1], rho, penalize_intercept, has_intercept)
    factor = _factor(X.T @ X, pen)
    return linalg.cho_solve(factor, X.T, check_finite=False)


def _hat_trace(X, pen):
    gram = X.T @ X
    factor = _factor(gram, pen)
    return float(np.trace(linalg.cho_solve(factor, gram, check_finite=False)))


def effective_dof(features, rho, penalize_intercept=False, has_intercept=True):
    """Trace of the ridge hat matrix ``X (X'X + n*rho*I_pen)^-1 X'``."""
    X, _ = _check_design(features)
    if not rho >= 0:
        raise InputDomainError(f"rho must be >= 0, got {rho}")
    pen = _penalty_diag(X.shape[0], X.shape[1], rho, penalize_intercept, has_intercept)
    return min(max(_hat_trace(X, pen), 0.0), float(X.shape[1]))


def ridge_fit(features, targets, config=RidgeConfig(), has_intercept=True, cap_B=math.inf, rho=None):
    """Ridge regression of targets on features, returned as a capped LinearFit."""
    X, y = _check_design(features, targets)
    rho = config.rho if rho is None else float(rho)
    pen = _penalty_diag(X.shape[0], X.shape[1], rho, config.penalize_intercept, has_intercept)
    gram = X.T @ X
    factor = _factor(gram, pen)
    coef = linalg.cho_solve(factor, X.T @ y, check_finite=False)
    resid = y - X @ coef
    dof = float(np.trace(linalg.cho_solve(factor, gram, check_finite=False)))
    dof = min(max(dof, 0.0), float(X.shape[1]))
    return LinearFit(coef, cap_B, float(resid @ resid), dof, rho)


def aic(n_obs, rss, dof):
    return n_obs * math.log(rss / n_obs) + 2.0 * dof


def select_ridge_aic(features, targets, config=RidgeConfig(), has_intercept=True, cap_B=math.inf):
    """Pick rho from ``config.rho_grid`` minimising ``n ln(RSS/n) + 2 dof``.

    Ties go to the larger rho. A zero-RSS candidate wins outright and the
    returned fit is marked ``degenerate``.
    """
    grid = config.rho_grid or (config.rho,)
    X, y = _check_design(features, targets)
    n = X.shape[0]
    # residuals at round-off level of the targets count as an exact fit
    exact = 1e-24 * max(float(y @ y), np.finfo(float).tiny)
    best = None
    # Descending order so that a strict '<' keeps the larger rho on ties.
    for rho in sorted(grid, reverse=True):
        fit = ridge_fit(X, y, config, has_intercept, cap_B, rho=rho)
        if fit.rss <= exact:
            return rho, LinearFit(fit.coefficients, cap_B, 0.0, fit.effective_dof, rho, True)
        score = aic(n, fit.rss, fit.effective_dof)
        if best is None or score < best[0]:
            best = (score, rho, fit)
    return best[1], best[2]


def predict(fit, features):
    """Capped linear predictions ``[X b]_B``."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != fit.coefficients.shape[0]:
        raise InputDomainError(
            f"feature columns {X.shape[1]} != coefficient length {fit.coefficients.shape[0]}"
        )
    return np.clip(X @ fit.coefficients, -fit.cap, fit.cap)
