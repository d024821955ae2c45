"""Portfolio reward environment: one-factor minimum-variance models, drift,
turnover cost and utility rewards.

Time alignment used throughout: ``returns[t]`` is the simple return realised
at time t (price_t / price_{t-1} - 1). A decision taken at row t uses
volatilities estimated from ``returns[:t+1]`` and earns ``returns[t+1]``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BankruptcyError, ConfigError, DegeneratePortfolioError, InputDomainError

DEFAULT_LEVELS = {"0.00": 0.0, "0.10": 0.1, "0.75": 0.75}


@dataclass(frozen=True)
class Utility:
    kind: str = "log"  # "log" or "mean_variance"
    risk_aversion: float = 2.0

    def __post_init__(self):
        if self.kind not in ("log", "mean_variance"):
            raise ConfigError(f"unknown utility {self.kind!r}")


@dataclass(frozen=True)
class PortfolioEnv:
    correlation_levels: dict = field(default_factory=lambda: dict(DEFAULT_LEVELS))
    cost_rate: float = 0.0
    utility: Utility = field(default_factory=Utility)
    vol_lambda: float = 0.98
    n_assets: int | None = None
    vol_warmup: int = 20

    def __post_init__(self):
        if not self.correlation_levels:
            raise ConfigError("need at least one correlation level")
        for label, c in self.correlation_levels.items():
            if not 0.0 <= c < 1.0:
                raise ConfigError(f"correlation level for {label!r} must lie in [0, 1), got {c}")
        if not self.cost_rate >= 0:
            raise ConfigError(f"cost_rate must be >= 0, got {self.cost_rate}")
        if not 0.0 < self.vol_lambda < 1.0:
            raise ConfigError(f"vol_lambda must lie in (0, 1), got {self.vol_lambda}")
        if self.vol_warmup < 1:
            raise ConfigError("vol_warmup must be positive")

    @property
    def labels(self):
        return tuple(self.correlation_levels)

    @property
    def levels(self):
        return np.array([self.correlation_levels[k] for k in self.labels])


@dataclass(frozen=True)
class VolState:
    second_moments: np.ndarray
    t: int = 0

    @property
    def sigmas(self):
        return np.sqrt(self.second_moments)


@dataclass(frozen=True)
class Holdings:
    weights: np.ndarray
    last_action: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-10:
            raise InputDomainError(f"holdings must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)


def initial_vol_state(returns, warmup=20):
    """Seed the EWMA with the mean of the first ``warmup`` squared returns."""
    R = np.asarray(returns, dtype=np.float64)
    m0 = np.mean(R[:warmup] ** 2, axis=0)
    return VolState(m0, 0)


def update_vol(state, returns, lam=0.98):
    r = np.asarray(returns, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise InputDomainError("returns must be finite")
    return VolState(lam * state.second_moments + (1.0 - lam) * r * r, state.t + 1)


def sigma_path(returns, vol_init, lam=0.98):
    """Volatility estimate after each row's update, shape like ``returns``."""
    R = np.asarray(returns, dtype=np.float64)
    if not np.all(np.isfinite(R)):
        raise InputDomainError("returns must be finite")
    return np.sqrt(_kernels.ewma_path(R, vol_init.second_moments, lam))


def min_variance_weights(sigmas, c):
    """Minimum-variance weights for Sigma = diag(s) [(1-c) I + c 11'] diag(s).

    Uses the rank-one inverse of the equicorrelation matrix. Accepts a
    vector or a stack of vectors along the last axis.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    if not 0.0 <= c < 1.0:
        raise InputDomainError(f"correlation c must lie in [0, 1), got {c}")
    if np.any(~(s > 0)):
        raise InputDomainError("volatilities must be strictly positive")
    n = s.shape[-1]
    v = 1.0 / s
    shrink = c / (1.0 - c + c * n)
    omega_inv_v = v - shrink * v.sum(axis=-1, keepdims=True)
    w = v * omega_inv_v
    return w / w.sum(axis=-1, keepdims=True)


def drifted_weights(prev, price_relatives):
    w = prev.weights if isinstance(prev, Holdings) else np.asarray(prev, dtype=np.float64)
    pr = np.asarray(price_relatives, dtype=np.float64)
    if np.any(~(pr > 0)):
        raise InputDomainError("price relatives must be positive")
    grown = w * pr
    norm = grown.sum()
    if not norm > 0:
        raise DegeneratePortfolioError(f"drifted portfolio normaliser {norm!r} <= 0")
    return grown / norm


def turnover_cost(target, drifted, cost_rate):
    target = np.asarray(target, dtype=np.float64)
    drifted = np.asarray(drifted, dtype=np.float64)
    if target.shape != drifted.shape:
        raise InputDomainError(f"shape mismatch {target.shape} vs {drifted.shape}")
    return float(cost_rate * np.abs(target - drifted).sum())


def reward(net_return, utility=Utility()):
    if utility.kind == "mean_variance":
        return net_return - 0.5 * utility.risk_aversion * net_return * net_return
    if not net_return > -1.0:
        raise BankruptcyError(f"log utility undefined at net return {net_return}")
    return math.log1p(net_return)


def utility_values(net, utility=Utility()):
    """Vectorised :func:`reward`. Returns (values, bankrupt_mask); bankrupt entries are NaN."""
    net = np.asarray(net, dtype=np.float64)
    if utility.kind == "mean_variance":
        return net - 0.5 * utility.risk_aversion * net * net, np.zeros(net.shape, dtype=bool)
    bad = ~(net > -1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.log1p(np.where(bad, np.nan, net))
    return vals, bad & ~np.isnan(net)


@dataclass(frozen=True)
class RewardTable:
    """Per-row market quantities for every (previous model, model) pair.

    ``weights``  (A, T, N) target weights of each model at each row.
    ``gross``    (T-1, A)  w[a, t] . returns[t+1].
    ``l1``       (T-1, A_prev, A) turnover distance at decision row t.
    ``degenerate`` (T-1, A_prev) rows whose drift normaliser was <= 0.
    """

    weights: np.ndarray
    gross: np.ndarray
    l1: np.ndarray
    degenerate: np.ndarray
    cost_rate: float
    utility: Utility

    @property
    def n(self):
        return self.gross.shape[0]

    def net(self):
        return self.gross[:, None, :] - self.cost_rate * self.l1

    def rewards(self):
        vals, _ = utility_values(self.net(), self.utility)
        return vals

    def cost_free_rewards(self):
        vals, _ = utility_values(self.gross, self.utility)
        return vals

    def tail(self, start):
        """Rows ``start:`` as their own table (decision rows keep their costs)."""
        return RewardTable(self.weights[:, start:], self.gross[start:], self.l1[start:],
                           self.degenerate[start:], self.cost_rate, self.utility)


def reward_table(env, returns, vol_init=None, prior_weights=None):
    """Precompute every reward the FQI panel or a rollout can ask for.

    ``prior_weights`` (A, N) are each model's weights held into row 0 before
    drift; ``None`` means the row-0 holdings are the previous model's row-0
    weights with no drift.
    """
    R = np.asarray(returns, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 2:
        raise InputDomainError(f"returns must be a T x N matrix with T >= 2, got {R.shape}")
    if env.n_assets is not None and R.shape[1] != env.n_assets:
        raise InputDomainError(f"returns have {R.shape[1]} assets, env expects {env.n_assets}")
    if vol_init is None:
        vol_init = initial_vol_state(R, env.vol_warmup)
    sig = sigma_path(R, vol_init, env.vol_lambda)
    W = np.stack([min_variance_weights(sig, c) for c in env.levels])
    gross = np.einsum("atn,tn->ta", W[:, :-1], R[1:])
    n_act = W.shape[0]
    l1 = np.empty((R.shape[0] - 1, n_act, n_act))
    degenerate = np.zeros((R.shape[0] - 1, n_act), dtype=bool)
    if prior_weights is None:
        l1[0] = np.abs(W[None, :, 0, :] - W[:, None, 0, :]).sum(axis=2)
    else:
        prior = np.asarray(prior_weights, dtype=np.float64)
        grown = prior * (1.0 + R[0])
        norm = grown.sum(axis=1)
        degenerate[0] = ~(norm > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            drifted = grown / norm[:, None]
        l1[0] = np.abs(W[None, :, 0, :] - drifted[:, None, :]).sum(axis=2)
        l1[0][degenerate[0]] = np.nan
    if R.shape[0] > 2:
        dist, deg = _kernels.switch_l1(W[:, :-1], R[:-1])
        l1[1:] = dist
        degenerate[1:] = deg
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} degenerate drift rows; their rewards are NaN", RuntimeWarning)
    return RewardTable(W, gross, l1, degenerate, float(env.cost_rate), env.utility)


def reward_panel(env, panel, returns, vol_init=None, table=None):
    """Rewards R^a_{t+1} for every action given the panel's simulated previous actions.

    Returns ``{label: length-n vector}``. Rows with degenerate drift come back
    NaN; fitting drops them.
    """
    if table is None:
        table = reward_table(env, returns, vol_init)
    n = len(panel.actions) - 1
    if table.n < n:
        raise InputDomainError(f"returns cover {table.n} transitions, panel needs {n}")
    prev = np.asarray(panel.action_idx[:n])
    vals = table.rewards()[np.arange(n), prev, :]
    return {label: vals[:, j].copy() for j, label in enumerate(env.labels)}
