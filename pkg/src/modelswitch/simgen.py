"""Synthetic two-regime market: a noisy sinusoidal signal state, pure-noise
states, and N equicorrelated Gaussian returns whose mean and correlation flip
when the signal is at or below a threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import write_matrix_csv

TRADING_DAYS = 252


@dataclass(frozen=True)
class SimConfig:
    n_est: int = 500
    n_test: int = 1000
    L: int = 1
    N: int = 500
    sigma_eps: float = 0.25
    regime_corr: float = 0.9
    threshold: float = -0.5
    seed: int = 0
    bad_variance_mult: float = 1.0

    def __post_init__(self):
        if self.n_est < 1 or self.n_test < 1 or self.n_est + self.n_test < 2:
            raise ConfigError("n_est and n_test must be positive")
        if self.L < 1 or self.N < 1:
            raise ConfigError("L and N must be positive")
        if not 0.0 <= self.regime_corr < 1.0:
            raise ConfigError(f"regime_corr must lie in [0, 1), got {self.regime_corr}")
        if not self.bad_variance_mult > 0:
            raise ConfigError("bad_variance_mult must be positive")

    @property
    def n(self):
        return self.n_est + self.n_test


@dataclass(frozen=True)
class SimSample:
    raw_states: np.ndarray
    returns: np.ndarray
    regime_flags: np.ndarray

    @property
    def n(self):
        return self.raw_states.shape[0] - 1


def _streams(seed):
    # signal noise, nuisance states and returns draw from separate children so
    # that changing L leaves the signal and the returns untouched
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def gen_states(config):
    sig_rng, noise_rng, _ = _streams(config.seed)
    rows = config.n + 1
    t = np.arange(1, rows + 1)
    states = np.empty((rows, config.L))
    states[:, 0] = np.sin(2.0 * np.pi * t / 100.0) + config.sigma_eps * sig_rng.standard_normal(rows)
    if config.L > 1:
        states[:, 1:] = noise_rng.standard_normal((rows, config.L - 1))
    return states, states[:, 0] <= config.threshold


def asset_scale(N):
    """The (1 + (i-1)/N) ramp shared by means and volatilities."""
    return 1.0 + np.arange(N) / N


def regime_means(N, bad):
    k = asset_scale(N)
    return 0.03 / TRADING_DAYS + (0.30 / TRADING_DAYS) * k * (1.0 - 3.0 * float(bad))


def asset_vols(N):
    return 0.3 / math.sqrt(TRADING_DAYS) * asset_scale(N)


def gen_returns(raw_states, regime_flags, config):
    flags = np.asarray(regime_flags, dtype=bool)
    rows, N = flags.shape[0], config.N
    if np.asarray(raw_states).shape[0] != rows:
        raise ConfigError("regime flags and states are misaligned")
    _, _, rng = _streams(config.seed)
    factor = rng.standard_normal(rows)
    idio = rng.standard_normal((rows, N))
    rho = config.regime_corr
    z = idio.copy()
    z[flags] = math.sqrt(rho) * factor[flags, None] + math.sqrt(1.0 - rho) * idio[flags]
    k = asset_scale(N)
    mu = 0.03 / TRADING_DAYS + (0.30 / TRADING_DAYS) * k[None, :] * (1.0 - 3.0 * flags[:, None])
    vol = np.broadcast_to(asset_vols(N), (rows, N)).copy()
    if config.bad_variance_mult != 1.0:
        vol[flags] *= math.sqrt(config.bad_variance_mult)
    return mu + vol * z


def gen_sample(config):
    states, flags = gen_states(config)
    return SimSample(states, gen_returns(states, flags, config), flags)


def state_columns(L):
    return [f"s{l}" for l in range(1, L + 1)]


def asset_columns(N):
    return [f"asset{i}" for i in range(1, N + 1)]


def write_sample(sample, out_dir):
    """Write states.csv and returns.csv (index column ``t`` starting at 1)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = np.arange(1, sample.raw_states.shape[0] + 1)
    write_matrix_csv(out / "states.csv", index, state_columns(sample.raw_states.shape[1]), sample.raw_states)
    write_matrix_csv(out / "returns.csv", index, asset_columns(sample.returns.shape[1]), sample.returns)
    return out / "states.csv", out / "returns.csv"
