"""Covariate preprocessing and the CSV schemas shared by every CLI step.

Every CSV has a header row; the first column is a sortable index (integer
or date) and the rest are numeric columns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _kernels
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZScoreState:
    mu: np.ndarray
    m2: np.ndarray
    lam: float = 0.99
    centered: bool = False
    last_z: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"z-score lambda must lie in (0, 1), got {self.lam}")


def init_zscore(first_row, lam=0.99, centered=False):
    """Seed from the first observation: mu_0 = x_1, m2_0 = x_1**2 (0 if centered)."""
    x = np.asarray(first_row, dtype=np.float64)
    m2 = np.zeros_like(x) if centered else x * x
    return ZScoreState(x.copy(), m2, lam, centered, np.zeros_like(x))


def zscore_step(state, x_row):
    """Advance the EWMA moments by one row and z-score it with the updated moments.

    By default the scale recursion averages raw squares, not squared
    deviations. Columns with zero scale repeat their previous z; the
    returned flags mark them.
    """
    x = np.asarray(x_row, dtype=np.float64)
    lam = state.lam
    mu = lam * state.mu + (1.0 - lam) * x
    if state.centered:
        m2 = lam * state.m2 + (1.0 - lam) * (x - mu) ** 2
    else:
        m2 = lam * state.m2 + (1.0 - lam) * x * x
    sd = np.sqrt(m2)
    last = np.zeros_like(x) if state.last_z is None else state.last_z
    ok = sd > 0
    z = np.where(ok, (x - mu) / np.where(ok, sd, 1.0), last)
    return ZScoreState(mu, m2, lam, state.centered, z), z, ~ok


@dataclass(frozen=True)
class DigitizerSpec:
    bin_edges: tuple = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    scale: float = 7.0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
            raise ConfigError("bin edges must be strictly increasing")


def digitize(z, spec=DigitizerSpec()):
    """Bin index in {0..7} scaled to [0, 1]: [j-4, j-3) -> j/7, below -3 -> 0, at/above 3 -> 1."""
    arr = np.asarray(z, dtype=np.float64)
    out = np.searchsorted(np.asarray(spec.bin_edges), arr, side="right") / spec.scale
    return float(out) if np.ndim(z) == 0 else out


def preprocess(values, lam=0.99, centered=False, digitizer=DigitizerSpec()):
    """Causal z-score then digitise each column. Returns (states, degenerate_flags)."""
    z, flags = _kernels.ewma_zscore(np.asarray(values, dtype=np.float64), lam, centered)
    return digitize(z, digitizer), flags


@dataclass
class Covariates:
    index: np.ndarray
    names: list
    values: np.ndarray
    fill_counts: dict = field(default_factory=dict)
    dropped_leading: int = 0


def _parse_index(raw, path):
    num = pd.to_numeric(raw, errors="coerce")
    if not num.isna().any():
        return num
    try:
        return pd.to_datetime(raw, errors="raise")
    except (ValueError, TypeError):
        bad = raw[num.isna()].iloc[0]
        raise DataError(f"{path}: unparseable index value {bad!r}") from None


def _read_frame(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    try:
        df = pd.read_csv(p, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{p}: empty file") from None
    if df.shape[1] < 2:
        raise DataError(f"{p}: need an index column and at least one data column")
    if df.shape[0] == 0:
        raise DataError(f"{p}: no data rows")
    idx_raw = df.iloc[:, 0].str.strip()
    body = df.iloc[:, 1:].apply(lambda col: col.str.strip())
    missing = body.eq("") | body.isin(["NA", "NaN", "nan", "null"])
    try:
        # numpy's string conversion round-trips doubles exactly; pd.to_numeric does not
        values = np.asarray(body.mask(missing, "nan").to_numpy(), dtype=np.float64)
    except ValueError:
        unparseable = body.apply(pd.to_numeric, errors="coerce").isna() & ~missing
        row = int(np.flatnonzero(unparseable.any(axis=1).to_numpy())[0])
        raise DataError(f"{p}: unparseable value in row {row + 2} (index {idx_raw.iloc[row]!r})") from None
    numeric = pd.DataFrame(values)
    index = _parse_index(idx_raw, p)
    dup = index.duplicated(keep=False)
    if dup.any():
        raise DataError(f"{p}: duplicate timestamp {idx_raw[dup].iloc[0]!r}")
    numeric.index = index
    numeric.columns = [str(c) for c in df.columns[1:]]
    return numeric.sort_index(kind="stable")


def load_covariates(path):
    """Read a covariate CSV: sort by index, forward-fill gaps, drop leading incomplete rows."""
    frame = _read_frame(path)
    was_missing = frame.isna()
    filled = frame.ffill()
    complete = ~filled.isna().any(axis=1)
    if not complete.any():
        raise DataError(f"{path}: no complete row after forward-fill")
    first = int(np.argmax(complete.to_numpy()))
    filled = filled.iloc[first:]
    fills = {c: int(was_missing[c].iloc[first:].sum()) for c in filled.columns}
    if first:
        log.info("%s: dropped %d leading incomplete rows", path, first)
    return Covariates(filled.index.to_numpy(), list(filled.columns), filled.to_numpy(dtype=np.float64),
                      fills, first)


def read_matrix_csv(path):
    """Strict numeric matrix CSV (no gaps allowed): (index, names, values)."""
    frame = _read_frame(path)
    if frame.isna().any().any():
        raise DataError(f"{path}: missing values")
    return frame.index.to_numpy(), list(frame.columns), frame.to_numpy(dtype=np.float64)


def write_matrix_csv(path, index, names, values, index_name="t"):
    frame = pd.DataFrame(np.asarray(values, dtype=np.float64), columns=list(names))
    frame.insert(0, index_name, np.asarray(index))
    frame.to_csv(path, index=False, lineterminator="\n")
