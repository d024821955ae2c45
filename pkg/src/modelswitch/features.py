"""Basis-function families on the augmented state (raw state, previous action).

Column layouts are fixed, since serialised coefficient vectors depend on them:

GeneralLinear   [1], then s_l * 1{a' = a_j} with l outer, j inner
Additive        s_1..s_L, then 1{a' != a_j} for j = 1..|A|
Parsimonious    [1], s_1..s_L, then 1{a' != anchor}
CubicAdditive   1, then (s, s^2, s^3) for each raw coordinate and finally the
                previous action's numeric code
Trigonometric   one block per action a_j, gated by 1{a' = a_j}:
                1, sqrt2 cos(2 pi s_1), sqrt2 sin(2 pi s_1), ..., up to trig_order

``[1]`` marks the optional intercept (``intercept=True``), always column 0.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputDomainError


class Family(str, enum.Enum):
    GENERAL_LINEAR = "GeneralLinear"
    ADDITIVE = "Additive"
    PARSIMONIOUS = "Parsimonious"
    CUBIC_ADDITIVE = "CubicAdditive"
    TRIGONOMETRIC = "Trigonometric"


@dataclass(frozen=True)
class ActionSpace:
    labels: tuple = ("0.00", "0.10", "0.75")
    numeric_codes: tuple = (0.0, 0.5, 1.0)

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        codes = tuple(float(x) for x in self.numeric_codes)
        if not labels:
            raise ConfigError("action space must be nonempty")
        if len(set(labels)) != len(labels):
            raise ConfigError(f"action labels must be distinct: {labels}")
        if len(codes) != len(labels):
            raise ConfigError("numeric_codes must match labels in length")
        if any(not 0.0 <= c <= 1.0 for c in codes):
            raise ConfigError(f"numeric codes must lie in [0, 1]: {codes}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "numeric_codes", codes)

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise InputDomainError(f"unknown action label {label!r}; known {self.labels}") from None

    def indices(self, labels):
        return np.array([self.index(x) for x in labels], dtype=np.int64)


@dataclass(frozen=True)
class BasisSpec:
    family: Family
    raw_dim: int
    action_space: ActionSpace = field(default_factory=ActionSpace)
    trig_order: int = 1
    parsimonious_anchor: str | None = None
    intercept: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise ConfigError(f"unknown basis family {self.family!r}") from None
        if int(self.raw_dim) < 1:
            raise ConfigError(f"raw_dim must be positive, got {self.raw_dim}")
        object.__setattr__(self, "raw_dim", int(self.raw_dim))
        if self.family is Family.TRIGONOMETRIC:
            if self.trig_order < 1:
                raise ConfigError("trig_order must be positive")
            if self.raw_dim != 1:
                raise ConfigError("Trigonometric basis is defined for a single raw state in [0, 1]")
        if self.intercept and self.family not in (Family.GENERAL_LINEAR, Family.PARSIMONIOUS):
            raise ConfigError(f"{self.family.value} already spans the constant; intercept flag not allowed")
        if self.parsimonious_anchor is not None:
            self.action_space.index(self.parsimonious_anchor)

    @property
    def has_intercept(self):
        """Whether column 0 is a constant that ridge leaves unpenalised."""
        return self.family is Family.CUBIC_ADDITIVE or self.intercept

    def for_action(self, label):
        """The class used for the looped action ``label`` (anchors Parsimonious)."""
        if self.family is Family.PARSIMONIOUS:
            return replace(self, parsimonious_anchor=str(label))
        return self

    def to_dict(self):
        return {
            "family": self.family.value,
            "raw_dim": self.raw_dim,
            "labels": list(self.action_space.labels),
            "numeric_codes": list(self.action_space.numeric_codes),
            "trig_order": self.trig_order,
            "parsimonious_anchor": self.parsimonious_anchor,
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            space = ActionSpace(tuple(d["labels"]), tuple(d["numeric_codes"]))
            return cls(
                Family(d["family"]), int(d["raw_dim"]), space, int(d.get("trig_order", 1)),
                d.get("parsimonious_anchor"), bool(d.get("intercept", False)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"malformed basis record: {exc}") from None


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    spec: BasisSpec

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]


def dimension(spec):
    L, A = spec.raw_dim, len(spec.action_space)
    extra = int(spec.intercept)
    if spec.family is Family.GENERAL_LINEAR:
        return L * A + extra
    if spec.family is Family.ADDITIVE:
        return L + A
    if spec.family is Family.PARSIMONIOUS:
        return L + 1 + extra
    if spec.family is Family.CUBIC_ADDITIVE:
        return 1 + 3 * (L + 1)
    return (2 * spec.trig_order + 1) * A


def _trig_block(s1, order):
    cols = [np.ones_like(s1)]
    for k in range(1, order + 1):
        arg = 2.0 * np.pi * k * s1
        cols.append(np.sqrt(2.0) * np.cos(arg))
        cols.append(np.sqrt(2.0) * np.sin(arg))
    return np.column_stack(cols)


def _powers(x):
    return np.stack([x, x * x, x * x * x], axis=-1).reshape(x.shape[0], -1)


def design(spec, raw_states, prev_idx):
    """Vectorised feature matrix for rows (raw_states[t], action index prev_idx[t])."""
    S = np.asarray(raw_states, dtype=np.float64)
    if S.ndim == 1:
        S = S.reshape(-1, spec.raw_dim)
    prev = np.asarray(prev_idx, dtype=np.int64).reshape(-1)
    n, L = S.shape
    A = len(spec.action_space)
    if L != spec.raw_dim:
        raise InputDomainError(f"raw state width {L} != basis raw_dim {spec.raw_dim}")
    if prev.shape[0] != n:
        raise InputDomainError("prev_idx length must match raw_states rows")
    if n and (prev.min() < 0 or prev.max() >= A):
        raise InputDomainError("previous-action index out of range")
    if not np.all(np.isfinite(S)):
        raise InputDomainError("non-finite raw state")
    onehot = np.zeros((n, A))
    onehot[np.arange(n), prev] = 1.0
    fam = spec.family
    if fam is Family.GENERAL_LINEAR:
        body = (S[:, :, None] * onehot[:, None, :]).reshape(n, L * A)
    elif fam is Family.ADDITIVE:
        body = np.hstack([S, 1.0 - onehot])
    elif fam is Family.PARSIMONIOUS:
        if spec.parsimonious_anchor is None:
            raise ConfigError("Parsimonious basis needs an anchor action (see BasisSpec.for_action)")
        j = spec.action_space.index(spec.parsimonious_anchor)
        body = np.hstack([S, (prev != j).astype(np.float64)[:, None]])
    elif fam is Family.CUBIC_ADDITIVE:
        codes = np.asarray(spec.action_space.numeric_codes)[prev]
        body = np.hstack([np.ones((n, 1)), _powers(np.hstack([S, codes[:, None]]))])
    else:
        block = _trig_block(S[:, 0], spec.trig_order)
        body = (onehot[:, :, None] * block[:, None, :]).reshape(n, -1)
    if spec.intercept:
        body = np.hstack([np.ones((n, 1)), body])
    return body


def raw_design(spec, raw_states):
    """Features of the raw state alone, dropping every previous-action term.

    Returns ``(matrix, has_intercept)``. Additive collapses its indicators to
    a constant; CubicAdditive drops the action-code powers.
    """
    S = np.asarray(raw_states, dtype=np.float64)
    if S.ndim == 1:
        S = S.reshape(-1, spec.raw_dim)
    n = S.shape[0]
    if S.shape[1] != spec.raw_dim:
        raise InputDomainError(f"raw state width {S.shape[1]} != basis raw_dim {spec.raw_dim}")
    fam = spec.family
    if fam in (Family.GENERAL_LINEAR, Family.PARSIMONIOUS):
        if spec.intercept:
            return np.hstack([np.ones((n, 1)), S]), True
        return S.copy(), False
    if fam is Family.ADDITIVE:
        return np.hstack([np.ones((n, 1)), S]), True
    if fam is Family.CUBIC_ADDITIVE:
        return np.hstack([np.ones((n, 1)), _powers(S)]), True
    return _trig_block(S[:, 0], spec.trig_order), True


def evaluate(spec, raw_state, prev_action):
    """Feature row for one augmented state; ``prev_action`` is a label."""
    s = np.asarray(raw_state, dtype=np.float64).reshape(1, -1)
    if s.shape[1] != spec.raw_dim:
        raise InputDomainError(f"raw state length {s.shape[1]} != raw_dim {spec.raw_dim}")
    return design(spec, s, [spec.action_space.index(prev_action)])[0]


def evaluate_panel(spec, rows):
    rows = list(rows)
    if not rows:
        return FeatureMatrix(np.zeros((0, dimension(spec))), spec)
    states = np.array([np.asarray(r[0], dtype=np.float64).reshape(-1) for r in rows])
    prev = spec.action_space.indices([r[1] for r in rows])
    return FeatureMatrix(design(spec, states, prev), spec)
