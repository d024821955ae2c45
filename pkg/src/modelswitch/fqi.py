"""Fitted Q-iteration with capped ridge projections, replicated over simulated
action streams and averaged into a single policy.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError, DataError, IllConditionedError, InputDomainError
from .features import BasisSpec, design
from .numcore import LinearFit, RidgeConfig, effective_dof, select_ridge_aic, solve_operator

log = logging.getLogger(__name__)

POLICY_FORMAT = "modelswitch-policy"
POLICY_VERSION = 1


@dataclass(frozen=True)
class StateActionPanel:
    """Raw states S~_1..S~_{n+1} paired with previous actions A_0..A_n.

    Row t of the augmented sample is ``(raw_states[t], actions[t])``.
    """

    raw_states: np.ndarray
    action_idx: np.ndarray
    action_space: object
    replication_id: int = 0

    def __post_init__(self):
        S = np.asarray(self.raw_states, dtype=np.float64)
        if S.ndim == 1:
            S = S[:, None]
        idx = np.asarray(self.action_idx, dtype=np.int64)
        if S.shape[0] != idx.shape[0]:
            raise InputDomainError(f"{S.shape[0]} states but {idx.shape[0]} actions")
        if S.shape[0] < 2:
            raise InputDomainError("a panel needs at least two states (n >= 1)")
        if idx.min() < 0 or idx.max() >= len(self.action_space):
            raise InputDomainError("action index outside the action space")
        S.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "raw_states", S)
        object.__setattr__(self, "action_idx", idx)

    @property
    def n(self):
        return self.raw_states.shape[0] - 1

    @property
    def actions(self):
        labels = self.action_space.labels
        return tuple(labels[i] for i in self.action_idx)


@dataclass(frozen=True)
class FQIConfig:
    basis: BasisSpec
    gamma: float = 0.98
    cap_B: float = math.inf
    epsilon: float = 1e-8
    max_iters: int = 200
    n_replications: int = 10
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.cap_B > 0:
            raise ConfigError(f"cap_B must be positive, got {self.cap_B}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1 or self.n_replications < 1:
            raise ConfigError("max_iters and n_replications must be positive")


@dataclass(frozen=True)
class QEstimate:
    per_action_fits: dict
    basis: BasisSpec
    iterations_run: int
    converged: bool
    residual_history: tuple
    replication_id: int = 0
    gamma: float = 0.98

    def q_values(self, raw_states, prev_idx):
        """Capped Q(s, a) for every action, shape (n, A)."""
        S = np.asarray(raw_states, dtype=np.float64).reshape(-1, self.basis.raw_dim)
        prev = np.broadcast_to(np.asarray(prev_idx, dtype=np.int64), (S.shape[0],))
        cols = []
        for label in self.basis.action_space.labels:
            fit = self.per_action_fits[label]
            X = design(self.basis.for_action(label), S, prev)
            cols.append(np.clip(X @ fit.coefficients, -fit.cap, fit.cap))
        return np.column_stack(cols)


class ZeroQ:
    """Stand-in for V^(0) = 0."""

    def q_values(self, raw_states, prev_idx):
        return 0.0


@dataclass(frozen=True)
class Policy:
    """Average of replicated Q estimates; acts by argmax, ties to the first action."""

    estimates: tuple

    @property
    def basis(self):
        return self.estimates[0].basis

    @property
    def action_space(self):
        return self.basis.action_space

    def q_values(self, raw_states, prev_idx):
        stack = np.stack([q.q_values(raw_states, prev_idx) for q in self.estimates])
        return stack.sum(axis=0) / len(self.estimates)

    def q_table(self, raw_states):
        """Averaged Q for every (row, previous action, action): shape (n, A, A)."""
        S = np.asarray(raw_states, dtype=np.float64).reshape(-1, self.basis.raw_dim)
        return np.stack(
            [self.q_values(S, np.full(S.shape[0], p)) for p in range(len(self.action_space))], axis=1
        )

    def act_index(self, raw_state, prev_idx):
        q = self.q_values(np.asarray(raw_state, dtype=np.float64).reshape(1, -1), [prev_idx])[0]
        return int(np.argmax(q))

    def act(self, raw_state, prev_action):
        s = np.asarray(raw_state, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise InputDomainError("non-finite state")
        return self.action_space.labels[self.act_index(s, self.action_space.index(prev_action))]


def augment(raw_states, action_space, n_replications, seed):
    """N_A panels over the same raw states with independent uniform action streams.

    Panel u draws from ``SeedSequence(seed, spawn_key=(u,))``.
    """
    if len(action_space) == 0:
        raise ConfigError("empty action space")
    S = np.asarray(raw_states, dtype=np.float64)
    panels = []
    for u in range(n_replications):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(u,)))
        idx = rng.integers(0, len(action_space), size=S.shape[0])
        panels.append(StateActionPanel(S, idx, action_space, u))
    return panels


def _reward_matrix(panel, rewards, labels):
    n = panel.n
    try:
        R = np.stack([np.asarray(rewards[label], dtype=np.float64).reshape(-1) for label in labels])
    except KeyError as exc:
        raise InputDomainError(f"missing rewards for action {exc}") from None
    if R.shape[1] != n:
        raise InputDomainError(f"rewards have length {R.shape[1]}, panel has n = {n}")
    return R


def q_targets(panel, rewards, q_prev, a, gamma):
    """Regression targets R^a_{t+1} + gamma * max_a' Q_prev((S~_{t+1}, a), a')."""
    space = panel.action_space
    r = _reward_matrix(panel, rewards, space.labels)[space.index(a)]
    if q_prev is None or isinstance(q_prev, ZeroQ) or gamma == 0:
        return r.copy()
    nxt = q_prev.q_values(panel.raw_states[1:], np.full(panel.n, space.index(a)))
    return r + gamma * nxt.max(axis=1)


def fqi_run(panel, env_rewards, config):
    """Run capped ridge fitted Q-iteration on one augmented panel."""
    basis = config.basis
    space = basis.action_space
    labels = space.labels
    if len(panel.action_space) != len(space) or panel.raw_states.shape[1] != basis.raw_dim:
        raise InputDomainError("panel does not match the basis (actions or raw dimension)")
    R = _reward_matrix(panel, env_rewards, labels)
    keep = np.all(np.isfinite(R), axis=0)
    n = panel.n
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} rows with non-finite rewards", RuntimeWarning)
        if not keep.any():
            raise DataError("no finite rewards to fit")
    rows = np.flatnonzero(keep)
    S_cur = panel.raw_states[:n][rows]
    S_next = panel.raw_states[1:][rows]
    prev = panel.action_idx[:n][rows]
    R = R[:, rows]
    A = len(labels)
    classes = [basis.for_action(label) for label in labels]
    X = np.stack([design(cls, S_cur, prev) for cls in classes])
    Xn = np.stack([
        np.stack([design(cls, S_next, np.full(rows.size, a)) for cls in classes]) for a in range(A)
    ])

    rhos = []
    ops = []
    for a, label in enumerate(labels):
        try:
            if config.ridge.rho_grid:
                rho, _ = select_ridge_aic(X[a], R[a], config.ridge, basis.has_intercept, config.cap_B)
            else:
                rho = config.ridge.rho
            ops.append(solve_operator(X[a], rho, config.ridge.penalize_intercept, basis.has_intercept))
        except IllConditionedError as exc:
            raise IllConditionedError(f"iteration 1, action {label}: {exc}", exc.rank) from exc
        rhos.append(rho)
    coef, iters, resid, targets, converged = _kernels.fqi_iterate(
        np.stack(ops), X, Xn, R, config.gamma, config.cap_B, config.epsilon, config.max_iters
    )
    if not np.all(np.isfinite(coef)):
        raise DataError(f"non-finite coefficients after {iters} iterations (replication {panel.replication_id})")
    fits = {}
    for a, label in enumerate(labels):
        res = targets[a] - X[a] @ coef[a]
        dof = effective_dof(X[a], rhos[a], config.ridge.penalize_intercept, basis.has_intercept)
        fits[label] = LinearFit(coef[a], config.cap_B, float(res @ res), dof, rhos[a])
    if not converged:
        log.warning(
            "replication %d did not converge in %d iterations (last residual %.3g)",
            panel.replication_id, iters, resid[-1],
        )
    return QEstimate(fits, basis, int(iters), bool(converged), tuple(float(x) for x in resid),
                     panel.replication_id, config.gamma)


def average_q(estimates):
    """Combine replications; order of the input list does not matter."""
    estimates = list(estimates)
    if not estimates:
        raise InputDomainError("need at least one estimate")
    ref = estimates[0].basis
    for q in estimates[1:]:
        if q.basis.to_dict() != ref.to_dict():
            raise InputDomainError("estimates use different bases")
    estimates.sort(key=lambda q: q.replication_id)
    return Policy(tuple(estimates))


def act(policy, raw_state, prev_action):
    return policy.act(raw_state, prev_action)


def estimate_policy(panels, rewards_by_panel, config):
    """fqi_run on every panel then average_q."""
    return average_q(fqi_run(p, r, config) for p, r in zip(panels, rewards_by_panel))


# -- serialisation ---------------------------------------------------------

def _fit_to_dict(fit):
    return {
        "coefficients": [float(x) for x in fit.coefficients],
        "cap": None if math.isinf(fit.cap) else float(fit.cap),
        "rss": fit.rss,
        "effective_dof": fit.effective_dof,
        "rho": fit.rho,
    }


def _fit_from_dict(d):
    cap = math.inf if d["cap"] is None else float(d["cap"])
    return LinearFit(np.array(d["coefficients"], dtype=np.float64), cap, float(d["rss"]),
                     float(d["effective_dof"]), float(d["rho"]))


def policy_to_dict(policy):
    return {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "basis": policy.basis.to_dict(),
        "gamma": policy.estimates[0].gamma,
        "replications": [
            {
                "replication_id": q.replication_id,
                "iterations_run": q.iterations_run,
                "converged": q.converged,
                "residual_history": list(q.residual_history),
                "fits": {label: _fit_to_dict(q.per_action_fits[label]) for label in q.basis.action_space.labels},
            }
            for q in policy.estimates
        ],
    }


def policy_from_dict(d):
    if d.get("format") != POLICY_FORMAT:
        raise DataError(f"not a policy artifact (format={d.get('format')!r})")
    if d.get("version") != POLICY_VERSION:
        raise DataError(f"unsupported policy artifact version {d.get('version')!r}")
    basis = BasisSpec.from_dict(d["basis"])
    ests = []
    for rep in d["replications"]:
        fits = {label: _fit_from_dict(f) for label, f in rep["fits"].items()}
        ests.append(QEstimate(fits, basis, int(rep["iterations_run"]), bool(rep["converged"]),
                              tuple(rep["residual_history"]), int(rep["replication_id"]), float(d["gamma"])))
    return average_q(ests)


def save_policy(policy, path):
    Path(path).write_text(json.dumps(policy_to_dict(policy), indent=1, sort_keys=True) + "\n")


def load_policy(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"policy artifact not found: {p}")
    try:
        return policy_from_dict(json.loads(p.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed policy artifact {p}: {exc}") from None
