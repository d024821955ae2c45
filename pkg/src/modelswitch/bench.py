"""Baseline strategies, test-sample rollouts and the Monte-Carlo study."""
from __future__ import annotations

import json
import logging
import math
import platform
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import _kernels
from .errors import ConfigError, DataError, InputDomainError, ModelSwitchError
from .features import design, raw_design
from .fqi import augment, estimate_policy
from .numcore import RidgeConfig, predict, ridge_fit, select_ridge_aic
from .portfolio import Holdings, PortfolioEnv, initial_vol_state, reward_panel, reward_table, utility_values
from .simgen import SimConfig, gen_sample

log = logging.getLogger(__name__)

ANNUALIZATION = 252
REPORT_COLUMNS = ["L", "cost", "n_est", "strategy", "mean", "se"]
BACKTEST_COLUMNS = ["strategy", "avg_reward", "se_reward", "ann_reward", "ann_net_return", "se_ann",
                    "switch_count", "skipped"]


# -- strategies -------------------------------------------------------------

@dataclass(frozen=True)
class GreedyModel:
    """One-step reward regressions, one per action."""

    fits: dict
    basis: object
    raw_only: bool = True

    @property
    def action_space(self):
        return self.basis.action_space

    def q_values(self, raw_states, prev_idx):
        S = np.asarray(raw_states, dtype=np.float64).reshape(-1, self.basis.raw_dim)
        labels = self.action_space.labels
        if self.raw_only:
            X, _ = raw_design(self.basis, S)
            return np.column_stack([predict(self.fits[a], X) for a in labels])
        prev = np.broadcast_to(np.asarray(prev_idx, dtype=np.int64), (S.shape[0],))
        return np.column_stack([predict(self.fits[a], design(self.basis.for_action(a), S, prev)) for a in labels])

    def q_table(self, raw_states):
        S = np.asarray(raw_states, dtype=np.float64).reshape(-1, self.basis.raw_dim)
        A = len(self.action_space)
        if self.raw_only:
            q = self.q_values(S, 0)
            return np.repeat(q[:, None, :], A, axis=1)
        return np.stack([self.q_values(S, np.full(S.shape[0], p)) for p in range(A)], axis=1)


@dataclass(frozen=True)
class Strategy:
    kind: str  # RL, Greedy, Fixed, AverageFixed
    model: object = None
    action: str | None = None

    def __post_init__(self):
        if self.kind not in ("RL", "Greedy", "Fixed", "AverageFixed"):
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind in ("RL", "Greedy") and self.model is None:
            raise ConfigError(f"{self.kind} strategy needs a fitted model")
        if self.kind == "Fixed" and self.action is None:
            raise ConfigError("Fixed strategy needs an action")

    @classmethod
    def rl(cls, policy):
        return cls("RL", policy)

    @classmethod
    def fixed(cls, action):
        return cls("Fixed", action=str(action))

    @classmethod
    def average_fixed(cls):
        return cls("AverageFixed")

    @property
    def name(self):
        if self.kind == "Fixed":
            return f"Fixed {self.action}"
        return "Average Fixed" if self.kind == "AverageFixed" else self.kind


def fit_greedy(panel, cost_free_rewards, basis, ridge=RidgeConfig(), raw_only=True):
    """Regress next-period cost-free reward on state features, one fit per action.

    With ``raw_only`` the previous action is ignored entirely; otherwise the
    full basis is used, which makes the fit identical to a discount-free FQI.
    """
    n = panel.n
    S = panel.raw_states[:n]
    labels = basis.action_space.labels
    fits = {}
    for label in labels:
        y = np.asarray(cost_free_rewards[label], dtype=np.float64).reshape(-1)
        if y.shape[0] != n:
            raise InputDomainError(f"rewards for {label} have length {y.shape[0]}, panel has n = {n}")
        if raw_only:
            X, has_int = raw_design(basis, S)
        else:
            X, has_int = design(basis.for_action(label), S, panel.action_idx[:n]), basis.has_intercept
        ok = np.isfinite(y)
        if ridge.rho_grid:
            _, fit = select_ridge_aic(X[ok], y[ok], ridge, has_int)
        else:
            fit = ridge_fit(X[ok], y[ok], ridge, has_intercept=has_int)
        fits[label] = fit
    return Strategy("Greedy", GreedyModel(fits, basis, raw_only))


# -- rollout ----------------------------------------------------------------

@dataclass(frozen=True)
class BacktestResult:
    strategy: str
    per_period_rewards: np.ndarray
    per_period_net_returns: np.ndarray
    actions_taken: tuple
    switch_count: int
    avg_reward: float
    se_reward: float
    ann_net_return: float
    se_ann: float
    skipped: int = 0

    @property
    def ann_reward(self):
        return ANNUALIZATION * self.avg_reward

    def cumulative_rewards(self):
        return np.nancumsum(self.per_period_rewards)


def _mean_se(x):
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(np.mean(x)), se


def _finish(name, net, env, actions, switches):
    rewards, bankrupt = utility_values(net, env.utility)
    if bankrupt.any():
        warnings.warn(f"{name}: {int(bankrupt.sum())} bankrupt periods skipped", RuntimeWarning)
    skipped = int((~np.isfinite(rewards)).sum())
    net = np.where(np.isfinite(rewards), net, np.nan)
    avg, se = _mean_se(rewards)
    avg_net, se_net = _mean_se(net)
    return BacktestResult(name, rewards, net, tuple(actions), int(switches), avg, se,
                          ANNUALIZATION * avg_net, ANNUALIZATION * se_net, skipped)


def _first_row_l1(weights0, initial, r0):
    grown = initial.weights * (1.0 + r0)
    norm = grown.sum()
    if not norm > 0:
        return np.full(weights0.shape[0], np.nan)
    return np.abs(weights0 - grown / norm).sum(axis=1)


def rollout(strategy, test_states, test_returns, env, initial, vol=None, table=None):
    """Walk the test sample: decide at row t, pay turnover cost, earn returns[t+1].

    ``vol`` is the volatility state carried in from the estimation sample;
    ``None`` re-seeds it from the test returns. A precomputed ``table`` over
    the same rows can be passed instead.
    """
    R = np.asarray(test_returns, dtype=np.float64)
    S = np.asarray(test_states, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] != R.shape[0]:
        raise InputDomainError(f"{S.shape[0]} test states but {R.shape[0]} return rows")
    if table is None:
        table = reward_table(env, R, vol if vol is not None else initial_vol_state(R, env.vol_warmup))
    m = R.shape[0] - 1
    if table.n != m:
        raise InputDomainError(f"reward table covers {table.n} rows, test sample has {m}")
    labels = env.labels
    if initial.weights.shape[0] != R.shape[1]:
        raise InputDomainError("initial holdings and returns disagree on the number of assets")
    start = labels.index(initial.last_action) if initial.last_action in labels else 0
    W = table.weights
    cost = table.cost_rate

    if strategy.kind == "AverageFixed":
        Wa = W.mean(axis=0)[:m]
        gross = np.einsum("tn,tn->t", Wa, R[1:])
        l1 = np.empty(m)
        grown0 = initial.weights * (1.0 + R[0])
        l1[0] = np.abs(Wa[0] - grown0 / grown0.sum()).sum() if grown0.sum() > 0 else np.nan
        if m > 1:
            grown = Wa[:-1] * (1.0 + R[1:m])
            norm = grown.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                l1[1:] = np.where(norm > 0, np.abs(Wa[1:] - grown / norm[:, None]).sum(axis=1), np.nan)
        return _finish(strategy.name, gross - cost * l1, env, ["average"] * m, 0)

    if strategy.kind == "Fixed":
        path = np.full(m, labels.index(strategy.action), dtype=np.int64)
    else:
        if len(strategy.model.action_space) != len(labels):
            raise InputDomainError("strategy and environment have different action counts")
        if S.shape[1] != strategy.model.basis.raw_dim:
            raise InputDomainError(
                f"policy expects {strategy.model.basis.raw_dim} state columns, data has {S.shape[1]}")
        path = _kernels.follow_policy(strategy.model.q_table(S[:m]), start)
    prev = np.concatenate([[start], path[:-1]])
    l1 = table.l1[np.arange(m), prev, path]
    l1[0] = _first_row_l1(W[:, 0], initial, R[0])[path[0]]
    net = table.gross[np.arange(m), path] - cost * l1
    switches = int(np.count_nonzero(path[1:] != path[:-1]))
    return _finish(strategy.name, net, env, [labels[i] for i in path], switches)


# -- Monte-Carlo study ------------------------------------------------------

@dataclass(frozen=True)
class StudyGrid:
    Ls: tuple = (1, 10)
    costs: tuple = (0.0, 0.0005, 0.001)
    n_ests: tuple = (500, 1000)

    def cells(self):
        return [(L, c, n) for L in self.Ls for c in self.costs for n in self.n_ests]


@dataclass(frozen=True)
class CellStat:
    mean: float
    se: float
    n_ok: int
    mean_switches: float = math.nan
    mean_ann_net_return: float = math.nan


@dataclass
class McReport:
    cells: dict = field(default_factory=dict)  # (L, cost, n_est, strategy) -> CellStat
    n_sims: int = 0
    failures: list = field(default_factory=list)

    def get(self, L, cost, n_est, strategy):
        return self.cells[(L, cost, n_est, strategy)]

    def rows(self):
        return [(*key, st.mean, st.se) for key, st in self.cells.items()]


@dataclass(frozen=True)
class SimOutcome:
    cell: tuple
    sim: int
    values: dict | None  # strategy -> (ann_reward, ann_net_return, switches)
    error: str | None = None


def _tag(part):
    if isinstance(part, (int, np.integer)) and part >= 0:
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(repr(part).encode())


def derive_seed(master, *parts):
    """Mix the master seed with a tuple of tags into a 64-bit seed."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *(_tag(p) for p in parts)])
    return int(ss.generate_state(1, np.uint64)[0])


def cell_key(L, cost, n_est):
    return f"L={L}|cost={float(cost)!r}|n_est={n_est}"


def study_strategies(env):
    return ["RL", "Greedy", *(f"Fixed {a}" for a in env.labels), "Average Fixed"]


def evaluate_sample(sample, n_est, fqi_config, env, action_seed):
    """Estimate every strategy on rows < n_est and roll them out on the rest."""
    basis = fqi_config.basis
    if sample.raw_states.shape[1] != basis.raw_dim:
        raise InputDomainError("sample width does not match the basis raw dimension")
    table = reward_table(env, sample.returns)
    panels = augment(sample.raw_states[: n_est + 1], basis.action_space, fqi_config.n_replications, action_seed)
    rewards = [reward_panel(env, p, None, table=table) for p in panels]
    policy = estimate_policy(panels, rewards, fqi_config)
    cf = table.cost_free_rewards()[:n_est]
    greedy = fit_greedy(panels[0], {a: cf[:, j] for j, a in enumerate(env.labels)}, basis, fqi_config.ridge)

    a_last = int(panels[0].action_idx[n_est])
    test_table = table.tail(n_est)
    states, returns = sample.raw_states[n_est:], sample.returns[n_est:]
    held = Holdings(table.weights[a_last, n_est - 1], env.labels[a_last])
    held_avg = Holdings(table.weights[:, n_est - 1].mean(axis=0), env.labels[a_last])
    strategies = [Strategy.rl(policy), greedy, *(Strategy.fixed(a) for a in env.labels), Strategy.average_fixed()]
    out = {}
    for strat in strategies:
        # fixed rules have held their own model throughout the estimation sample
        if strat.kind == "Fixed":
            j = env.labels.index(strat.action)
            init = Holdings(table.weights[j, n_est - 1], strat.action)
        else:
            init = held_avg if strat.kind == "AverageFixed" else held
        out[strat.name] = rollout(strat, states, returns, env, init, table=test_table)
    return out


def _run_sim(task):
    cell, sim, sim_cfg, fqi_cfg, env, action_seed = task
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            results = evaluate_sample(gen_sample(sim_cfg), sim_cfg.n_est, fqi_cfg, env, action_seed)
    except (ModelSwitchError, ArithmeticError, ValueError) as exc:
        return SimOutcome(cell, sim, None, f"{type(exc).__name__}: {exc}")
    vals = {k: (r.ann_reward, r.ann_net_return, r.switch_count) for k, r in results.items()}
    return SimOutcome(cell, sim, vals)


def build_tasks(grid, sim, fqi, env, n_sims, master_seed=0, forced_seed=None):
    tasks = []
    for L, cost, n_est in grid.cells():
        key = cell_key(L, cost, n_est)
        cell = (int(L), float(cost), int(n_est))
        for s in range(n_sims):
            if forced_seed is None:
                data_seed = derive_seed(master_seed, "data", n_est, s)
                action_seed = derive_seed(master_seed, "actions", key, s)
            else:
                data_seed = action_seed = int(forced_seed)
            sim_cfg = replace(sim, L=int(L), n_est=int(n_est), seed=data_seed)
            fqi_cfg = replace(fqi, basis=replace(fqi.basis, raw_dim=int(L)), seed=action_seed)
            tasks.append((cell, s, sim_cfg, fqi_cfg, replace(env, cost_rate=float(cost)), action_seed))
    return tasks


def aggregate(outcomes, strategies, n_sims):
    """Order-independent reduction of per-sim outcomes into an McReport."""
    by_cell = {}
    failures = []
    for o in sorted(outcomes, key=lambda o: (o.cell, o.sim)):
        by_cell.setdefault(o.cell, [])
        if o.values is None:
            failures.append((o.cell, o.sim, o.error))
        else:
            by_cell[o.cell].append(o.values)
    cells = {}
    for cell in sorted(by_cell):
        vals = by_cell[cell]
        for name in strategies:
            arr = np.array([v[name] for v in vals], dtype=np.float64).reshape(-1, 3)
            mean, se = _mean_se(arr[:, 0])
            ok = arr[np.isfinite(arr[:, 0])]
            cells[(*cell, name)] = CellStat(mean, se, int(ok.shape[0]),
                                            float(ok[:, 2].mean()) if ok.size else math.nan,
                                            float(ok[:, 1].mean()) if ok.size else math.nan)
    for cell, sim, err in failures:
        log.warning("cell %s sim %d failed: %s", cell, sim, err)
    return McReport(cells, n_sims, failures)


def run_mc_study(grid, sim=SimConfig(), fqi=None, n_sims=250, env=PortfolioEnv(), master_seed=0,
                 parallel=1, forced_seed=None):
    """Simulate, estimate and backtest every grid cell ``n_sims`` times."""
    if fqi is None:
        raise ConfigError("run_mc_study needs an FQIConfig template")
    if n_sims < 2:
        raise ConfigError(f"n_sims must be >= 2, got {n_sims}")
    if tuple(env.labels) != tuple(fqi.basis.action_space.labels):
        raise ConfigError("environment models and basis action labels differ")
    tasks = build_tasks(grid, sim, fqi, env, n_sims, master_seed, forced_seed)
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(_run_sim, tasks, chunksize=max(1, len(tasks) // (4 * parallel))))
    else:
        outcomes = [_run_sim(t) for t in tasks]
    return aggregate(outcomes, study_strategies(env), n_sims)


# -- reports ----------------------------------------------------------------

def _write_csv(frame, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_report(report, path):
    """McReport -> grid CSV; BacktestResult(s) -> table CSV plus ``*_cumulative.csv``."""
    path = Path(path)
    if isinstance(report, McReport):
        frame = pd.DataFrame(report.rows(), columns=REPORT_COLUMNS)
        extra = pd.DataFrame(
            [(*k, s.n_ok, s.mean_switches, s.mean_ann_net_return) for k, s in report.cells.items()],
            columns=["L", "cost", "n_est", "strategy", "n_ok", "mean_switches", "mean_ann_net_return"],
        )
        _write_csv(extra, path.with_name(path.stem + "_detail.csv"))
        return [_write_csv(frame, path), path.with_name(path.stem + "_detail.csv")]
    results = [report] if isinstance(report, BacktestResult) else list(report)
    frame = pd.DataFrame(
        [(r.strategy, r.avg_reward, r.se_reward, r.ann_reward, r.ann_net_return, r.se_ann, r.switch_count,
          r.skipped) for r in results],
        columns=BACKTEST_COLUMNS,
    )
    long = pd.DataFrame(
        [(r.strategy, t, x, c) for r in results
         for t, (x, c) in enumerate(zip(r.per_period_rewards, r.cumulative_rewards()), start=1)],
        columns=["strategy", "t", "reward", "cumulative_reward"],
    )
    cum = path.with_name(path.stem + "_cumulative.csv")
    return [_write_csv(frame, path), _write_csv(long, cum)]


def read_report(path):
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from None
    if list(frame.columns) != REPORT_COLUMNS:
        raise DataError(f"{path}: unexpected columns {list(frame.columns)}")
    cells = {
        (int(r.L), float(r.cost), int(r.n_est), str(r.strategy)): CellStat(float(r.mean), float(r.se), 0)
        for r in frame.itertuples(index=False)
    }
    return McReport(cells)


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if hasattr(obj, "value"):
        return obj.value
    return obj


def write_manifest(path, config, master_seed, outputs=()):
    """Provenance record; the only file carrying a timestamp."""
    from . import __version__

    record = {
        "package_version": __version__,
        "backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "master_seed": int(master_seed),
        "config": _jsonable(config),
        "outputs": [str(p) for p in outputs],
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return path
