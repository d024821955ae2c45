"""Command-line front end: simulate | preprocess | estimate | backtest | mc.

Configuration is an INI file; command-line flags override file values,
which override built-in defaults. Recognised sections and keys::

    [run]     seed, sims, parallel, out
    [sim]     n_est, n_test, L, N, sigma_eps, regime_corr, threshold, bad_variance_mult
    [basis]   family, intercept, trig_order, labels, numeric_codes
    [fqi]     gamma, cap_B, epsilon, max_iters, n_replications
    [ridge]   rho, penalize_intercept, rho_grid   (rho_grid: comma list, "aic" or empty)
    [env]     levels ("label:c, ..."), cost_rate, utility, risk_aversion, vol_lambda, vol_warmup
    [study]   Ls, costs, n_ests
    [ingest]  input, lam, centered
    [paths]   data_dir, policy
    [backtest] initial_action
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import bench, fqi as fqi_mod, ingest, simgen
from .errors import ConfigError, DataError, ModelSwitchError
from .features import ActionSpace, BasisSpec
from .fqi import FQIConfig
from .numcore import DEFAULT_RHO_GRID, RidgeConfig
from .portfolio import Holdings, PortfolioEnv, Utility, reward_panel, reward_table

log = logging.getLogger("modelswitch")

SCHEMA = {
    "run": {"seed": (int, 0), "sims": (int, 250), "parallel": (int, 1), "out": (str, "out")},
    "sim": {
        "n_est": (int, 500), "n_test": (int, 1000), "L": (int, 1), "N": (int, 500),
        "sigma_eps": (float, 0.25), "regime_corr": (float, 0.9), "threshold": (float, -0.5),
        "bad_variance_mult": (float, 1.0),
    },
    "basis": {
        "family": (str, "Parsimonious"), "intercept": (bool, True), "trig_order": (int, 1),
        "labels": (str, "0.00, 0.10, 0.75"), "numeric_codes": (str, "0, 0.5, 1"),
    },
    "fqi": {
        "gamma": (float, 0.98), "cap_B": (float, math.inf), "epsilon": (float, 1e-9),
        "max_iters": (int, 2000), "n_replications": (int, 10),
    },
    "ridge": {"rho": (float, 0.0), "penalize_intercept": (bool, False), "rho_grid": (str, "")},
    "env": {
        "levels": (str, "0.00:0, 0.10:0.1, 0.75:0.75"), "cost_rate": (float, 0.0), "utility": (str, "log"),
        "risk_aversion": (float, 2.0), "vol_lambda": (float, 0.98), "vol_warmup": (int, 20),
    },
    "study": {"Ls": (str, "1, 10"), "costs": (str, "0, 0.0005, 0.001"), "n_ests": (str, "500, 1000")},
    "ingest": {"input": (str, ""), "lam": (float, 0.99), "centered": (bool, False)},
    "paths": {"data_dir": (str, ""), "policy": (str, "")},
    "backtest": {"initial_action": (str, "")},
}


@dataclass
class RunConfig:
    values: dict
    defaulted: list = field(default_factory=list)

    def get(self, section, key):
        return self.values[section][key]

    @property
    def seed(self):
        return self.get("run", "seed")

    def sim(self):
        s = self.values["sim"]
        return simgen.SimConfig(s["n_est"], s["n_test"], s["L"], s["N"], s["sigma_eps"], s["regime_corr"],
                                 s["threshold"], self.seed, s["bad_variance_mult"])

    def env(self):
        e = self.values["env"]
        return PortfolioEnv(_parse_levels(e["levels"]), e["cost_rate"], Utility(e["utility"], e["risk_aversion"]),
                            e["vol_lambda"], None, e["vol_warmup"])

    def action_space(self):
        b = self.values["basis"]
        return ActionSpace(tuple(_split(b["labels"])), tuple(float(x) for x in _split(b["numeric_codes"])))

    def basis(self, raw_dim):
        b = self.values["basis"]
        return BasisSpec(b["family"], raw_dim, self.action_space(), b["trig_order"], None, b["intercept"])

    def ridge(self):
        r = self.values["ridge"]
        grid = r["rho_grid"].strip().lower()
        if grid == "aic":
            rho_grid = DEFAULT_RHO_GRID
        elif grid:
            rho_grid = tuple(float(x) for x in _split(grid))
        else:
            rho_grid = ()
        return RidgeConfig(r["rho"], r["penalize_intercept"], rho_grid)

    def fqi(self, raw_dim):
        f = self.values["fqi"]
        return FQIConfig(self.basis(raw_dim), f["gamma"], f["cap_B"], f["epsilon"], f["max_iters"],
                         f["n_replications"], self.ridge(), self.seed)

    def grid(self):
        s = self.values["study"]
        return bench.StudyGrid(tuple(int(x) for x in _split(s["Ls"])), tuple(float(x) for x in _split(s["costs"])),
                               tuple(int(x) for x in _split(s["n_ests"])))


def _split(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _parse_levels(text):
    levels = {}
    for item in _split(text):
        label, sep, c = item.partition(":")
        if not sep:
            raise ConfigError(f"env.levels entry {item!r} is not label:c")
        levels[label.strip()] = float(c)
    return levels


def _convert(kind, raw, where):
    try:
        if kind is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is float and str(raw).strip().lower() in ("inf", "infinity"):
            return math.inf
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path=None, overrides=None):
    """Resolve defaults, then the file, then ``overrides`` ({(section, key): value})."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    overrides = overrides or {}
    values, defaulted = {}, []
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            if (section, key) in overrides and overrides[(section, key)] is not None:
                val = _convert(kind, overrides[(section, key)], f"--{key}")
            elif parser.has_option(section, key):
                val = _convert(kind, parser.get(section, key), f"[{section}] {key}")
            else:
                val = default
                defaulted.append(f"{section}.{key}")
                log.debug("%s.%s defaulted to %r", section, key, default)
            values[section][key] = val
    cfg = RunConfig(values, defaulted)
    if cfg.get("run", "parallel") < 1:
        raise ConfigError("parallel must be >= 1")
    if cfg.get("run", "sims") < 1:
        raise ConfigError("sims must be >= 1")
    return cfg


# -- data plumbing ----------------------------------------------------------

def _load_data(data_dir):
    d = Path(data_dir)
    s_idx, s_names, states = ingest.read_matrix_csv(d / "states.csv")
    r_idx, _, returns = ingest.read_matrix_csv(d / "returns.csv")
    if states.shape[0] != returns.shape[0] or [str(x) for x in s_idx] != [str(x) for x in r_idx]:
        raise DataError(f"{d}: states.csv and returns.csv rows are not aligned")
    return states, returns


def _split_point(cfg, n_rows):
    n_est = cfg.get("sim", "n_est")
    if n_est + 1 >= n_rows:
        raise DataError(f"n_est = {n_est} leaves no test rows in {n_rows}-row data")
    return n_est


def _write_manifest(out, cfg, command, outputs):
    return bench.write_manifest(Path(out) / "manifest.json", {"command": command, **cfg.values},
                                cfg.seed, outputs)


def _fit_all(panels, rewards, config, parallel):
    if parallel > 1 and len(panels) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            ests = list(pool.map(fqi_mod.fqi_run, panels, rewards, [config] * len(panels)))
    else:
        ests = [fqi_mod.fqi_run(p, r, config) for p, r in zip(panels, rewards)]
    return fqi_mod.average_q(ests)


# -- subcommands ------------------------------------------------------------

def cmd_simulate(cfg, out_dir):
    sample = simgen.gen_sample(cfg.sim())
    files = simgen.write_sample(sample, out_dir)
    return [*files, _write_manifest(out_dir, cfg, "simulate", files)]


def cmd_preprocess(cfg, out_dir, input_path=None):
    src = input_path or cfg.get("ingest", "input")
    if not src or src == "demo":
        src = resources.files("modelswitch") / "data" / "covariates_demo.csv"
    cov = ingest.load_covariates(src)
    states, flags = ingest.preprocess(cov.values, cfg.get("ingest", "lam"), cfg.get("ingest", "centered"))
    if flags.any():
        log.warning("%d zero-scale z-scores repeated their previous value", int(flags.sum()))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = pd.Index(cov.index)
    if isinstance(index, pd.DatetimeIndex):
        index = index.strftime("%Y-%m-%d")
    path = out / "states.csv"
    ingest.write_matrix_csv(path, np.asarray(index), cov.names, states, index_name="t")
    return [path, _write_manifest(out, cfg, "preprocess", [path])]


def cmd_estimate(cfg, data_dir, out_dir):
    states, returns = _load_data(data_dir)
    n_est = _split_point(cfg, states.shape[0])
    config = cfg.fqi(states.shape[1])
    env = cfg.env()
    if tuple(env.labels) != config.basis.action_space.labels:
        raise ConfigError("env.levels labels must match basis.labels")
    table = reward_table(env, returns[: n_est + 1])
    panels = fqi_mod.augment(states[: n_est + 1], config.basis.action_space, config.n_replications, config.seed)
    rewards = [reward_panel(env, p, None, table=table) for p in panels]
    policy = _fit_all(panels, rewards, config, cfg.get("run", "parallel"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = out / "policy.json"
    fqi_mod.save_policy(policy, art)
    conv = pd.DataFrame(
        [(q.replication_id, j + 1, r, q.converged) for q in policy.estimates for j, r in enumerate(q.residual_history)],
        columns=["replication", "iteration", "residual", "converged"],
    )
    conv_path = out / "convergence.csv"
    conv.to_csv(conv_path, index=False, lineterminator="\n")
    bad = [q for q in policy.estimates if not q.converged]
    for q in bad:
        log.warning("replication %d not converged after %d iterations, last residual %.3g",
                    q.replication_id, q.iterations_run, q.residual_history[-1])
    return [art, conv_path, _write_manifest(out, cfg, "estimate", [art, conv_path])]


def cmd_backtest(cfg, policy_path, data_dir, out_dir):
    states, returns = _load_data(data_dir)
    n_est = _split_point(cfg, states.shape[0])
    env = cfg.env()
    strategies = []
    if policy_path:
        policy = fqi_mod.load_policy(policy_path)
        if policy.basis.raw_dim != states.shape[1]:
            raise DataError(f"{policy_path}: policy expects {policy.basis.raw_dim} state columns, "
                            f"data has {states.shape[1]}")
        if policy.action_space.labels != env.labels:
            raise DataError(f"{policy_path}: policy actions {policy.action_space.labels} != env {env.labels}")
        strategies.append(bench.Strategy.rl(policy))
    table = reward_table(env, returns)
    basis = cfg.basis(states.shape[1])
    panel = fqi_mod.StateActionPanel(states[: n_est + 1], np.zeros(n_est + 1, dtype=np.int64), basis.action_space)
    cf = table.cost_free_rewards()[:n_est]
    strategies.append(bench.fit_greedy(panel, {a: cf[:, j] for j, a in enumerate(env.labels)}, basis, cfg.ridge()))
    strategies += [bench.Strategy.fixed(a) for a in env.labels] + [bench.Strategy.average_fixed()]
    first = cfg.get("backtest", "initial_action") or env.labels[0]
    if first not in env.labels:
        raise ConfigError(f"backtest.initial_action {first!r} not among {env.labels}")
    a0 = env.labels.index(first)
    test = table.tail(n_est)
    results = []
    for strat in strategies:
        w = table.weights[:, n_est - 1].mean(axis=0) if strat.kind == "AverageFixed" else table.weights[a0, n_est - 1]
        results.append(bench.rollout(strat, states[n_est:], returns[n_est:], env, Holdings(w, first), table=test))
    files = bench.write_report(results, Path(out_dir) / "backtest.csv")
    return [*files, _write_manifest(out_dir, cfg, "backtest", files)]


def cmd_mc(cfg, out_dir):
    sims = cfg.get("run", "sims")
    report = bench.run_mc_study(cfg.grid(), cfg.sim(), cfg.fqi(cfg.get("sim", "L")), sims, cfg.env(),
                                cfg.seed, cfg.get("run", "parallel"))
    if report.failures:
        log.warning("%d simulations failed; affected cells use fewer sims", len(report.failures))
    files = bench.write_report(report, Path(out_dir) / "mc_report.csv")
    return [*files, _write_manifest(out_dir, cfg, "mc", files)]


# -- entry point ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="modelswitch", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--sims", type=int, help="Monte-Carlo simulations")
    common.add_argument("--parallel", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic states/returns sample")
    pre = sub.add_parser("preprocess", parents=[common], help="z-score and digitise a covariate CSV")
    pre.add_argument("--input", help="covariate CSV ('demo' for the bundled file)")
    est = sub.add_parser("estimate", parents=[common], help="fit and save a policy")
    est.add_argument("--data", help="directory holding states.csv and returns.csv")
    bt = sub.add_parser("backtest", parents=[common], help="roll out strategies on the test split")
    bt.add_argument("--data", help="directory holding states.csv and returns.csv")
    bt.add_argument("--policy", help="policy artifact; omit for baselines only")
    sub.add_parser("mc", parents=[common], help="Monte-Carlo study over the configured grid")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {("run", "seed"): args.seed, ("run", "sims"): args.sims, ("run", "parallel"): args.parallel,
                 ("run", "out"): args.out}
    if getattr(args, "data", None):
        overrides[("paths", "data_dir")] = args.data
    if getattr(args, "policy", None):
        overrides[("paths", "policy")] = args.policy
    cfg = load_config(args.config, overrides)
    out = cfg.get("run", "out")
    data_dir = cfg.get("paths", "data_dir")
    if args.command in ("estimate", "backtest") and not data_dir:
        raise ConfigError("--data (or [paths] data_dir) is required")
    if args.command == "simulate":
        files = cmd_simulate(cfg, out)
    elif args.command == "preprocess":
        files = cmd_preprocess(cfg, out, args.input)
    elif args.command == "estimate":
        files = cmd_estimate(cfg, data_dir, out)
    elif args.command == "backtest":
        files = cmd_backtest(cfg, cfg.get("paths", "policy") or None, data_dir, out)
    else:
        files = cmd_mc(cfg, out)
    for f in files:
        print(f)
    return 0


def main(argv=None):
    try:
        return run(argv)
    except ModelSwitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
