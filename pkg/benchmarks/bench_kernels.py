"""Time the numba kernels against their numpy twins on study-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from modelswitch import _kernels
from modelswitch.features import ActionSpace, BasisSpec, design
from modelswitch.fqi import augment
from modelswitch.numcore import solve_operator
from modelswitch.portfolio import PortfolioEnv, reward_panel, reward_table
from modelswitch.simgen import SimConfig, gen_sample


def study_inputs(n_est=500, N=500, seed=1):
    sample = gen_sample(SimConfig(n_est=n_est, n_test=1000, N=N, seed=seed))
    space = ActionSpace()
    basis = BasisSpec("Parsimonious", 1, space, intercept=True)
    env = PortfolioEnv()
    panel = augment(sample.raw_states[: n_est + 1], space, 1, seed)[0]
    rewards = reward_panel(env, panel, sample.returns[: n_est + 1])
    S, Sn, prev = panel.raw_states[:-1], panel.raw_states[1:], panel.action_idx[:-1]
    classes = [basis.for_action(a) for a in space.labels]
    X = np.stack([design(c, S, prev) for c in classes])
    Xn = np.stack([np.stack([design(c, Sn, np.full(n_est, a)) for c in classes]) for a in range(len(space))])
    ops = np.stack([solve_operator(X[a], 0.0, False, True) for a in range(len(space))])
    R = np.stack([rewards[a] for a in space.labels])
    table = reward_table(env, sample.returns)
    rng = np.random.default_rng(seed)
    return {
        "fqi_iterate": (ops, X, Xn, R, 0.98, np.inf, 1e-9, 2000),
        "switch_l1": (table.weights, sample.returns),
        "ewma_path": (sample.returns, np.mean(sample.returns[:20] ** 2, axis=0), 0.98),
        "follow_policy": (rng.standard_normal((1000, 3, 3)), 0),
        "ewma_zscore": (rng.standard_normal((5000, 3)), 0.99, False),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.NUMBA_KERNELS is None:
        raise SystemExit("numba is not importable")
    inputs = study_inputs()
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        np_fn, nb_fn = _kernels.NUMPY_KERNELS[name], _kernels.NUMBA_KERNELS[name]
        nb_fn(*call_args)  # compile outside the timing
        times = []
        for fn in (np_fn, nb_fn):
            number = 3
            best = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat)) / number
            times.append(best * 1e3)
        print(f"{name:<14}{times[0]:>12.3f}{times[1]:>12.3f}{times[0] / times[1]:>9.1f}x")


if __name__ == "__main__":
    main()
