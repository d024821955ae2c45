import os
import subprocess
import sys

import numpy as np
import pytest

from modelswitch import _kernels
from modelswitch.features import BasisSpec, design
from modelswitch.numcore import solve_operator

pytestmark = pytest.mark.skipif(_kernels.NUMBA_KERNELS is None, reason="numba not installed")
NP, NB = _kernels.NUMPY_KERNELS, _kernels.NUMBA_KERNELS


def _close(a, b, tol=1e-12):
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_ewma_path(rng):
    R = rng.normal(0, 0.02, (200, 7))
    m0 = rng.uniform(1e-4, 1e-3, 7)
    _close(NP["ewma_path"](R, m0, 0.98), NB["ewma_path"](R, m0, 0.98))


def test_switch_l1(rng):
    W = rng.dirichlet(np.ones(6), size=(3, 50))
    R = rng.normal(0, 0.02, (50, 6))
    d1, g1 = NP["switch_l1"](W, R)
    d2, g2 = NB["switch_l1"](W, R)
    _close(d1, d2)
    np.testing.assert_array_equal(g1, g2)


def _fqi_inputs(rng, n=120):
    basis = BasisSpec("Parsimonious", 2, intercept=True)
    S = rng.uniform(-1, 1, (n + 1, 2))
    prev = rng.integers(0, 3, n + 1)
    classes = [basis.for_action(a) for a in basis.action_space.labels]
    X = np.stack([design(c, S[:n], prev[:n]) for c in classes])
    Xn = np.stack([np.stack([design(c, S[1:], np.full(n, a)) for c in classes]) for a in range(3)])
    ops = np.stack([solve_operator(X[a], 0.0) for a in range(3)])
    R = rng.normal(0, 1e-2, (3, n)) + S[:n, 0] * 1e-2
    return ops, X, Xn, R


@pytest.mark.parametrize("cap", [np.inf, 0.05])
def test_fqi_iterate(rng, cap):
    args = (*_fqi_inputs(rng), 0.9, cap, 1e-10, 400)
    c1, i1, r1, t1, ok1 = NP["fqi_iterate"](*args)
    c2, i2, r2, t2, ok2 = NB["fqi_iterate"](*args)
    assert i1 == i2 and ok1 == ok2
    _close(c1, c2, 1e-10)
    _close(r1, r2, 1e-9)
    _close(t1, t2, 1e-10)


def test_follow_policy(rng):
    q = rng.standard_normal((300, 3, 3))
    q[5] = 0.0  # exact tie row
    np.testing.assert_array_equal(NP["follow_policy"](q, 1), NB["follow_policy"](q, 1))
    assert NP["follow_policy"](q, 1)[5] == 0


@pytest.mark.parametrize("centered", [False, True])
def test_ewma_zscore(rng, centered):
    x = rng.standard_normal((80, 4))
    x[:10, 1] = 0.0
    z1, f1 = NP["ewma_zscore"](x, 0.99, centered)
    z2, f2 = NB["ewma_zscore"](x, 0.99, centered)
    _close(z1, z2)
    np.testing.assert_array_equal(f1, f2)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, MODELSWITCH_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import modelswitch; print(modelswitch.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
