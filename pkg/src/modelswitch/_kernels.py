"""Hot inner loops, in two flavours.

Every kernel exists as a numba ``@njit`` function and as a pure-numpy
function with the same signature. The backend is chosen once at import:
set ``MODELSWITCH_DISABLE_NUMBA=1`` (or run without numba installed) to get
the numpy path. Both implementations are importable directly as
``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` for benchmarking and cross-checks.

Results are deterministic within a backend. Across backends they agree to
rounding error only.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("MODELSWITCH_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = numba is not None and not _DISABLED


# -- numpy reference implementations --------------------------------------

def ewma_path_np(values, m0, lam):
    """m_t = lam*m_{t-1} + (1-lam)*x_t**2 along axis 0, returning every m_t."""
    out = np.empty(values.shape, dtype=np.float64)
    m = np.array(m0, dtype=np.float64, copy=True)
    for t in range(values.shape[0]):
        m = lam * m + (1.0 - lam) * values[t] * values[t]
        out[t] = m
    return out


def switch_l1_np(weights, returns):
    """ℓ1 distance between each model's target and every model's drifted holdings.

    ``weights`` is (A, T, N) target weights, ``returns`` is (T, N) simple
    returns. Returns ``dist`` of shape (T-1, A_prev, A) where
    ``dist[i-1, p, a] = |w[a, i] - drift(w[p, i-1], 1 + r[i])|_1`` and a
    boolean ``degenerate`` (T-1, A_prev) marking non-positive normalisers
    (their distances are NaN).
    """
    n_act, n_t, _ = weights.shape
    grown = weights[:, :-1, :] * (1.0 + returns[None, 1:, :])
    norm = grown.sum(axis=2)
    degenerate = (norm <= 0.0).T
    with np.errstate(divide="ignore", invalid="ignore"):
        drifted = grown / norm[:, :, None]
    dist = np.empty((n_t - 1, n_act, n_act))
    for p in range(n_act):
        for a in range(n_act):
            dist[:, p, a] = np.abs(weights[a, 1:, :] - drifted[p]).sum(axis=1)
    dist[np.repeat(degenerate[:, :, None], n_act, axis=2)] = np.nan
    return dist, degenerate


def fqi_iterate_np(solve_ops, x_cur, x_next, rewards, gamma, cap, eps, max_iters):
    """Capped fitted Q-iteration with fixed per-action linear solve operators.

    solve_ops: (A, K, n), coefficients are ``solve_ops[a] @ targets[a]``.
    x_cur:     (A, n, K) features of the in-sample states for each action's class.
    x_next:    (A, A', n, K) features of T^a S_t evaluated in class a'.
    rewards:   (A, n).
    Returns (coef (A, K), iterations, residuals, targets (A, n), converged).
    """
    n_act = rewards.shape[0]
    targets = rewards.copy()
    v_old = np.zeros(rewards.shape[1])
    residuals = np.zeros(max_iters)
    coef = np.zeros((n_act, solve_ops.shape[1]))
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        coef = np.einsum("akn,an->ak", solve_ops, targets)
        fitted = np.clip(np.einsum("ank,ak->an", x_cur, coef), -cap, cap)
        v_new = fitted.max(axis=0)
        res = np.sqrt(np.mean((v_new - v_old) ** 2))
        residuals[it - 1] = res
        if res <= eps:
            converged = True
            break
        nxt = np.clip(np.einsum("abnk,bk->abn", x_next, coef), -cap, cap)
        targets = rewards + gamma * nxt.max(axis=1)
        v_old = v_new
    return coef, it, residuals[:it].copy(), targets, converged


def follow_policy_np(qtab, start):
    """Greedy walk through ``qtab[i, prev, a]``; ties go to the lowest index."""
    path = np.empty(qtab.shape[0], dtype=np.int64)
    prev = start
    for i in range(qtab.shape[0]):
        prev = int(np.argmax(qtab[i, prev]))
        path[i] = prev
    return path


def ewma_zscore_np(x, lam, centered):
    """Causal EWMA z-scores, state seeded from the first row.

    Rows with zero scale repeat the previous z (0 before any valid z) and are
    flagged.
    """
    n_t, n_col = x.shape
    z = np.zeros((n_t, n_col))
    flags = np.zeros((n_t, n_col), dtype=np.bool_)
    if n_t == 0:
        return z, flags
    mu = x[0].astype(np.float64).copy()
    m2 = np.zeros(n_col) if centered else x[0] * x[0]
    last = np.zeros(n_col)
    for t in range(n_t):
        mu = lam * mu + (1.0 - lam) * x[t]
        if centered:
            m2 = lam * m2 + (1.0 - lam) * (x[t] - mu) ** 2
        else:
            m2 = lam * m2 + (1.0 - lam) * x[t] * x[t]
        sd = np.sqrt(m2)
        ok = sd > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            zt = np.where(ok, (x[t] - mu) / np.where(ok, sd, 1.0), last)
        z[t] = zt
        flags[t] = ~ok
        last = zt
    return z, flags


NUMPY_KERNELS = {
    "ewma_path": ewma_path_np,
    "switch_l1": switch_l1_np,
    "fqi_iterate": fqi_iterate_np,
    "follow_policy": follow_policy_np,
    "ewma_zscore": ewma_zscore_np,
}


# -- numba implementations -------------------------------------------------

def _build_numba_kernels():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def ewma_path_nb(values, m0, lam):
        n_t, n_col = values.shape
        out = np.empty((n_t, n_col))
        m = m0.astype(np.float64).copy()
        for t in range(n_t):
            for k in range(n_col):
                m[k] = lam * m[k] + (1.0 - lam) * values[t, k] * values[t, k]
                out[t, k] = m[k]
        return out

    @njit
    def switch_l1_nb(weights, returns):
        n_act, n_t, n_asset = weights.shape
        dist = np.empty((n_t - 1, n_act, n_act))
        degenerate = np.zeros((n_t - 1, n_act), dtype=np.bool_)
        drifted = np.empty(n_asset)
        for i in range(1, n_t):
            for p in range(n_act):
                norm = 0.0
                for k in range(n_asset):
                    drifted[k] = weights[p, i - 1, k] * (1.0 + returns[i, k])
                    norm += drifted[k]
                if norm <= 0.0:
                    degenerate[i - 1, p] = True
                    for a in range(n_act):
                        dist[i - 1, p, a] = np.nan
                    continue
                for k in range(n_asset):
                    drifted[k] /= norm
                for a in range(n_act):
                    acc = 0.0
                    for k in range(n_asset):
                        acc += abs(weights[a, i, k] - drifted[k])
                    dist[i - 1, p, a] = acc
        return dist, degenerate

    @njit
    def fqi_iterate_nb(solve_ops, x_cur, x_next, rewards, gamma, cap, eps, max_iters):
        n_act, n_obs = rewards.shape
        n_feat = solve_ops.shape[1]
        targets = rewards.copy()
        v_old = np.zeros(n_obs)
        v_new = np.empty(n_obs)
        residuals = np.zeros(max_iters)
        coef = np.zeros((n_act, n_feat))
        converged = False
        it = 0
        for it in range(1, max_iters + 1):
            for a in range(n_act):
                for k in range(n_feat):
                    acc = 0.0
                    for t in range(n_obs):
                        acc += solve_ops[a, k, t] * targets[a, t]
                    coef[a, k] = acc
            sq = 0.0
            for t in range(n_obs):
                best = -np.inf
                for a in range(n_act):
                    acc = 0.0
                    for k in range(n_feat):
                        acc += x_cur[a, t, k] * coef[a, k]
                    acc = min(max(acc, -cap), cap)
                    if acc > best:
                        best = acc
                v_new[t] = best
                d = best - v_old[t]
                sq += d * d
            res = np.sqrt(sq / n_obs)
            residuals[it - 1] = res
            if res <= eps:
                converged = True
                break
            for a in range(n_act):
                for t in range(n_obs):
                    best = -np.inf
                    for b in range(n_act):
                        acc = 0.0
                        for k in range(n_feat):
                            acc += x_next[a, b, t, k] * coef[b, k]
                        acc = min(max(acc, -cap), cap)
                        if acc > best:
                            best = acc
                    targets[a, t] = rewards[a, t] + gamma * best
            for t in range(n_obs):
                v_old[t] = v_new[t]
        return coef, it, residuals[:it].copy(), targets, converged

    @njit
    def follow_policy_nb(qtab, start):
        m, _, n_act = qtab.shape
        path = np.empty(m, dtype=np.int64)
        prev = start
        for i in range(m):
            best = 0
            for a in range(1, n_act):
                if qtab[i, prev, a] > qtab[i, prev, best]:
                    best = a
            path[i] = best
            prev = best
        return path

    @njit
    def ewma_zscore_nb(x, lam, centered):
        n_t, n_col = x.shape
        z = np.zeros((n_t, n_col))
        flags = np.zeros((n_t, n_col), dtype=np.bool_)
        if n_t == 0:
            return z, flags
        for k in range(n_col):
            mu = x[0, k]
            m2 = 0.0 if centered else x[0, k] * x[0, k]
            last = 0.0
            for t in range(n_t):
                mu = lam * mu + (1.0 - lam) * x[t, k]
                if centered:
                    m2 = lam * m2 + (1.0 - lam) * (x[t, k] - mu) ** 2
                else:
                    m2 = lam * m2 + (1.0 - lam) * x[t, k] * x[t, k]
                sd = np.sqrt(m2)
                if sd > 0.0:
                    last = (x[t, k] - mu) / sd
                else:
                    flags[t, k] = True
                z[t, k] = last
        return z, flags

    return {
        "ewma_path": ewma_path_nb,
        "switch_l1": switch_l1_nb,
        "fqi_iterate": fqi_iterate_nb,
        "follow_policy": follow_policy_nb,
        "ewma_zscore": ewma_zscore_nb,
    }


NUMBA_KERNELS = _build_numba_kernels() if numba is not None else None
KERNELS = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
BACKEND = "numba" if USE_NUMBA else "numpy"


def _as_f64(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def ewma_path(values, m0, lam):
    return KERNELS["ewma_path"](_as_f64(values), _as_f64(m0), float(lam))


def switch_l1(weights, returns):
    return KERNELS["switch_l1"](_as_f64(weights), _as_f64(returns))


def fqi_iterate(solve_ops, x_cur, x_next, rewards, gamma, cap, eps, max_iters):
    return KERNELS["fqi_iterate"](
        _as_f64(solve_ops), _as_f64(x_cur), _as_f64(x_next), _as_f64(rewards),
        float(gamma), float(cap), float(eps), int(max_iters),
    )


def follow_policy(qtab, start):
    return KERNELS["follow_policy"](_as_f64(qtab), int(start))


def ewma_zscore(x, lam, centered=False):
    return KERNELS["ewma_zscore"](_as_f64(x), float(lam), bool(centered))
