import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modelswitch.errors import ConfigError, DataError
from modelswitch.ingest import (
    DigitizerSpec, ZScoreState, digitize, init_zscore, load_covariates, preprocess, read_matrix_csv, zscore_step,
    write_matrix_csv,
)


def test_constant_series_scores_zero():
    st_ = init_zscore([2.5])
    for _ in range(10):
        st_, z, flags = zscore_step(st_, [2.5])
        assert z[0] == 0.0 and not flags[0]


def test_zscore_arithmetic():
    state = ZScoreState(np.array([0.0]), np.array([1.0]), 0.99)
    state, z, _ = zscore_step(state, [2.0])
    assert state.mu[0] == pytest.approx(0.02)
    assert state.m2[0] == pytest.approx(1.03)
    assert z[0] == pytest.approx((2 - 0.02) / math.sqrt(1.03), abs=1e-12)
    assert z[0] == pytest.approx(1.951, abs=1e-3)


def test_lambda_near_one_freezes_state():
    lam = 1 - 1e-12
    state = ZScoreState(np.array([1.0]), np.array([4.0]), lam)
    _, z, _ = zscore_step(state, [3.0])
    assert z[0] == pytest.approx((3 - 1) / 2, abs=1e-9)
    with pytest.raises(ConfigError):
        ZScoreState(np.array([0.0]), np.array([1.0]), 1.0)


def test_zero_scale_repeats_previous_z():
    state = init_zscore([0.0])
    state, z, flags = zscore_step(state, [0.0])
    assert flags[0] and z[0] == 0.0
    z_all, flags_all = preprocess(np.array([[0.0], [0.0], [1.0], [1.0]]))
    assert flags_all[:2, 0].all() and not flags_all[2:, 0].any()


@pytest.mark.parametrize("z,out", [(0.0, 4 / 7), (-5.0, 0.0), (10.0, 1.0), (-3.0, 1 / 7), (2.999, 6 / 7),
                                   (3.0, 1.0), (-0.5, 3 / 7)])
def test_digitize_examples(z, out):
    assert digitize(z) == pytest.approx(out, abs=1e-15)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_digitize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert digitize(lo) <= digitize(hi)


def test_digitizer_validation():
    with pytest.raises(ConfigError):
        DigitizerSpec(bin_edges=(0.0, 0.0))


@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
def test_pipeline_values_on_eight_point_grid(seed, n):
    x = np.random.default_rng(seed).standard_normal((n, 2)) * 3
    states, _ = preprocess(x)
    assert np.all(np.isin(np.round(states * 7), np.arange(8)))
    np.testing.assert_allclose(states * 7, np.round(states * 7), atol=1e-12)


def test_all_eight_values_attainable():
    z = np.array([-9, -2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 9])
    assert sorted(set(np.round(digitize(z) * 7).astype(int))) == list(range(8))


@given(st.integers(0, 2**32 - 1))
def test_pipeline_is_causal(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((30, 2))
    y = x.copy()
    y[20:] = rng.standard_normal((10, 2)) * 100
    a, _ = preprocess(x)
    b, _ = preprocess(y)
    np.testing.assert_array_equal(a[:20], b[:20])


def test_pipeline_matches_stepwise():
    x = np.random.default_rng(3).standard_normal((25, 3))
    out, _ = preprocess(x, lam=0.95, centered=True)
    state = init_zscore(x[0], 0.95, True)
    for t in range(25):
        state, z, _ = zscore_step(state, x[t])
        np.testing.assert_allclose(out[t], digitize(z))


def _write(p, text):
    p.write_text(text)
    return p


def test_load_well_formed(tmp_path):
    p = _write(tmp_path / "a.csv", "t,x,y\n1,0.1,2\n2,0.2,3\n3,0.3,4\n")
    cov = load_covariates(p)
    assert cov.names == ["x", "y"] and cov.values.shape == (3, 2)


def test_load_sorts_and_fills(tmp_path):
    p = _write(tmp_path / "b.csv", "date,x,y\n2020-01-03,3,30\n2020-01-01,1,\n2020-01-02,,20\n2020-01-04,4,\n")
    cov = load_covariates(p)
    assert cov.dropped_leading == 1
    np.testing.assert_array_equal(cov.values, [[1, 20], [3, 30], [4, 30]])
    assert cov.fill_counts == {"x": 1, "y": 1}


def test_single_interior_gap_fill_count(tmp_path):
    p = _write(tmp_path / "c.csv", "t,x\n1,1\n2,\n3,3\n")
    cov = load_covariates(p)
    assert cov.fill_counts["x"] == 1
    np.testing.assert_array_equal(cov.values[:, 0], [1, 1, 3])


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="2020-01-02"):
        load_covariates(_write(tmp_path / "d.csv", "t,x\n2020-01-02,1\n2020-01-02,2\n"))
    with pytest.raises(DataError, match="empty"):
        load_covariates(_write(tmp_path / "e.csv", ""))
    with pytest.raises(DataError, match="unparseable"):
        load_covariates(_write(tmp_path / "f.csv", "t,x\n1,abc\n"))
    with pytest.raises(DataError, match="not found"):
        load_covariates(tmp_path / "missing.csv")
    with pytest.raises(DataError, match="missing values"):
        read_matrix_csv(_write(tmp_path / "g.csv", "t,x\n1,\n2,1\n"))


def test_matrix_roundtrip(tmp_path):
    vals = np.random.default_rng(0).standard_normal((5, 3))
    write_matrix_csv(tmp_path / "m.csv", np.arange(1, 6), ["a", "b", "c"], vals)
    idx, names, back = read_matrix_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back, vals)
    assert names == ["a", "b", "c"] and list(idx) == [1, 2, 3, 4, 5]
