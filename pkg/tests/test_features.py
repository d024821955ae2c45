import numpy as np
import pytest
from hypothesis import given, strategies as st

from modelswitch.errors import ConfigError, InputDomainError
from modelswitch.features import (
    ActionSpace, BasisSpec, Family, design, dimension, evaluate, evaluate_panel, raw_design,
)

TWO = ActionSpace(("a1", "a2"), (0.0, 1.0))


@pytest.mark.parametrize("family,L,K", [
    ("GeneralLinear", 2, 6),
    ("Additive", 2, 5),
    ("Parsimonious", 2, 3),
    ("CubicAdditive", 19, 61),
    ("Trigonometric", 1, 9),
])
def test_dimension(family, L, K):
    assert dimension(BasisSpec(family, L)) == K


def test_additive_example():
    spec = BasisSpec("Additive", 1, TWO)
    np.testing.assert_array_equal(evaluate(spec, [0.5], "a1"), [0.5, 0.0, 1.0])


def test_cubic_example():
    spec = BasisSpec("CubicAdditive", 1, TWO)
    np.testing.assert_allclose(evaluate(spec, [0.5], "a2"), [1, 0.5, 0.25, 0.125, 1, 1, 1])


def test_general_linear_example():
    spec = BasisSpec("GeneralLinear", 1, TWO)
    np.testing.assert_array_equal(evaluate(spec, [0.3], "a2"), [0.0, 0.3])


def test_general_linear_order_is_state_outer():
    spec = BasisSpec("GeneralLinear", 2, ActionSpace())
    row = evaluate(spec, [2.0, 3.0], "0.10")
    np.testing.assert_array_equal(row, [0, 2, 0, 0, 3, 0])


def test_parsimonious_needs_anchor_and_uses_it():
    spec = BasisSpec("Parsimonious", 2)
    with pytest.raises(ConfigError):
        evaluate(spec, [0.1, 0.2], "0.00")
    anchored = spec.for_action("0.10")
    np.testing.assert_array_equal(evaluate(anchored, [0.1, 0.2], "0.10"), [0.1, 0.2, 0.0])
    np.testing.assert_array_equal(evaluate(anchored, [0.1, 0.2], "0.75"), [0.1, 0.2, 1.0])


def test_intercept_flag():
    spec = BasisSpec("Parsimonious", 1, intercept=True).for_action("0.00")
    assert dimension(spec) == 3
    np.testing.assert_array_equal(evaluate(spec, [0.4], "0.75"), [1.0, 0.4, 1.0])
    assert spec.has_intercept
    with pytest.raises(ConfigError):
        BasisSpec("Additive", 1, intercept=True)


def test_errors():
    spec = BasisSpec("Additive", 1, TWO)
    with pytest.raises(InputDomainError):
        evaluate(spec, [0.5], "a3")
    with pytest.raises(InputDomainError):
        evaluate(spec, [np.nan], "a1")
    with pytest.raises(ConfigError):
        BasisSpec("Trigonometric", 2)
    with pytest.raises(ConfigError):
        BasisSpec("Splines", 1)
    with pytest.raises(ConfigError):
        ActionSpace(("a", "a"), (0, 1))
    with pytest.raises(ConfigError):
        ActionSpace(("a", "b"), (0, 2))


def test_panel_examples():
    spec = BasisSpec("Additive", 2)
    assert evaluate_panel(spec, []).values.shape == (0, 5)
    rows = [([0.1, 0.2], "0.00"), ([0.3, 0.4], "0.75"), ([0.5, 0.6], "0.10")]
    fm = evaluate_panel(spec, rows)
    assert (fm.rows, fm.cols) == (3, 5)
    np.testing.assert_array_equal(evaluate_panel(spec, rows[:1]).values[0], evaluate(spec, *rows[0]))
    perm = [2, 0, 1]
    np.testing.assert_array_equal(evaluate_panel(spec, [rows[i] for i in perm]).values, fm.values[perm])


families = st.sampled_from(list(Family))


@st.composite
def spec_and_rows(draw):
    fam = draw(families)
    L = 1 if fam is Family.TRIGONOMETRIC else draw(st.integers(1, 4))
    intercept = fam in (Family.GENERAL_LINEAR, Family.PARSIMONIOUS) and draw(st.booleans())
    spec = BasisSpec(fam, L, trig_order=draw(st.integers(1, 3)), intercept=intercept)
    spec = spec.for_action(draw(st.sampled_from(spec.action_space.labels)))
    n = draw(st.integers(1, 12))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    return spec, rng.uniform(0, 1, (n, L)), rng.integers(0, 3, n)


@given(spec_and_rows())
def test_width_matches_dimension(case):
    spec, S, prev = case
    X = design(spec, S, prev)
    assert X.shape == (S.shape[0], dimension(spec))
    assert np.all(np.isfinite(X))


@given(spec_and_rows())
def test_rowwise_equals_vectorised(case):
    spec, S, prev = case
    labels = spec.action_space.labels
    rows = np.array([evaluate(spec, s, labels[p]) for s, p in zip(S, prev)])
    np.testing.assert_array_equal(rows, design(spec, S, prev))


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_parsimonious_embeds_in_additive_with_intercept(L, seed):
    rng = np.random.default_rng(seed)
    space = ActionSpace()
    anchor = int(rng.integers(0, 3))
    pars = BasisSpec("Parsimonious", L, space).for_action(space.labels[anchor])
    add = BasisSpec("Additive", L, space)
    b = rng.standard_normal(L + 1)
    # additive-with-intercept coefficients: (intercept, states, one indicator per action)
    embed = np.zeros(1 + L + 3)
    embed[1:1 + L] = b[:L]
    embed[1 + L + anchor] = b[L]
    S, prev = rng.standard_normal((25, L)), rng.integers(0, 3, 25)
    Xa = np.hstack([np.ones((25, 1)), design(add, S, prev)])
    np.testing.assert_allclose(design(pars, S, prev) @ b, Xa @ embed, atol=1e-12)


def test_general_linear_zero_outside_block(rng):
    spec = BasisSpec("GeneralLinear", 3)
    S, prev = rng.standard_normal((50, 3)), rng.integers(0, 3, 50)
    X = design(spec, S, prev).reshape(50, 3, 3)
    for j in range(3):
        assert np.all(X[prev != j][:, :, j] == 0)


def test_trigonometric_gram_is_identity():
    spec = BasisSpec("Trigonometric", 1, trig_order=3)
    grid = (np.arange(10_000) + 0.5) / 10_000
    for a in range(3):
        X = design(spec, grid[:, None], np.full(grid.size, a))
        block = X[:, a * 7:(a + 1) * 7]
        np.testing.assert_allclose(block.T @ block / grid.size, np.eye(7), atol=1e-2)
        assert np.all(np.delete(X, np.s_[a * 7:(a + 1) * 7], axis=1) == 0)


def test_raw_design_drops_action_terms(rng):
    S = rng.uniform(size=(10, 2))
    X, has_int = raw_design(BasisSpec("Parsimonious", 2, intercept=True), S)
    np.testing.assert_array_equal(X, np.hstack([np.ones((10, 1)), S]))
    assert has_int
    X, has_int = raw_design(BasisSpec("CubicAdditive", 2), S)
    assert X.shape == (10, 7) and has_int
    X, has_int = raw_design(BasisSpec("GeneralLinear", 2), S)
    np.testing.assert_array_equal(X, S)
    assert not has_int


def test_basis_roundtrip():
    spec = BasisSpec("Trigonometric", 1, ActionSpace(("x", "y"), (0.0, 1.0)), trig_order=2)
    assert BasisSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        BasisSpec.from_dict({"family": "Additive"})
