import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from esn_feedback import readout
from esn_feedback.errors import DegenerateTargetError, UsageError


def test_constant_data_has_zero_moments():
    s = readout.accumulate(np.ones((5, 2)), np.full(5, 3.0))
    assert np.all(s.K_xx == 0) and np.all(s.K_xy == 0) and s.y_var == 0


def test_two_point_moments_by_hand():
    s = readout.accumulate([[0.0], [1.0]], [0.0, 2.0])
    assert s.K_xx[0, 0] == 0.25 and s.K_xy[0] == 0.5 and s.y_var == 1.0


def test_moments_permutation_invariant():
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((40, 3)), rng.standard_normal(40)
    perm = rng.permutation(40)
    a, b = readout.accumulate(X, y), readout.accumulate(X[perm], y[perm])
    np.testing.assert_allclose(a.K_xx, b.K_xx, atol=1e-15)
    np.testing.assert_allclose(a.K_xy, b.K_xy, atol=1e-15)


def test_accumulate_errors():
    with pytest.raises(UsageError):
        readout.accumulate(np.ones((3, 2)), np.ones(4))
    with pytest.raises(UsageError):
        readout.accumulate(np.ones((1, 2)), np.ones(1))


def test_affine_target_recovered():
    rng = np.random.default_rng(1)
    X = rng.integers(-4, 5, size=(50, 3)).astype(float)
    w, c = np.array([0.5, -0.25, 2.0]), 0.125
    sol = readout.fit(X, X @ w + c)
    np.testing.assert_allclose(sol.W, w, atol=1e-9)
    assert sol.C == pytest.approx(c, abs=1e-9)
    assert sol.s_min < 1e-18


def test_uncorrelated_states_give_mean_predictor():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    y = np.array([1.0, 1.0, 3.0, 3.0])
    sol = readout.solve(readout.accumulate(X, y))
    assert sol.W[0] == 0.0 and sol.C == 2.0 and sol.nmse_train == 1.0


def test_zero_target_variance_is_degenerate():
    with pytest.raises(DegenerateTargetError):
        readout.fit(np.random.default_rng(0).random((10, 2)), np.ones(10))
    with pytest.raises(DegenerateTargetError):
        readout.nmse(np.zeros(3), np.ones(3))


def test_pseudoinverse_matches_reduced_system():
    rng = np.random.default_rng(2)
    base = rng.random((80, 3))
    X = np.column_stack([base, base[:, 1]])  # duplicated node
    y = np.sin(3 * base[:, 0]) + base[:, 1] ** 2
    full, reduced = readout.fit(X, y), readout.fit(base, y)
    assert full.used_pseudoinverse and not reduced.used_pseudoinverse
    np.testing.assert_allclose(X @ full.W + full.C, base @ reduced.W + reduced.C, atol=1e-10)
    assert full.s_min == pytest.approx(reduced.s_min, rel=1e-8)
    # minimum-norm split between the duplicated columns
    assert full.W[1] == pytest.approx(full.W[3], rel=1e-8)


def test_predict_and_nmse_edges():
    y = np.array([1.0, 2.0, 4.0, 5.0])
    assert readout.nmse(np.full(4, y.mean()), y) == pytest.approx(1.0)
    assert readout.nmse(y, y) == 0.0
    assert readout.nmse(-y + 2 * y.mean() + 3.0, y) > 1.0  # no clamp on held-out data
    sol = readout.fit(np.arange(6.0)[:, None], np.arange(6.0) * 2)
    with pytest.raises(UsageError):
        sol.predict(np.ones((3, 2)))


def test_solution_is_optimal_under_perturbation():
    rng = np.random.default_rng(3)
    X, y = rng.random((100, 4)), rng.standard_normal(100)
    sol = readout.fit(X, y)
    base = np.mean((X @ sol.W + sol.C - y) ** 2)
    for _ in range(10):
        d = rng.standard_normal(5)
        d *= 1e-3 / np.linalg.norm(d)
        assert np.mean((X @ (sol.W + d[:4]) + sol.C + d[4] - y) ** 2) >= base


@settings(max_examples=100, deadline=None)
@given(
    X=arrays(np.float64, st.tuples(st.integers(3, 40), st.integers(1, 5)), elements=st.floats(-10, 10)),
    seed=st.integers(0, 2**32 - 1),
)
def test_train_nmse_bounds_and_cost_identity(X, seed):
    y = np.random.default_rng(seed).standard_normal(X.shape[0])
    sol = readout.fit(X, y)
    assert -1e-12 <= sol.nmse_train <= 1 + 1e-9
    direct = np.mean((X @ sol.W + sol.C - y) ** 2)
    assert 2 * sol.s_min == pytest.approx(direct, rel=1e-12, abs=1e-300)
    moment = readout.solve(readout.accumulate(X, y))
    assert moment.s_min == pytest.approx(sol.s_min, rel=1e-7, abs=1e-12 * np.var(y))
