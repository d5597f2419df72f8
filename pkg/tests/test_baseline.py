import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kliepchange import baseline, model
from kliepchange.baseline import AdmmConfig, DiffNetProblem

from oracles import diffnet_lp

TIGHT = AdmmConfig(max_iters=50000)


def test_sample_covariance_examples():
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(baseline.sample_covariance(x), np.outer(x[0], x[0]))
    np.testing.assert_array_equal(baseline.sample_covariance(np.eye(2)), 0.5 * np.eye(2))
    rng = np.random.default_rng(0)
    y = rng.normal(size=(20, 3))
    np.testing.assert_allclose(baseline.sample_covariance(y[rng.permutation(20)]),
                               baseline.sample_covariance(y), atol=1e-14)


def test_problem_validation():
    with pytest.raises(ValueError):
        DiffNetProblem(np.eye(2), np.eye(2), 0.0)
    with pytest.raises(ValueError):
        DiffNetProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), 0.1)
    with pytest.raises(ValueError):
        DiffNetProblem(np.diag([1.0, -1.0]), np.eye(2), 0.1)


def test_constraint_operator_matches_matrix_product():
    rng = np.random.default_rng(1)
    a_, b_ = rng.normal(size=(2, 3, 3))
    sp, sq = a_ @ a_.T, b_ @ b_.T
    a, c = baseline.constraint_operator(sp, sq)
    s = rng.normal(size=6)
    us, vs = model.pair_arrays(3)
    delta = np.zeros((3, 3))
    delta[us, vs] = s
    delta[vs, us] = s
    np.testing.assert_allclose(a @ s - c, (sp @ delta @ sq + sp - sq).ravel(order="F"), atol=1e-12)


def test_equal_covariances_give_zero():
    s = np.array([[1.0, 0.3], [0.3, 2.0]])
    sol = baseline.solve_diffnet(DiffNetProblem(s, s, 0.01))
    assert sol.converged and sol.objective == 0.0 and not sol.delta.any()


def test_large_epsilon_gives_zero():
    sp = np.array([[1.0, 0.3], [0.3, 2.0]])
    sq = np.array([[1.5, -0.2], [-0.2, 1.0]])
    sol = baseline.solve_diffnet(DiffNetProblem(sp, sq, np.abs(sp - sq).max()))
    assert not sol.delta.any() and sol.feasibility_gap == 0.0


def _fixture(seed, m):
    rng = np.random.default_rng(seed)
    xp = rng.normal(size=(40, m))
    xq = rng.normal(size=(40, m)) * rng.uniform(0.6, 1.4, size=m)
    return baseline.sample_covariance(xp), baseline.sample_covariance(xq)


@pytest.mark.parametrize("seed,m,frac", [(0, 2, 0.1), (1, 2, 0.3), (2, 3, 0.1), (3, 3, 0.5), (4, 3, 0.05)])
def test_matches_lp_oracle(seed, m, frac):
    sp, sq = _fixture(seed, m)
    eps = frac * np.abs(sp - sq).max()
    sol = baseline.solve_diffnet(DiffNetProblem(sp, sq, eps), TIGHT)
    ref = diffnet_lp(sp, sq, eps)
    assert sol.feasibility_gap <= baseline.FEASIBILITY_SLACK
    assert abs(sol.objective - ref) <= 1e-3 * max(ref, 1e-12)


def test_hand_built_m2_epsilon_001():
    sp = np.array([[1.0, 0.2], [0.2, 1.0]])
    sq = np.array([[1.2, -0.1], [-0.1, 0.9]])
    sol = baseline.solve_diffnet(DiffNetProblem(sp, sq, 0.01), TIGHT)
    ref = diffnet_lp(sp, sq, 0.01)
    assert abs(sol.objective - ref) <= 1e-3 * ref
    resid = np.abs(sp @ sol.delta @ sq + sp - sq).max()
    assert resid <= 0.01 + baseline.FEASIBILITY_SLACK


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.9))
def test_solution_symmetric_and_feasible(seed, frac):
    sp, sq = _fixture(seed, 3)
    sol = baseline.solve_diffnet(DiffNetProblem(sp, sq, frac * np.abs(sp - sq).max()), TIGHT)
    assert np.abs(sol.delta - sol.delta.T).max() <= 1e-8
    if sol.converged:
        assert sol.feasibility_gap <= baseline.FEASIBILITY_SLACK


def test_non_convergence_is_flagged():
    sp, sq = _fixture(5, 3)
    sol = baseline.solve_diffnet(DiffNetProblem(sp, sq, 0.01 * np.abs(sp - sq).max()), AdmmConfig(max_iters=3))
    assert not sol.converged and sol.iterations == 3
    assert sol.feasibility_gap >= 0.0


def test_threshold_examples():
    delta = np.zeros((3, 3))
    delta[1, 0] = delta[0, 1] = 0.5
    delta[2, 1] = delta[1, 2] = -0.2
    delta[2, 2] = 9.0
    assert baseline.threshold(delta, 0.3) == {model.pair_index(1, 0, 3)}
    assert baseline.threshold(delta, 0.0) == {model.pair_index(1, 0, 3), model.pair_index(2, 1, 3)}
    assert baseline.threshold(delta, 0.51) == frozenset()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0, 2), st.floats(0, 2))
def test_threshold_monotone(seed, t1, t2):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4))
    delta = a + a.T
    lo, hi = sorted((t1, t2))
    assert baseline.threshold(delta, hi) <= baseline.threshold(delta, lo)


def test_threshold_sweep_is_nested():
    a = np.random.default_rng(3).normal(size=(5, 5))
    sups = baseline.threshold_sweep(a + a.T)
    assert sups[0] == frozenset() and len(sups[-1]) == 10
    assert all(x <= y for x, y in zip(sups, sups[1:]))
