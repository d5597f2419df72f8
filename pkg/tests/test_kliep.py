import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kliepchange import kliep, model
from kliepchange.kliep import KliepProblem

from oracles import fd_gradient, fd_jacobian, kliep_loss, laplacian_hessian


def _problem(seed, m=3, b=1, n_p=15, n_q=12):
    rng = np.random.default_rng(seed)
    k = model.n_pairs(m) * b
    return KliepProblem(rng.normal(size=(n_p, k)), rng.normal(size=(n_q, k)), m, b), rng


def test_loss_zero_at_origin():
    prob, _ = _problem(0)
    assert kliep.loss(prob, np.zeros(prob.shape)) == 0.0


def test_loss_zero_for_identical_single_samples():
    x = np.array([[0.3, -1.2, 2.0]])
    prob = KliepProblem.from_samples(x, x, model.quadratic())
    rng = np.random.default_rng(3)
    for _ in range(5):
        assert kliep.loss(prob, rng.normal(size=prob.shape)) == pytest.approx(0.0, abs=1e-12)


def test_loss_matches_direct_formula():
    fp = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    fq = np.array([[0.0, 0.0, 0.0]])
    prob = KliepProblem(fp, fq, 2, 1)
    for t in (-1.5, 0.25, 2.0):
        theta = np.array([[0.0], [t], [0.0]])
        assert kliep.loss(prob, theta) == pytest.approx(-t * 1.0 + 0.0)


def test_gradient_at_zero_is_mean_gap():
    prob, _ = _problem(1, b=3)
    g = kliep.gradient(prob, np.zeros(prob.shape))
    expected = (prob.q_features.mean(axis=0) - prob.p_features.mean(axis=0)).reshape(prob.shape)
    np.testing.assert_allclose(g, expected, rtol=0, atol=1e-14)


def test_identical_samples_zero_gradient():
    x = np.random.default_rng(2).normal(size=(10, 3))
    prob = KliepProblem.from_samples(x, x, model.quadratic())
    assert np.abs(kliep.gradient(prob, np.zeros(prob.shape))).max() < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5), st.sampled_from([1, 3]))
def test_gradient_matches_finite_differences(seed, m, b):
    prob, rng = _problem(seed, m=m, b=b)
    theta = 0.3 * rng.normal(size=prob.shape).ravel()
    fd = fd_gradient(lambda t: kliep_loss(prob.p_features, prob.q_features, t), theta)
    g = kliep.gradient(prob, theta).ravel()
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4), st.sampled_from([1, 3]))
def test_hessian_matches_two_oracles(seed, m, b):
    prob, rng = _problem(seed, m=m, b=b, n_q=15)
    theta = 0.3 * rng.normal(size=prob.shape).ravel()
    h = kliep.hessian(prob, theta)
    lap = laplacian_hessian(prob.q_features, theta)
    np.testing.assert_allclose(h, lap, rtol=0, atol=1e-9)
    fd = fd_jacobian(lambda t: kliep.gradient(prob, t).ravel(), theta)
    assert np.linalg.norm(h - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_hessian_examples():
    prob, _ = _problem(5)
    h0 = kliep.hessian(prob, np.zeros(prob.shape))
    np.testing.assert_allclose(h0, np.cov(prob.q_features.T, bias=True), atol=1e-12)
    single = KliepProblem(prob.p_features, prob.q_features[:1], prob.m, prob.b)
    assert not np.any(kliep.hessian(single, np.ones(prob.shape)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_hessian_symmetric_psd(seed):
    prob, rng = _problem(seed, m=4, b=1, n_q=30)
    h = kliep.hessian(prob, rng.normal(size=prob.shape))
    assert np.abs(h - h.T).max() <= 1e-10
    assert np.linalg.eigvalsh(h).min() >= -1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0))
def test_loss_convexity_probe(seed, t):
    prob, rng = _problem(seed)
    a, b = rng.normal(size=prob.shape), rng.normal(size=prob.shape)
    lhs = kliep.loss(prob, t * a + (1 - t) * b)
    assert lhs <= t * kliep.loss(prob, a) + (1 - t) * kliep.loss(prob, b) + 1e-9


def test_hessian_size_guard(monkeypatch):
    prob, _ = _problem(0)
    monkeypatch.setattr(kliep, "MAX_HESSIAN_COLUMNS", 3)
    with pytest.raises(ValueError, match="columns"):
        kliep.hessian(prob, np.zeros(prob.shape))


def test_submatrix_examples():
    prob, rng = _problem(7, m=3, b=1)
    h = kliep.hessian(prob, rng.normal(size=prob.shape))
    everything = range(model.n_pairs(3))
    np.testing.assert_array_equal(kliep.submatrix(h, everything, everything, 3), h)
    assert kliep.submatrix(h, [4], [4], 3)[0, 0] == h[4, 4]
    sub = kliep.submatrix(h, [(2, 1), (1, 0)], [(2, 1), (1, 0)], 3)
    np.testing.assert_array_equal(sub, [[h[4, 4], h[4, 1]], [h[1, 4], h[1, 1]]])
    with pytest.raises(IndexError):
        kliep.submatrix(h, [6], [0], 3)


def test_submatrix_blocks_b3():
    prob, rng = _problem(8, m=2, b=3)
    h = kliep.hessian(prob, rng.normal(size=prob.shape))
    sub = kliep.submatrix(h, [2], [0], 2, 3)
    np.testing.assert_array_equal(sub, h[6:9, 0:3])


def test_problem_validation():
    with pytest.raises(ValueError):
        KliepProblem(np.ones((2, 3)), np.ones((2, 4)), 2, 1)
    with pytest.raises(ValueError):
        KliepProblem.from_samples(np.ones((2, 3)), np.ones((2, 2)), model.quadratic())
