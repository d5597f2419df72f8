import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from kliepchange import model, samplers
from kliepchange.samplers import GaussianMnSpec, GraphSpec


@pytest.mark.parametrize("g,edges", [(2, 4), (3, 12), (5, 40)])
def test_lattice_counts(g, edges):
    graph = samplers.build_lattice(g)
    assert graph.m == g * g
    assert len(graph.edges) == edges == 2 * g * (g - 1)
    deg = graph.degree()
    assert deg[0] == deg[g - 1] == deg[-1] == 2
    if g >= 3:
        assert deg[g + 1] == 4


def test_lattice_rejects_small_side():
    with pytest.raises(ValueError):
        samplers.build_lattice(1)


def test_random_graph_edge_count_and_determinism():
    counts = [len(samplers.build_random(40, 0.05, np.random.default_rng(s)).edges) for s in range(200)]
    # 780 Bernoulli(0.05) pairs: mean 39, sd of the average ~0.43
    assert abs(np.mean(counts) - 39.0) < 3 * math.sqrt(780 * 0.05 * 0.95 / 200)
    a = samplers.build_random(20, 0.2, np.random.default_rng(7))
    b = samplers.build_random(20, 0.2, np.random.default_rng(7))
    assert a == b
    with pytest.raises(ValueError):
        samplers.build_random(5, 0.0, np.random.default_rng(0))


def test_graph_spec_validation():
    with pytest.raises(ValueError):
        GraphSpec(3, ((0, 1),))
    with pytest.raises(ValueError):
        GraphSpec(3, ((1, 0), (1, 0)))
    assert GraphSpec.from_edges(3, [(0, 1), (1, 0), (2, 2)]).edges == ((1, 0),)


def test_gaussian_independent_variance():
    spec = GaussianMnSpec(GraphSpec(3, ()), theta0=2.0)
    n = 40000
    x = samplers.sample_gaussian(spec, n, np.random.default_rng(0))
    var = x.var(axis=0)
    # variance of a sample variance of N(0, s2) is 2 s2^2 / n
    se = math.sqrt(2 * 0.25 ** 2 / n)
    assert np.all(np.abs(var - 0.25) < 3 * se)


def test_gaussian_determinism():
    spec = GaussianMnSpec(samplers.build_lattice(2))
    a = samplers.sample_gaussian(spec, 3, np.random.default_rng(5))
    b = samplers.sample_gaussian(spec, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_negative_potential_gives_positive_correlation():
    spec = GaussianMnSpec(GraphSpec.from_edges(2, [(1, 0)]), theta0=2.0, theta1=-0.4)
    assert spec.covariance()[1, 0] > 0
    x = samplers.sample_gaussian(spec, 20000, np.random.default_rng(1))
    assert np.corrcoef(x.T)[1, 0] > 0


@pytest.mark.parametrize("seed", range(3))
def test_gaussian_covariance_within_5_se(seed):
    rng = np.random.default_rng(seed)
    inst = samplers.make_gaussian_change(samplers.build_lattice(2), 1, rng)
    cov = inst.q_spec.covariance()
    n = 100000
    x = samplers.sample_gaussian(inst.q_spec, n, rng)
    emp = x.T @ x / n
    # Var(x_u x_v) = S_uu S_vv + S_uv^2 for a zero-mean Gaussian
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    assert np.all(np.abs(emp - cov) < 5 * se)


def test_make_gaussian_change_support():
    graph = samplers.build_lattice(3)
    inst = samplers.make_gaussian_change(graph, 3, np.random.default_rng(0))
    assert inst.d == 3
    assert inst.q_spec.flipped <= set(graph.edges)
    assert inst.support == frozenset(model.pair_index(*e, 9) for e in inst.q_spec.flipped)
    # changed potentials are exactly the support
    diff = inst.q_spec.precision() - inst.p_spec.precision()
    changed = {model.pair_index(u, v, 9) for u in range(9) for v in range(u) if diff[u, v] != 0}
    assert changed == inst.support
    np.testing.assert_allclose(inst.theta_star[sorted(inst.support), 0], 0.8)
    assert np.count_nonzero(inst.theta_star) == 3


def test_make_gaussian_change_extremes():
    graph = samplers.build_lattice(2)
    zero = samplers.make_gaussian_change(graph, 0, np.random.default_rng(0))
    assert not zero.support
    np.testing.assert_array_equal(zero.p_spec.precision(), zero.q_spec.precision())
    full = samplers.make_gaussian_change(graph, 4, np.random.default_rng(0))
    assert full.q_spec.flipped == set(graph.edges)
    with pytest.raises(ValueError):
        samplers.make_gaussian_change(graph, 5, np.random.default_rng(0))


def test_make_gaussian_change_regression_fixture():
    inst = samplers.make_gaussian_change(samplers.build_lattice(4), 4, np.random.default_rng(2024))
    assert sorted(inst.q_spec.flipped) == [(3, 2), (5, 4), (10, 9), (15, 14)]
    assert sorted(inst.support) == [32, 59, 109, 134]


def test_non_pd_precision_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        GaussianMnSpec(GraphSpec.from_edges(2, [(1, 0)]), theta0=0.1, theta1=1.0)


def test_truncated_rows_inside_ball():
    spec = GaussianMnSpec(samplers.build_lattice(2), theta0=0.3, theta1=-0.1)
    x = samplers.sample_truncated_gaussian(spec, 2.0, 500, np.random.default_rng(0))
    assert x.shape == (500, 4)
    assert np.all(np.sum(x * x, axis=1) <= 4.0)


def test_truncated_with_huge_radius_matches_untruncated():
    spec = GaussianMnSpec(samplers.build_lattice(2))
    a = samplers.sample_truncated_gaussian(spec, 1e9, 50, np.random.default_rng(3))
    b = samplers.sample_gaussian(spec, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def _bivariate_density(spec):
    prec = spec.precision()
    norm = math.sqrt(np.linalg.det(prec)) / (2 * math.pi)

    def pdf(r, phi):
        x = np.array([r * math.cos(phi), r * math.sin(phi)])
        return norm * math.exp(-0.5 * x @ prec @ x) * r
    return pdf


def test_truncated_small_ball_against_quadrature():
    spec = GaussianMnSpec(GraphSpec.from_edges(2, [(1, 0)]), theta0=2.0, theta1=-0.4)
    radius = 0.1
    pdf = _bivariate_density(spec)
    mass, _ = integrate.dblquad(lambda r, phi: pdf(r, phi), 0, 2 * math.pi, 0, radius)
    second, _ = integrate.dblquad(lambda r, phi: r * r * pdf(r, phi), 0, 2 * math.pi, 0, radius)
    rng = np.random.default_rng(0)
    n = 200000
    x = samplers.sample_gaussian(spec, n, rng)
    rate = np.mean(np.sum(x * x, axis=1) <= radius ** 2)
    assert abs(rate - mass) < 4 * math.sqrt(mass * (1 - mass) / n)
    y = samplers.sample_truncated_gaussian(spec, radius, 4000, rng)
    r2 = np.sum(y * y, axis=1)
    cond = second / mass
    assert abs(r2.mean() - cond) < 4 * r2.std() / math.sqrt(len(r2))


def test_truncation_starvation_is_an_error():
    spec = GaussianMnSpec(GraphSpec(6, ()), theta0=0.5)
    with pytest.raises((ValueError, RuntimeError)):
        samplers.sample_truncated_gaussian(spec, 1e-3, 10, np.random.default_rng(0), max_proposals=10 ** 5)


def test_slice_isotropic_moments():
    spec = samplers.EightShapedSpec(GraphSpec(3, ()), theta0=1.0, theta1=0.0)
    n = 5000
    x = samplers.sample_slice(spec, n, np.random.default_rng(0))
    # density exp(-x^2) has variance 1/2
    assert np.all(np.abs(x.mean(axis=0)) < 3 * math.sqrt(0.5 / n))
    assert np.all(np.abs(x.var(axis=0) - 0.5) < 0.05)


def test_slice_rows_inside_ball_and_deterministic():
    spec = samplers.EightShapedSpec(samplers.build_lattice(2), radius=1.5)
    a = samplers.sample_slice(spec, 300, np.random.default_rng(4), burn_in=50, thin=2)
    b = samplers.sample_slice(spec, 300, np.random.default_rng(4), burn_in=50, thin=2)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.sum(a * a, axis=1) <= 1.5 ** 2)


def test_slice_split_chain_stationarity():
    spec = samplers.EightShapedSpec(samplers.build_lattice(2))
    x = samplers.sample_slice(spec, 4000, np.random.default_rng(1), burn_in=200, thin=1, n_chains=100)
    # rows are chain-interleaved: reshape to (sweep, chain) and compare halves per chain
    lp = spec.log_density(x).reshape(40, 100)
    diff = lp[:20].mean(axis=0) - lp[20:].mean(axis=0)
    assert abs(diff.mean()) < 2 * diff.std(ddof=1) / math.sqrt(len(diff))


def test_eight_coupling_shape():
    # the coupling penalizes mass off the axes, so with theta1 > 0 the product x_u x_v is small
    spec = samplers.EightShapedSpec(GraphSpec.from_edges(2, [(1, 0)]), theta0=0.3, theta1=5.0)
    free = samplers.EightShapedSpec(GraphSpec.from_edges(2, [(1, 0)]), theta0=0.3, theta1=0.0)
    rng = np.random.default_rng(2)
    x = samplers.sample_slice(spec, 2000, rng, burn_in=200)
    y = samplers.sample_slice(free, 2000, rng, burn_in=200)
    assert np.mean((x[:, 0] * x[:, 1]) ** 2) < 0.5 * np.mean((y[:, 0] * y[:, 1]) ** 2)


def test_make_eight_change():
    graph = samplers.build_lattice(3)
    inst = samplers.make_eight_change(graph, 2, np.random.default_rng(0))
    assert inst.d == 2
    assert len(inst.q_spec.active_edges) == 10
    np.testing.assert_allclose(inst.theta_star[sorted(inst.support), 0], -5.0)
    # theta_star reproduces log p - log q through the coupling feature
    x = np.random.default_rng(1).normal(size=(5, 9))
    feats = model.featurize(x, inst.fmap)
    lhs = inst.p_spec.log_density(x) - inst.q_spec.log_density(x)
    np.testing.assert_allclose(feats @ inst.theta_star[:, 0], lhs, atol=1e-12)
    assert "stand-in" in inst.q_spec.to_dict()["note"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 12))
def test_change_support_size_is_d(seed, d):
    graph = samplers.build_lattice(3)
    inst = samplers.make_gaussian_change(graph, d, np.random.default_rng(seed))
    assert inst.d == d
    assert inst.q_spec.flipped <= set(graph.edges)


def test_instance_metadata_is_json_ready():
    import json
    inst = samplers.make_gaussian_change(samplers.build_lattice(2), 1, np.random.default_rng(0))
    doc = json.loads(json.dumps(inst.to_dict()))
    assert doc["d"] == 1 and doc["m"] == 4
