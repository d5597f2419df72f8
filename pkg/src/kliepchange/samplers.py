"""Synthetic pairwise Markov networks and samplers.

Two families are provided:

* Gaussian networks with density ``exp(-theta0 * sum x_u^2 - sum_E theta1 * x_u x_v)``,
  i.e. precision ``2*theta0`` on the diagonal and ``theta1`` on edges. A change
  flips the sign of ``theta1`` on ``d`` edges.
* An "8-shaped" non-Gaussian family with density
  ``exp(-theta0 * sum x_u^2 - theta1 * sum_E h(x_u, x_v))`` truncated to a ball,
  where ``h(a, b) = a^2 b^2 / (1 + a^2 b^2)``. The coupling pushes mass onto the
  coordinate axes, giving figure-8 shaped bivariate contours. This potential is
  a stand-in chosen for this package, not a published formula. A change
  removes the coupling on ``d`` edges.

Samplers take a ``numpy.random.Generator`` and are deterministic given it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .model import FeatureMap, custom, n_pairs, pair_index, quadratic

__all__ = [
    "GraphSpec",
    "GaussianMnSpec",
    "EightShapedSpec",
    "ChangeInstance",
    "build_lattice",
    "build_random",
    "make_gaussian_change",
    "make_eight_change",
    "sample_gaussian",
    "sample_truncated_gaussian",
    "sample_slice",
    "eight_coupling",
    "eight_feature_map",
    "PD_RETRIES",
]

PD_RETRIES = 100


@dataclass(frozen=True)
class GraphSpec:
    m: int
    edges: tuple  # sorted (u, v) pairs with u > v, 0-based
    topology: str = "custom"
    connectivity: Optional[float] = None

    def __post_init__(self):
        for u, v in self.edges:
            if not (0 <= v < u < self.m):
                raise ValueError(f"edge ({u}, {v}) invalid for m={self.m}")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges")

    @classmethod
    def from_edges(cls, m, edges, topology="custom", connectivity=None):
        norm = sorted({(max(u, v), min(u, v)) for u, v in edges if u != v})
        return cls(m, tuple(norm), topology, connectivity)

    def edge_pairs(self) -> frozenset:
        """Flat pair indices of the edges."""
        return frozenset(pair_index(u, v, self.m) for u, v in self.edges)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def to_dict(self) -> dict:
        return {"m": self.m, "topology": self.topology, "connectivity": self.connectivity,
                "edges": [list(e) for e in self.edges]}


def build_lattice(g: int) -> GraphSpec:
    """4-neighbour ``g x g`` grid, node ``r * g + c``."""
    if g < 2:
        raise ValueError("lattice side must be >= 2")
    edges = []
    for r in range(g):
        for c in range(g):
            k = r * g + c
            if c + 1 < g:
                edges.append((k + 1, k))
            if r + 1 < g:
                edges.append((k + g, k))
    return GraphSpec.from_edges(g * g, edges, topology="lattice4")


def build_random(m: int, connectivity: float, rng: np.random.Generator) -> GraphSpec:
    """Erdos-Renyi graph: every pair ``u > v`` is an edge with probability ``connectivity``."""
    if not 0 < connectivity < 1:
        raise ValueError("connectivity must lie in (0, 1)")
    edges = []
    for v in range(m):
        for u in range(v + 1, m):
            if rng.random() < connectivity:
                edges.append((u, v))
    return GraphSpec.from_edges(m, edges, topology="random", connectivity=connectivity)


@dataclass(frozen=True)
class GaussianMnSpec:
    graph: GraphSpec
    theta0: float = 2.0
    theta1: float = -0.4
    flipped: frozenset = frozenset()

    def __post_init__(self):
        if not self.flipped <= set(self.graph.edges):
            raise ValueError("flipped edges must be graph edges")
        try:
            cho_factor(self.precision(), lower=True)
        except np.linalg.LinAlgError:
            raise ValueError("implied precision matrix is not positive definite") from None

    def edge_potential(self, edge) -> float:
        return -self.theta1 if edge in self.flipped else self.theta1

    def precision(self) -> np.ndarray:
        m = self.graph.m
        theta = np.eye(m) * (2.0 * self.theta0)
        for e in self.graph.edges:
            u, v = e
            theta[u, v] = theta[v, u] = self.edge_potential(e)
        return theta

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision())

    def to_dict(self) -> dict:
        return {"family": "gaussian", "theta0": self.theta0, "theta1": self.theta1,
                "flipped": sorted(list(e) for e in self.flipped)}


def eight_coupling(a, b):
    s = (a * b) ** 2
    return s / (1.0 + s)


def eight_feature_map() -> FeatureMap:
    """Feature map matching the 8-shaped coupling, so its changes are linear in theta."""
    return custom(eight_coupling, 1, kind="eight")


@dataclass(frozen=True)
class EightShapedSpec:
    graph: GraphSpec
    theta0: float = 1.0
    theta1: float = 5.0
    radius: float = 15.0
    removed: frozenset = frozenset()

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.removed <= set(self.graph.edges):
            raise ValueError("removed edges must be graph edges")
        # the pairwise term is <= 0 for theta1 >= 0, so the independent
        # Gaussian part bounds the mass lost to truncation
        acc = _pilot_ball_acceptance(self.graph.m, 1.0 / (2.0 * self.theta0), self.radius)
        if acc <= 1e-4:
            raise ValueError(f"truncation ball acceptance {acc:.2e} too small")

    @property
    def active_edges(self) -> tuple:
        return tuple(e for e in self.graph.edges if e not in self.removed)

    def log_density(self, x) -> np.ndarray:
        """Unnormalized log-density of each row (``-inf`` outside the ball)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = -self.theta0 * np.sum(x * x, axis=1)
        for u, v in self.active_edges:
            out -= self.theta1 * eight_coupling(x[:, u], x[:, v])
        out[np.sum(x * x, axis=1) > self.radius ** 2] = -np.inf
        return out

    def to_dict(self) -> dict:
        return {"family": "eight", "theta0": self.theta0, "theta1": self.theta1,
                "radius": self.radius, "removed": sorted(list(e) for e in self.removed),
                "note": "stand-in potential h(a,b) = a^2 b^2 / (1 + a^2 b^2)"}


def _pilot_ball_acceptance(m, var, radius, n=2000) -> float:
    rng = np.random.default_rng(12345)
    x = rng.normal(scale=math.sqrt(var), size=(n, m))
    return float(np.mean(np.sum(x * x, axis=1) <= radius ** 2))


@dataclass(frozen=True)
class ChangeInstance:
    p_spec: object
    q_spec: object
    support: frozenset  # flat pair indices with a nonzero true change
    theta_star: np.ndarray = field(repr=False, compare=False)
    fmap: FeatureMap = field(repr=False, compare=False)

    @property
    def d(self) -> int:
        return len(self.support)

    @property
    def m(self) -> int:
        return self.p_spec.graph.m

    def to_dict(self) -> dict:
        return {"m": self.m, "d": self.d, "graph": self.p_spec.graph.to_dict(),
                "p": self.p_spec.to_dict(), "q": self.q_spec.to_dict(),
                "support": sorted(self.support), "feature_map": self.fmap.describe()}


def _gaussian_theta_star(p: GaussianMnSpec, q: GaussianMnSpec) -> np.ndarray:
    # log p - log q coefficient on x_u x_v is -(theta1_p - theta1_q)
    m = p.graph.m
    theta = np.zeros((n_pairs(m), 1))
    for e in p.graph.edges:
        theta[pair_index(*e, m), 0] = q.edge_potential(e) - p.edge_potential(e)
    return theta


def make_gaussian_change(graph: GraphSpec, d: int, rng: np.random.Generator,
                         theta0: float = 2.0, theta1: float = -0.4) -> ChangeInstance:
    """P with ``theta1`` on every edge; Q flips the sign on ``d`` random edges.

    Raises
    ------
    ValueError
        If ``d`` exceeds the edge count, or no positive-definite Q is found
        within ``PD_RETRIES`` draws of the flipped subset.
    """
    edges = graph.edges
    if not 0 <= d <= len(edges):
        raise ValueError(f"d={d} but graph has {len(edges)} edges")
    p_spec = GaussianMnSpec(graph, theta0, theta1)
    for _ in range(PD_RETRIES):
        pick = rng.choice(len(edges), size=d, replace=False) if d else []
        flipped = frozenset(edges[i] for i in pick)
        try:
            q_spec = GaussianMnSpec(graph, theta0, theta1, flipped)
        except ValueError:
            continue
        sup = frozenset(pair_index(*e, graph.m) for e in flipped)
        return ChangeInstance(p_spec, q_spec, sup, _gaussian_theta_star(p_spec, q_spec), quadratic())
    raise ValueError(f"no positive-definite change found in {PD_RETRIES} attempts")


def make_eight_change(graph: GraphSpec, d: int, rng: np.random.Generator,
                      theta0: float = 1.0, theta1: float = 5.0, radius: float = 15.0) -> ChangeInstance:
    """P couples every edge; Q drops the coupling on ``d`` random edges."""
    edges = graph.edges
    if not 0 <= d <= len(edges):
        raise ValueError(f"d={d} but graph has {len(edges)} edges")
    pick = rng.choice(len(edges), size=d, replace=False) if d else []
    removed = frozenset(edges[i] for i in pick)
    p_spec = EightShapedSpec(graph, theta0, theta1, radius)
    q_spec = EightShapedSpec(graph, theta0, theta1, radius, removed)
    theta = np.zeros((n_pairs(graph.m), 1))
    for e in removed:
        theta[pair_index(*e, graph.m), 0] = -theta1
    sup = frozenset(pair_index(*e, graph.m) for e in removed)
    return ChangeInstance(p_spec, q_spec, sup, theta, eight_feature_map())


def sample_gaussian(spec: GaussianMnSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from ``N(0, precision^-1)`` using the Cholesky factor of the precision."""
    lower, _ = cho_factor(spec.precision(), lower=True)
    z = rng.standard_normal((spec.graph.m, n))
    # precision = L L^T  =>  x = L^-T z has covariance precision^-1
    return solve_triangular(np.tril(lower), z, lower=True, trans="T").T


def sample_truncated_gaussian(spec: GaussianMnSpec, radius: float, n: int, rng: np.random.Generator,
                              max_proposals: int = 10 ** 7) -> np.ndarray:
    """Rejection sampler for the Gaussian restricted to ``||x|| <= radius``.

    The first batch has exactly ``n`` proposals, so with an acceptance of one
    the output equals :func:`sample_gaussian` under the same generator state.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    kept = []
    total = accepted = 0
    batch = n
    while accepted < n:
        if total >= max_proposals:
            raise RuntimeError(f"acceptance starvation: {accepted}/{n} rows after {total} proposals")
        batch = min(batch, max_proposals - total)
        x = sample_gaussian(spec, batch, rng)
        ok = x[np.sum(x * x, axis=1) <= radius * radius]
        kept.append(ok)
        total += batch
        accepted += len(ok)
        rate = accepted / total
        if total >= 10 ** 5 and rate <= 1e-4:
            raise ValueError(f"ball acceptance rate {rate:.2e} is below 1e-4")
        need = n - accepted
        batch = int(min(max(1000, 1.2 * need / max(rate, 1e-4)), 10 ** 6))
    out = np.concatenate(kept)[:n]
    assert np.all(np.sum(out * out, axis=1) <= radius * radius)
    return out


def _neighbor_lists(m, edges):
    nbrs = [[] for _ in range(m)]
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    return [np.array(a, dtype=np.intp) for a in nbrs]


def sample_slice(spec: EightShapedSpec, n: int, rng: np.random.Generator, burn_in: int = 1000,
                 thin: int = 5, n_chains: Optional[int] = None, width: float = 1.0,
                 max_steps: int = 50) -> np.ndarray:
    """Coordinate-wise slice sampling with stepping-out and shrinkage.

    ``n_chains`` independent chains (default ``min(n, 200)``) advance in
    lockstep, vectorized over chains. Each runs ``burn_in`` full sweeps, then
    keeps one state every ``thin`` sweeps; rows are emitted chain-interleaved.

    Raises
    ------
    RuntimeError
        If a shrinking bracket collapses without finding a point on the slice.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = spec.graph.m
    chains = min(n, 200) if n_chains is None else max(1, min(n_chains, n))
    per_chain = -(-n // chains)
    nbrs = _neighbor_lists(m, spec.active_edges)
    r2 = spec.radius ** 2

    x = rng.normal(scale=math.sqrt(1.0 / (2.0 * spec.theta0)), size=(chains, m))
    norms = np.sum(x * x, axis=1)
    x[norms > r2] *= (0.5 * spec.radius / np.sqrt(norms[norms > r2]))[:, None]
    sq = np.sum(x * x, axis=1)

    def cond_logpdf(u, vals, rest_sq, nb):
        out = -spec.theta0 * vals * vals
        if nb.size:
            out -= spec.theta1 * np.sum(eight_coupling(vals[:, None], x[:, nb]), axis=1)
        out[rest_sq + vals * vals > r2] = -np.inf
        return out

    def sweep():
        nonlocal sq
        for u in range(m):
            x0 = x[:, u].copy()
            rest = sq - x0 * x0
            nb = nbrs[u]
            level = cond_logpdf(u, x0, rest, nb) - rng.exponential(size=chains)
            lo = x0 - width * rng.random(chains)
            hi = lo + width
            j = np.floor(max_steps * rng.random(chains))
            k = (max_steps - 1) - j
            active = (j > 0) & (cond_logpdf(u, lo, rest, nb) > level)
            while active.any():
                lo[active] -= width
                j[active] -= 1
                active &= (j > 0) & (cond_logpdf(u, lo, rest, nb) > level)
            active = (k > 0) & (cond_logpdf(u, hi, rest, nb) > level)
            while active.any():
                hi[active] += width
                k[active] -= 1
                active &= (k > 0) & (cond_logpdf(u, hi, rest, nb) > level)
            new = x0.copy()
            todo = np.ones(chains, dtype=bool)
            while todo.any():
                prop = lo + rng.random(chains) * (hi - lo)
                lp = cond_logpdf(u, prop, rest, nb)
                hit = todo & (lp > level)
                new[hit] = prop[hit]
                todo &= ~hit
                left = todo & (prop < x0)
                right = todo & (prop >= x0)
                lo[left] = prop[left]
                hi[right] = prop[right]
                if np.any(todo & (hi - lo < 1e-12 * (1.0 + np.abs(x0)))):
                    raise RuntimeError(f"slice bracket collapsed at coordinate {u}")
            x[:, u] = new
            sq = rest + new * new

    for _ in range(burn_in):
        sweep()
    out = np.empty((per_chain, chains, m))
    for s in range(per_chain):
        for _ in range(thin):
            sweep()
        out[s] = x
    return out.reshape(-1, m)[:n]
