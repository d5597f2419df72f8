"""Differential-network baseline.

Solves

    min ||Delta||_1  s.t.  ||Sp Delta Sq + Sp - Sq||_inf <= eps

over symmetric ``Delta`` with ADMM, then thresholds ``|Delta_uv|`` to read
off changed edges. ``Delta`` is parameterized by its lower triangle (pair
order of :mod:`kliepchange.model`); off-diagonal entries count twice in the
entrywise l1 norm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import check_samples, n_pairs, pair_arrays, pair_index

__all__ = [
    "DiffNetProblem",
    "DiffNetSolution",
    "AdmmConfig",
    "sample_covariance",
    "constraint_operator",
    "solve_diffnet",
    "threshold",
    "threshold_sweep",
    "FEASIBILITY_SLACK",
]

log = logging.getLogger(__name__)

FEASIBILITY_SLACK = 1e-6


def sample_covariance(data) -> np.ndarray:
    """Zero-mean sample covariance ``X^T X / n``."""
    x = check_samples(data)
    s = x.T @ x / x.shape[0]
    return 0.5 * (s + s.T)


@dataclass(frozen=True)
class DiffNetProblem:
    sigma_p: np.ndarray
    sigma_q: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("sigma_p", "sigma_q"):
            s = np.asarray(getattr(self, name), dtype=float)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError(f"{name} must be square")
            if not np.allclose(s, s.T, atol=1e-10):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(s).min() < -1e-10:
                raise ValueError(f"{name} is not positive semidefinite")
        if self.sigma_p.shape != self.sigma_q.shape:
            raise ValueError("covariance shapes differ")

    @classmethod
    def from_samples(cls, xp, xq, epsilon):
        return cls(sample_covariance(xp), sample_covariance(xq), epsilon)

    @property
    def m(self) -> int:
        return self.sigma_p.shape[0]


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    max_iters: int = 5000
    tol: float = 1e-6
    relax: float = 1.6
    adapt_every: int = 50
    adapt_until: int = 2000


@dataclass
class DiffNetSolution:
    delta: np.ndarray
    objective: float
    feasibility_gap: float
    converged: bool
    iterations: int
    epsilon: float
    supports: dict = field(default_factory=dict)

    def support_at(self, tau: float) -> frozenset:
        if tau not in self.supports:
            self.supports[tau] = threshold(self.delta, tau)
        return self.supports[tau]


def constraint_operator(sigma_p, sigma_q):
    """Matrix ``A`` and offset ``c`` with ``A @ s - c = vec(Sp Delta Sq + Sp - Sq)``.

    ``s`` holds the lower triangle of the symmetric ``Delta``; ``vec`` is
    column-major.
    """
    m = sigma_p.shape[0]
    us, vs = pair_arrays(m)
    dup = np.zeros((m * m, n_pairs(m)))
    k = np.arange(n_pairs(m))
    dup[us + vs * m, k] = 1.0
    dup[vs + us * m, k] = 1.0
    a = np.kron(sigma_q.T, sigma_p) @ dup
    c = (sigma_q - sigma_p).ravel(order="F")
    return a, c


def _l1_weights(m):
    us, vs = pair_arrays(m)
    return np.where(us == vs, 1.0, 2.0)


def _unpack(s, m):
    us, vs = pair_arrays(m)
    delta = np.zeros((m, m))
    delta[us, vs] = s
    delta[vs, us] = s
    return delta


def solve_diffnet(problem: DiffNetProblem, config: AdmmConfig | None = None) -> DiffNetSolution:
    """ADMM with splitting ``s = z`` (l1 prox) and ``A s - c = r`` (box projection).

    Rows of the constraint are rescaled so ``A`` has unit spectral norm; the
    ``s``-update then solves with the fixed matrix ``I + A^T A``. ``rho`` is
    adapted by residual balancing. Non-convergence is flagged on the result.
    """
    config = config or AdmmConfig()
    m = problem.m
    eps = float(problem.epsilon)
    a, c = constraint_operator(problem.sigma_p, problem.sigma_q)
    w = _l1_weights(m)

    if np.abs(c).max() <= eps:
        delta = np.zeros((m, m))
        return DiffNetSolution(delta, 0.0, 0.0, True, 0, eps)

    scale = np.linalg.norm(a, 2)
    scale = 1.0 / scale if scale > 0 else 1.0
    a_s, c_s, eps_s = a * scale, c * scale, eps * scale
    factor = cho_factor(np.eye(a.shape[1]) + a_s.T @ a_s)

    k = a.shape[1]
    s = np.zeros(k)
    z = np.zeros(k)
    r = np.clip(-c_s, -eps_s, eps_s)
    u1 = np.zeros(k)
    u2 = np.zeros(a.shape[0])
    rho = config.rho

    def gap_of(vec):
        return max(0.0, float(np.abs(a @ vec - c).max()) - eps)

    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        s = cho_solve(factor, (z - u1) + a_s.T @ (c_s + r - u2))
        as_ = a_s @ s
        z_old, r_old = z, r
        # over-relaxed copies of the two split constraints
        s_h = config.relax * s + (1.0 - config.relax) * z_old
        t_h = config.relax * (as_ - c_s) + (1.0 - config.relax) * r_old
        v = s_h + u1
        z = np.sign(v) * np.maximum(np.abs(v) - w / rho, 0.0)
        r = np.clip(t_h + u2, -eps_s, eps_s)
        u1 += s_h - z
        u2 += t_h - r
        primal = max(np.abs(s - z).max(), np.abs(as_ - c_s - r).max())
        dual = rho * np.abs((z - z_old) + a_s.T @ (r - r_old)).max()
        if primal <= config.tol and dual <= config.tol and gap_of(z) <= FEASIBILITY_SLACK:
            converged = True
            break
        if config.adapt_every and it % config.adapt_every == 0 and it <= config.adapt_until:
            # residual balancing on relative residuals; frozen later so ADMM converges
            p_rel = primal / max(np.abs(s).max(), np.abs(z).max(), np.abs(as_ - c_s).max(), 1e-12)
            d_rel = dual / max(rho * max(np.abs(u1).max(), np.abs(u2).max()), 1e-12)
            if p_rel > 10 * d_rel:
                rho *= 2.0
                u1 /= 2.0
                u2 /= 2.0
            elif d_rel > 10 * p_rel:
                rho /= 2.0
                u1 *= 2.0
                u2 *= 2.0
    gap = gap_of(z)
    if not converged:
        log.debug("ADMM stopped after %d iterations, feasibility gap %.3g", it, gap)
    delta = _unpack(z, m)
    return DiffNetSolution(delta, float(np.abs(delta).sum()), gap, converged, it, eps)


def threshold(delta, tau: float) -> frozenset:
    """Flat pair indices ``(u, v), u > v`` with ``|delta[u, v]| >= tau`` and nonzero."""
    delta = np.asarray(delta, dtype=float)
    m = delta.shape[0]
    out = set()
    for v in range(m):
        for u in range(v + 1, m):
            val = abs(delta[u, v])
            if val != 0 and val >= tau:
                out.add(pair_index(u, v, m))
    return frozenset(out)


def threshold_sweep(delta) -> list:
    """Supports for every distinct threshold level, from empty to all nonzero edges."""
    delta = np.asarray(delta, dtype=float)
    m = delta.shape[0]
    lower = np.abs(delta[np.tril_indices(m, -1)])
    levels = np.unique(lower[lower > 0])[::-1]
    sups = [frozenset()]
    sups.extend(threshold(delta, tau) for tau in levels)
    return sups
