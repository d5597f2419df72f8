"""Support-recovery scoring, ROC/AUC, assumption checks and bootstrap stability."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .kliep import KliepProblem, hessian, submatrix
from .model import FeatureMap, empirical_ratio, n_pairs, pair_arrays
from .optim import PathConfig, SolverConfig, solve_path

__all__ = [
    "RecoveryResult",
    "RocResult",
    "AssumptionReport",
    "BootstrapSummary",
    "all_pairs",
    "off_diagonal_pairs",
    "compare_support",
    "roc_curve",
    "auc",
    "assumption_report",
    "bootstrap",
]

log = logging.getLogger(__name__)


def all_pairs(m: int) -> frozenset:
    return frozenset(range(n_pairs(m)))


def off_diagonal_pairs(m: int) -> frozenset:
    us, vs = pair_arrays(m)
    return frozenset(int(k) for k in np.flatnonzero(us != vs))


@dataclass(frozen=True)
class RecoveryResult:
    exact: bool
    tpr: float
    tnr: float


def compare_support(estimated: Iterable, truth: Iterable, universe: Iterable) -> RecoveryResult:
    """TPR/TNR of an estimated edge set; an empty truth has TPR 1 by convention."""
    est, tru, uni = frozenset(estimated), frozenset(truth), frozenset(universe)
    if not (est <= uni and tru <= uni):
        raise ValueError("estimated and true supports must lie in the universe")
    neg = uni - tru
    tpr = len(est & tru) / len(tru) if tru else 1.0
    tnr = len(neg - est) / len(neg) if neg else 1.0
    return RecoveryResult(est == tru, tpr, tnr)


@dataclass
class RocResult:
    points: list  # (tpr, tnr) pairs, sorted by tnr
    auc: Optional[float]
    reason: str = ""


def _upper_hull(pts):
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def auc(points) -> float:
    """Area under the ROC of ``(tpr, tnr)`` operating points.

    The horizontal axis is ``1 - tnr``. Points are deduplicated, anchored at
    (0, 0) and (1, 1), and integrated by trapezoids along their upper concave
    envelope, so dominated operating points never change the area.
    """
    pts = {(0.0, 0.0), (1.0, 1.0)}
    pts.update((1.0 - float(tnr), float(tpr)) for tpr, tnr in points)
    ordered = sorted(pts, key=lambda p: (p[0], -p[1]))
    hull = _upper_hull(ordered)
    area = 0.0
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        area += (x2 - x1) * (y1 + y2) / 2.0
    return area


def roc_curve(supports, truth, universe) -> RocResult:
    """ROC over a sequence of operating points.

    ``supports`` holds either edge sets (e.g. the supports along a lambda
    path or a threshold sweep) or ready ``(tpr, tnr)`` pairs.
    """
    truth = frozenset(truth)
    universe = frozenset(universe)
    pts = []
    for s in supports:
        if isinstance(s, tuple) and len(s) == 2 and all(isinstance(v, float) for v in s):
            pts.append(s)
        else:
            r = compare_support(frozenset(s) & universe, truth & universe, universe)
            pts.append((r.tpr, r.tnr))
    pts = sorted(set(pts), key=lambda p: (p[1], p[0]))
    if not (truth & universe) or not (universe - truth):
        return RocResult(pts, None, "degenerate truth: empty or full support")
    if len(pts) < 2:
        return RocResult(pts, None, "fewer than two operating points")
    return RocResult(pts, auc(pts))


@dataclass
class AssumptionReport:
    lambda_min_SS: Optional[float]
    incoherence: float
    ratio_range_star: tuple
    ratio_range_hat: Optional[tuple] = None
    singular: bool = False

    def to_dict(self) -> dict:
        return {"lambda_min_SS": self.lambda_min_SS, "incoherence": self.incoherence,
                "ratio_range_star": list(self.ratio_range_star),
                "ratio_range_hat": None if self.ratio_range_hat is None else list(self.ratio_range_hat),
                "singular": self.singular}


def assumption_report(problem: KliepProblem, theta_star, S, theta_hat=None) -> AssumptionReport:
    """Evaluate the dependency and incoherence quantities at ``theta_star``.

    ``incoherence`` is ``max_{t in S^c} sum_ij |(I_tS I_SS^-1)_ij|`` (entrywise
    sum over the block row), zero when ``S^c`` is empty. ``lambda_min_SS`` is
    None when ``S`` is empty. A singular ``I_SS`` sets ``singular`` and the
    pseudo-inverse is used.
    """
    m, b = problem.m, problem.b
    info = hessian(problem, theta_star)
    S = sorted(S)
    Sc = sorted(set(range(n_pairs(m))) - set(S))
    r_star = empirical_ratio(theta_star, problem.q_features, problem.q_features)
    r_hat = None
    if theta_hat is not None:
        rh = empirical_ratio(theta_hat, problem.q_features, problem.q_features)
        r_hat = (float(rh.min()), float(rh.max()))
    if not S:
        return AssumptionReport(None, 0.0, (float(r_star.min()), float(r_star.max())), r_hat)
    iss = submatrix(info, S, S, m, b)
    eig = np.linalg.eigvalsh(iss)
    lam_min = float(eig[0])
    singular = lam_min <= 1e-12 * max(1.0, float(eig[-1]))
    inv = np.linalg.pinv(iss, hermitian=True) if singular else np.linalg.inv(iss)
    incoh = 0.0
    for t in Sc:
        row = submatrix(info, [t], S, m, b) @ inv
        incoh = max(incoh, float(np.abs(row).sum()))
    return AssumptionReport(lam_min, incoh, (float(r_star.min()), float(r_star.max())), r_hat, singular)


@dataclass
class BootstrapSummary:
    trials: int
    counts: dict = field(default_factory=dict)  # flat pair index -> count
    failures: int = 0

    def stable_edges(self, k: int) -> frozenset:
        """Pairs that appear in at least ``k`` successful trials."""
        return frozenset(e for e, c in self.counts.items() if c >= k)


def _bootstrap_trial(xp, xq, fmap, path, config, seed, standardize=False):
    rng = np.random.default_rng(seed)
    ip = rng.integers(0, len(xp), size=len(xp))
    iq = rng.integers(0, len(xq), size=len(xq))
    problem = KliepProblem.from_samples(xp[ip], xq[iq], fmap, standardize=standardize)
    reports = solve_path(problem, path, config)
    final = reports[-1]
    return final.support, final.converged


def bootstrap(xp, xq, trials: int, fmap: FeatureMap, path: PathConfig, config: SolverConfig | None,
              rng: np.random.Generator, n_jobs: int = 1, standardize: bool = False) -> BootstrapSummary:
    """Resample both datasets with replacement and count final-support edges.

    Each trial runs the lambda path with ``path.target_support`` as the stop
    rule; trials whose final solve did not converge are counted as failures
    and excluded. Per-trial seeds derive from one draw of ``rng``, so the
    result does not depend on ``n_jobs``. ``standardize`` is passed to
    :meth:`KliepProblem.from_samples` for every resample.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    xp = np.asarray(xp, dtype=float)
    xq = np.asarray(xq, dtype=float)
    base = int(rng.integers(2 ** 63 - 1))
    seeds = [np.random.SeedSequence([base, i]) for i in range(trials)]
    if n_jobs == 1:
        results = [_bootstrap_trial(xp, xq, fmap, path, config, s, standardize) for s in seeds]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_bootstrap_trial)(xp, xq, fmap, path, config, s, standardize)
                                          for s in seeds)
    summary = BootstrapSummary(trials)
    for sup, ok in results:
        if not ok:
            summary.failures += 1
            continue
        for e in sup:
            summary.counts[e] = summary.counts.get(e, 0) + 1
    return summary
