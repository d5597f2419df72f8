"""KLIEP objective for the pairwise density-ratio model.

The loss is

    l(theta) = -mean_p <theta, f(x_p)> + log mean_q exp(<theta, f(x_q)>)

Its Hessian (the sample Fisher information) is the covariance of ``f`` over
the Q sample reweighted by the empirical ratio.

Gaussian networks are handled by the quadratic feature map. A zero-mean
Gaussian ratio ``exp(-x' Delta x / 2)`` corresponds to ``theta[(u,u)] =
-Delta[u,u] / 2`` and ``theta[(u,v)] = -Delta[u,v]`` for ``u > v``; only
``theta`` is ever stored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FeatureMap, featurize, logmeanexp, n_pairs, pair_index, ratio_weights

__all__ = ["KliepProblem", "loss", "gradient", "loss_and_gradient", "hessian", "submatrix",
           "block_indices", "MAX_HESSIAN_COLUMNS"]

MAX_HESSIAN_COLUMNS = 5000


@dataclass(frozen=True, eq=False)
class KliepProblem:
    p_features: np.ndarray
    q_features: np.ndarray
    m: int
    b: int
    fmap: FeatureMap | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self):
        k = n_pairs(self.m) * self.b
        for name in ("p_features", "q_features"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != k or arr.shape[0] < 1:
                raise ValueError(f"{name} has shape {arr.shape}, expected (n >= 1, {k})")
        # cached P feature mean; the only way P data enters the loss
        object.__setattr__(self, "p_mean", self.p_features.mean(axis=0))

    @classmethod
    def from_samples(cls, xp, xq, fmap: FeatureMap, standardize: bool = False) -> "KliepProblem":
        """Featurize raw samples.

        With ``standardize=True`` every feature column is divided by its
        standard deviation over the Q sample (constant columns are left
        alone), so ``theta`` lives in standardized units; the support is
        unaffected by the rescaling itself. ``to_original`` maps back.
        """
        xp = np.atleast_2d(xp)
        xq = np.atleast_2d(xq)
        if xp.shape[1] != xq.shape[1]:
            raise ValueError(f"P has {xp.shape[1]} columns but Q has {xq.shape[1]}")
        fp = featurize(xp, fmap)
        fq = featurize(xq, fmap)
        scale = None
        if standardize:
            scale = fq.std(axis=0)
            scale[scale <= 1e-12 * max(1.0, float(np.abs(fq).max()))] = 1.0
            fp = fp / scale
            fq = fq / scale
        return cls(fp, fq, xp.shape[1], fmap.b, fmap, scale)

    def to_original(self, theta) -> np.ndarray:
        """Parameters in the units of the unscaled features."""
        t = self._flat(theta)
        if self.feature_scale is not None:
            t = t / self.feature_scale
        return t.reshape(self.shape)

    def to_scaled(self, theta) -> np.ndarray:
        """Inverse of :meth:`to_original`."""
        t = self._flat(theta)
        if self.feature_scale is not None:
            t = t * self.feature_scale
        return t.reshape(self.shape)

    @property
    def n_p(self) -> int:
        return self.p_features.shape[0]

    @property
    def n_q(self) -> int:
        return self.q_features.shape[0]

    @property
    def n_groups(self) -> int:
        return n_pairs(self.m)

    @property
    def shape(self) -> tuple[int, int]:
        return (n_pairs(self.m), self.b)

    def _flat(self, theta) -> np.ndarray:
        flat = np.asarray(theta, dtype=float).ravel()
        if flat.size != self.q_features.shape[1]:
            raise ValueError(f"theta has {flat.size} entries, expected {self.q_features.shape[1]}")
        return flat


def loss(problem: KliepProblem, theta) -> float:
    t = problem._flat(theta)
    return float(-problem.p_mean @ t + logmeanexp(problem.q_features @ t))


def loss_and_gradient(problem: KliepProblem, theta) -> tuple[float, np.ndarray]:
    t = problem._flat(theta)
    g = problem.q_features @ t
    w = ratio_weights(g)
    value = float(-problem.p_mean @ t + logmeanexp(g))
    grad = problem.q_features.T @ w / problem.n_q - problem.p_mean
    return value, grad.reshape(problem.shape)


def gradient(problem: KliepProblem, theta) -> np.ndarray:
    """Gradient with the same ``(n_pairs, b)`` layout as ``theta``."""
    return loss_and_gradient(problem, theta)[1]


def hessian(problem: KliepProblem, theta) -> np.ndarray:
    """Sample Fisher information at ``theta``.

    Computed as the ratio-weighted covariance of the Q features rather than
    through the ``n_q x n_q`` log-sum-exp Hessian.

    Raises
    ------
    ValueError
        If the parameter dimension exceeds ``MAX_HESSIAN_COLUMNS``.
    """
    k = problem.q_features.shape[1]
    if k > MAX_HESSIAN_COLUMNS:
        raise ValueError(f"Hessian would have {k} columns (limit {MAX_HESSIAN_COLUMNS})")
    t = problem._flat(theta)
    w = ratio_weights(problem.q_features @ t) / problem.n_q
    fq = problem.q_features
    mu = fq.T @ w
    centered = fq - mu
    h = (centered * w[:, None]).T @ centered
    return 0.5 * (h + h.T)


def block_indices(pairs, m: int, b: int) -> np.ndarray:
    """Column indices of the blocks for ``pairs`` (flat indices or ``(u, v)`` tuples)."""
    flat = []
    for p in pairs:
        k = pair_index(*p, m) if isinstance(p, tuple) else int(p)
        if not 0 <= k < n_pairs(m):
            raise IndexError(f"pair index {k} out of range for m={m}")
        flat.append(k)
    if not flat:
        return np.zeros(0, dtype=np.intp)
    ks = np.asarray(flat, dtype=np.intp)
    return (ks[:, None] * b + np.arange(b)).ravel()


def submatrix(info: np.ndarray, rows, cols, m: int, b: int = 1) -> np.ndarray:
    """Blocks of ``info`` for the requested pairs, in the order given."""
    r = block_indices(rows, m, b)
    c = block_indices(cols, m, b)
    return info[np.ix_(r, c)]
