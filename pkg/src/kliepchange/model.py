"""Pairwise log-linear density-ratio model.

Parameters are stored as a ``(n_pairs, b)`` array ``theta`` with one row per
pair ``(u, v)``, ``u >= v``, in column-major lower-triangular order::

    (0,0), (1,0), ..., (m-1,0), (1,1), (2,1), ..., (m-1,m-1)

Node indices are 0-based. A feature matrix has shape ``(n, n_pairs * b)``
and row ``i`` is the concatenation of ``psi(x_u, x_v)`` over pairs in the
same order, so ``features @ theta.ravel()`` gives the unnormalized log-ratio
of every sample.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "n_pairs",
    "pair_index",
    "pair_from_index",
    "pair_arrays",
    "FeatureMap",
    "quadratic",
    "rbf",
    "custom",
    "featurize",
    "zeros_theta",
    "group_norms",
    "support",
    "log_ratio_unnormalized",
    "logmeanexp",
    "empirical_log_normalizer",
    "empirical_ratio",
    "ratio_weights",
    "check_samples",
    "load_csv",
    "save_csv",
    "DataError",
]


class DataError(ValueError):
    """Malformed or non-finite sample data."""


def n_pairs(m: int) -> int:
    return m * (m + 1) // 2


def pair_index(u: int, v: int, m: int) -> int:
    """Flat position of pair ``(u, v)`` with ``0 <= v <= u < m``."""
    if not (0 <= v <= u < m):
        raise IndexError(f"invalid pair ({u}, {v}) for m={m}")
    return v * m - v * (v - 1) // 2 + (u - v)


def pair_from_index(k: int, m: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`."""
    if not (0 <= k < n_pairs(m)):
        raise IndexError(f"pair index {k} out of range for m={m}")
    v = 0
    col_len = m
    while k >= col_len:
        k -= col_len
        v += 1
        col_len -= 1
    return v + k, v


def pair_arrays(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(us, vs)`` listing every pair in flat order."""
    vs, us = [], []
    for v in range(m):
        for u in range(v, m):
            us.append(u)
            vs.append(v)
    return np.array(us, dtype=np.intp), np.array(vs, dtype=np.intp)


@dataclass(frozen=True)
class FeatureMap:
    """Bivariate basis function shared by every pair.

    ``func`` is called with two equally shaped arrays ``(x_u, x_v)`` and must
    return either an array of the same shape (``b == 1``) or one with an
    extra trailing axis of length ``b``.
    """

    kind: str
    b: int
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False, compare=False)
    bandwidth: Optional[float] = None

    def __call__(self, xu, xv) -> np.ndarray:
        out = np.asarray(self.func(np.asarray(xu, dtype=float), np.asarray(xv, dtype=float)), dtype=float)
        if self.b == 1 and out.shape == np.shape(xu):
            out = out[..., None]
        if out.shape[-1] != self.b:
            raise ValueError(f"feature map returned last dimension {out.shape[-1]}, expected b={self.b}")
        return out

    def describe(self) -> dict:
        d = {"kind": self.kind, "b": self.b}
        if self.bandwidth is not None:
            d["bandwidth"] = self.bandwidth
        return d


def _product(xu, xv):
    return xu * xv


def quadratic() -> FeatureMap:
    """``psi(x_u, x_v) = x_u * x_v``; the Gaussian/Ising choice."""
    return FeatureMap("quadratic", 1, _product)


def rbf(bandwidth: float = 0.5) -> FeatureMap:
    """``psi(x_u, x_v) = exp(-(x_u - x_v)**2 / bandwidth)``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")

    def _rbf(xu, xv):
        return np.exp(-((xu - xv) ** 2) / bandwidth)

    return FeatureMap("rbf", 1, _rbf, bandwidth=float(bandwidth))


def custom(func: Callable, b: int = 1, kind: str = "custom") -> FeatureMap:
    if b < 1:
        raise ValueError("b must be a positive integer")
    return FeatureMap(kind, int(b), func)


def check_samples(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DataError(f"sample matrix must be 2-D, got shape {x.shape}")
    n, m = x.shape
    if n < 1 or m < 2:
        raise DataError(f"need n >= 1 and m >= 2, got n={n}, m={m}")
    bad = ~np.isfinite(x)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DataError(f"non-finite value at row {i}, column {j}")
    return x


def featurize(data, fmap: FeatureMap) -> np.ndarray:
    """Feature matrix ``(n, n_pairs(m) * b)`` of a sample matrix.

    Raises
    ------
    DataError
        If any feature is non-finite; the message names the first offending
        sample and pair.
    """
    x = check_samples(data)
    n, m = x.shape
    us, vs = pair_arrays(m)
    feats = fmap(x[:, us], x[:, vs])  # (n, K, b)
    bad = ~np.isfinite(feats)
    if bad.any():
        i, k, _ = np.argwhere(bad)[0]
        u, v = pair_from_index(int(k), m)
        raise DataError(f"non-finite feature for sample {i}, pair ({u}, {v})")
    return np.ascontiguousarray(feats.reshape(n, -1))


def zeros_theta(m: int, b: int = 1) -> np.ndarray:
    return np.zeros((n_pairs(m), b))


def group_norms(theta: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(theta), axis=1)


def support(theta: np.ndarray) -> frozenset:
    """Flat indices of pairs with a nonzero block (exact test, no threshold)."""
    return frozenset(int(k) for k in np.flatnonzero(np.any(np.atleast_2d(theta) != 0, axis=1)))


def _exponents(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    flat = np.asarray(theta, dtype=float).ravel()
    if features.shape[-1] != flat.size:
        raise ValueError(
            f"dimension mismatch: features have {features.shape[-1]} columns, theta has {flat.size} entries"
        )
    return features @ flat


def log_ratio_unnormalized(theta, features, i: Optional[int] = None):
    """``<theta, f(x_i)>`` for sample ``i``, or for all rows if ``i`` is None."""
    g = _exponents(theta, np.atleast_2d(features))
    return g if i is None else float(g[i])


def logmeanexp(g: np.ndarray) -> float:
    """``log(mean(exp(g)))`` with max-subtraction."""
    g = np.asarray(g, dtype=float)
    gmax = g.max()
    return float(gmax + np.log(np.mean(np.exp(g - gmax))))


def empirical_log_normalizer(theta, q_features) -> float:
    """Log of the Q-sample average of ``exp(<theta, f(x)>)``."""
    return logmeanexp(_exponents(theta, np.atleast_2d(q_features)))


def ratio_weights(g: np.ndarray) -> np.ndarray:
    """Empirical ratio at each Q exponent in ``g``; the weights sum to ``len(g)``."""
    e = np.exp(g - g.max())
    return e * (g.size / e.sum())


def empirical_ratio(theta, q_features, x_features) -> np.ndarray | float:
    """Empirical density ratio ``exp(<theta, f(x)> - log N_hat(theta))``.

    ``x_features`` may be a single feature row or a matrix of rows.
    """
    a_hat = empirical_log_normalizer(theta, q_features)
    x_features = np.asarray(x_features, dtype=float)
    g = _exponents(theta, np.atleast_2d(x_features))
    r = np.exp(g - a_hat)
    return float(r[0]) if x_features.ndim == 1 else r


def load_csv(path) -> np.ndarray:
    """Read a headerless CSV sample matrix.

    Raises
    ------
    DataError
        On ragged rows, unparsable cells, or non-finite values; the message
        carries the 1-based row and column.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {r} has {len(row)} columns, expected {width}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    val = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {c}: cannot parse {cell!r}") from None
                if not np.isfinite(val):
                    raise DataError(f"{path}: row {r}, column {c}: non-finite value")
                vals.append(val)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return check_samples(np.array(rows))


def save_csv(path, data) -> None:
    x = check_samples(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in x:
            w.writerow([repr(float(v)) for v in row])
