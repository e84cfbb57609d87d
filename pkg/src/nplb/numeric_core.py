"""Dense numeric helpers: distances, percentiles, correlation, seeded RNG.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` and
:func:`as_vector` are the validation entry points.
"""
import zlib

import numpy as np
from scipy import linalg

from .errors import (DimensionError, EmptyInputError, FactorizationError,
                     RangeError, UndefinedCorrelationError)

__all__ = [
    "RandomSource", "as_matrix", "as_vector", "euclidean_distance",
    "mahalanobis_distance", "cholesky_factor", "percentile",
    "columnwise_percentile", "pearson_correlation",
]


def as_vector(x, name="vector"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise RangeError(f"{name} contains non-finite entries")
    return v


def as_matrix(x, name="matrix"):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise RangeError(f"{name} contains non-finite entries")
    return m


class RandomSource:
    """Seeded random stream (PCG64) with named, reproducible sub-streams.

    Two sources built from the same seed yield identical draws; ``spawn(name)``
    derives an independent child stream whose identity depends only on the
    parent seed, the spawn path and ``name``.
    """

    def __init__(self, seed, _path=()):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise RangeError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._path = tuple(_path)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=self._path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, name):
        key = zlib.crc32(str(name).encode("utf-8"))
        return RandomSource(self.seed, self._path + (key,))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, path={self._path})"


def euclidean_distance(a, b):
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def cholesky_factor(cov):
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    cov = as_matrix(cov, "cov")
    if cov.shape[0] != cov.shape[1]:
        raise DimensionError(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise FactorizationError("covariance is not symmetric")
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise FactorizationError(f"covariance is not positive-definite: {exc}") from None


def mahalanobis_distance(x, mu, cov):
    x = as_vector(x, "x")
    mu = as_vector(mu, "mu")
    if x.shape != mu.shape:
        raise DimensionError(f"length mismatch: {x.size} vs {mu.size}")
    chol = cholesky_factor(cov)
    if chol.shape[0] != x.size:
        raise DimensionError(f"covariance is {chol.shape}, vectors have length {x.size}")
    # ||L^{-1}(x - mu)||^2 == (x - mu)^T cov^{-1} (x - mu)
    w = linalg.solve_triangular(chol, x - mu, lower=True)
    return float(np.sqrt(np.dot(w, w)))


def _check_q(q):
    q = float(q)
    if not 0.0 <= q <= 100.0:
        raise RangeError(f"percentile q={q} outside [0, 100]")
    return q


def _interpolate_sorted(s, q):
    # s sorted along axis 0; value at position (q/100)(n-1), lo + (hi - lo) * frac
    n = s.shape[0]
    pos = (q / 100.0) * (n - 1)
    i = min(int(np.floor(pos)), n - 1)
    frac = pos - i
    lo = s[i]
    hi = s[min(i + 1, n - 1)]
    return lo + (hi - lo) * frac


def percentile(values, q):
    """Linear-interpolation percentile at sorted position (q/100)(n-1)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInputError("percentile of an empty sequence")
    return float(_interpolate_sorted(np.sort(v), _check_q(q)))


def columnwise_percentile(m, q):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.size == 0:
        raise EmptyInputError("percentile of an empty matrix")
    return _interpolate_sorted(np.sort(m, axis=0), _check_q(q))


def pearson_correlation(x, y):
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise EmptyInputError("correlation needs at least two observations")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))
