"""Dense linear algebra helpers, binomial probabilities and keyed random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NonSymmetric, NotPositiveDefinite


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used across the package, kept in one place."""

    symmetry_rtol: float = 1e-12
    eig_rtol: float = 1e-8
    degenerate_eig: float = 1e-10
    s_slack: float = 0.999
    ridge_eps: float = 1e-6
    lasso_obj_rtol: float = 1e-7
    lasso_max_iter: int = 10_000
    # slack used when comparing ratios / e-values so that exact rational ties
    # are resolved the same way by every procedure
    tie_rtol: float = 1e-12


TOL = Tolerances()


def _check_square(a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSymmetric(f"expected a square matrix, got shape {a.shape}")
    return a


def is_symmetric(a, rtol=TOL.symmetry_rtol):
    a = np.asarray(a, dtype=float)
    scale = max(float(np.max(np.abs(a))), 1.0) if a.size else 1.0
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= rtol * scale)


def cholesky(a):
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises
    ------
    NotPositiveDefinite
        If ``a`` is not symmetric or a pivot is not strictly positive.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not is_symmetric(a):
        raise NotPositiveDefinite("matrix is not square-symmetric")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def _chol_ok(a):
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def min_eigenvalue(a, rtol=TOL.eig_rtol):
    """Smallest eigenvalue of a symmetric matrix.

    Bisection on the shift ``mu``: ``a - mu*I`` admits a Cholesky factor
    exactly when ``mu < lambda_min``.  Gershgorin discs give the initial
    lower bracket and the smallest diagonal entry the upper one.
    """
    a = _check_square(a)
    if not is_symmetric(a):
        raise NonSymmetric("min_eigenvalue requires a symmetric matrix")
    a = 0.5 * (a + a.T)
    d = np.diag(a)
    off = np.sum(np.abs(a), axis=1) - np.abs(d)
    lo = float(np.min(d - off))
    hi = float(np.min(d))
    eye = np.eye(a.shape[0])
    floor = 1e-15 * max(float(np.max(np.abs(a))), 1e-300)
    while hi - lo > max(rtol * max(abs(lo), abs(hi)), floor):
        mid = 0.5 * (lo + hi)
        if _chol_ok(a - mid * eye):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binom_cdf_pmf(x, m, prob):
    """Binomial CDF and PMF at ``x`` for ``m`` trials with success ``prob``.

    ``x < 0`` gives ``(0.0, 0.0)``.  The CDF is the running sum of the
    same PMF terms, so ``cdf(x) == sum(pmf(i) for i <= x)`` holds exactly.
    """
    x = int(x)
    m = int(m)
    if m < 0:
        raise ValueError("m must be nonnegative")
    if not 0.0 <= prob <= 1.0:
        raise ValueError("prob must lie in [0, 1]")
    if x < 0:
        return 0.0, 0.0

    def pmf(i):
        return math.comb(m, i) * prob**i * (1.0 - prob) ** (m - i)

    cdf = 0.0
    for i in range(min(x, m) + 1):
        cdf += pmf(i)
    return cdf, (pmf(x) if x <= m else 0.0)


class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_id)``.

    Backed by the Philox generator, whose output is a function of the key
    and the draw counter only.  ``spawn`` derives child streams with an
    extended key, so every (run, purpose) pair gets its own stream no matter
    which worker evaluates it.
    """

    __slots__ = ("master_seed", "stream_id", "path", "_gen")

    def __init__(self, master_seed, stream_id=0, path=()):
        if int(master_seed) < 0 or int(stream_id) < 0:
            raise ValueError("master_seed and stream_id must be nonnegative")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(k) for k in path)
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.path))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id}, path={self.path})"

    def __getstate__(self):
        return (self.master_seed, self.stream_id, self.path, self._gen.bit_generator.state)

    def __setstate__(self, state):
        seed, sid, path, bg_state = state
        RngStream.__init__(self, seed, sid, path)
        self._gen.bit_generator.state = bg_state

    def spawn(self, key):
        return RngStream(self.master_seed, self.stream_id, self.path + (int(key),))

    @property
    def generator(self):
        return self._gen

    def standard_normal(self, size):
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def seed_int(self):
        """A 63-bit integer derived from the key, for handing to other seeded APIs."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.path))
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def as_stream(seed, stream_id=0):
    """Run stream ``stream_id`` under ``seed`` (an int or an existing RngStream)."""
    if isinstance(seed, RngStream):
        return seed.spawn(stream_id)
    return RngStream(seed, stream_id)


def sample_std_normal(stream, count):
    return stream.standard_normal(int(count))
