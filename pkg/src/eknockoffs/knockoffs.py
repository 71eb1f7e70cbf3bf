"""Gaussian model-X knockoffs (exact and second-order) and fixed-X knockoffs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DegenerateCovariance,
    DimensionMismatch,
    NotPositiveDefinite,
    RankDeficientX,
    TooFewRows,
)
from .numerics import TOL, cholesky, is_symmetric, min_eigenvalue


def equicorrelated_s(cov, slack=TOL.s_slack):
    """Equicorrelated knockoff diagonal ``s_j = min(1, 2*lambda_min(R)) * d_j * slack``.

    ``R`` is the correlation matrix of ``cov`` and ``d`` its diagonal, so
    non-standardized inputs are handled by rescaling.
    """
    cov = np.asarray(cov, dtype=float)
    d = np.diag(cov).copy()
    if np.any(d <= 0):
        raise DegenerateCovariance("covariance has a nonpositive variance")
    scale = 1.0 / np.sqrt(d)
    corr = cov * scale[:, None] * scale[None, :]
    lam = min_eigenvalue(corr)
    if lam <= TOL.degenerate_eig:
        raise DegenerateCovariance(f"smallest correlation eigenvalue {lam:.3g} is too small")
    return min(1.0, 2.0 * lam) * d * slack


def _psd_sqrt_upper(a):
    """Upper factor ``C`` with ``C.T @ C == a`` for a PSD matrix."""
    try:
        return cholesky(a).T
    except NotPositiveDefinite:
        vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class GaussianModel:
    """Gaussian law of the features plus the knockoff conditional it induces.

    Given a row ``x``, knockoffs are drawn from
    ``N(mean + (x - mean) @ cond_transform, cond_cov)`` with
    ``cond_transform = I - cov^{-1} diag(s)`` and
    ``cond_cov = 2 diag(s) - diag(s) cov^{-1} diag(s)``.
    """

    mean: np.ndarray
    cov: np.ndarray
    s: np.ndarray
    cond_transform: np.ndarray = field(repr=False)
    cond_cov: np.ndarray = field(repr=False)
    cond_factor: np.ndarray = field(repr=False)

    @classmethod
    def from_cov(cls, cov, mean=None, s=None):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not is_symmetric(cov):
            raise DimensionMismatch("covariance must be a symmetric square matrix")
        p = cov.shape[0]
        mean = np.zeros(p) if mean is None else np.asarray(mean, dtype=float)
        if mean.shape != (p,):
            raise DimensionMismatch("mean length does not match covariance")
        try:
            chol = cholesky(cov)
        except NotPositiveDefinite as exc:
            raise DegenerateCovariance(str(exc)) from None
        s = equicorrelated_s(cov) if s is None else np.asarray(s, dtype=float)
        if s.shape != (p,) or np.any(s < 0):
            raise ValueError("s must be a nonnegative vector of length p")
        # cov^{-1} diag(s) through the Cholesky factor
        inv_ds = np.linalg.solve(chol.T, np.linalg.solve(chol, np.diag(s)))
        transform = np.eye(p) - inv_ds
        cond_cov = 2.0 * np.diag(s) - np.diag(s) @ inv_ds
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        factor = _psd_sqrt_upper(cond_cov)
        return cls(mean, cov, s, transform, cond_cov, factor)

    @property
    def p(self):
        return self.mean.shape[0]

    def joint_cov(self):
        """Covariance of ``[X, X~]`` implied by the construction."""
        off = self.cov - np.diag(self.s)
        return np.block([[self.cov, off], [off, self.cov]])

    def precision(self):
        return np.linalg.inv(self.cov)

    def scaled(self, factor):
        """The same model with covariance multiplied by ``factor``."""
        return GaussianModel.from_cov(self.cov * factor, self.mean)


def sample_knockoff_mx(model, X, stream):
    """Draw one model-X knockoff matrix for ``X`` (rows independent given ``X``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise DimensionMismatch(f"X has shape {X.shape}, model dimension is {model.p}")
    n = X.shape[0]
    centered = X - model.mean
    noise = stream.standard_normal((n, model.p))
    return model.mean + centered @ model.cond_transform + noise @ model.cond_factor


def second_order_model(X, ridge=TOL.ridge_eps):
    """Gaussian model matched to the first two sample moments of ``X``.

    The sample covariance gets a ridge of ``ridge * trace/p`` and is then
    rescaled back to the sample variances before the equicorrelated ``s``
    is computed.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise TooFewRows("second-order knockoffs need at least two rows")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    var = np.diag(cov).copy()
    if np.any(var <= 0):
        bad = np.flatnonzero(var <= 0).tolist()
        raise DegenerateCovariance(f"columns {bad} have zero variance")
    loaded = cov + ridge * (np.trace(cov) / p) * np.eye(p)
    rescale = np.sqrt(var / np.diag(loaded))
    loaded = loaded * rescale[:, None] * rescale[None, :]
    return GaussianModel.from_cov(0.5 * (loaded + loaded.T), mean)


@dataclass(frozen=True)
class FixedXDesign:
    """Fixed design with its Gram matrix and the knockoff diagonal ``s``."""

    X: np.ndarray
    gram: np.ndarray = field(repr=False)
    s: np.ndarray
    _basis: np.ndarray = field(repr=False)
    _shift: np.ndarray = field(repr=False)
    _factor: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, X, s=None):
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        if n < 2 * p:
            raise TooFewRows(f"fixed-X knockoffs need n >= 2p, got n={n}, p={p}")
        q, r = np.linalg.qr(X)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
            raise RankDeficientX("X does not have full column rank")
        gram = X.T @ X
        gram = 0.5 * (gram + gram.T)
        if s is None:
            s = equicorrelated_s(gram)
        s = np.asarray(s, dtype=float)
        if s.shape != (p,) or np.any(s < 0):
            raise ValueError("s must be a nonnegative vector of length p")
        ginv_ds = np.linalg.solve(gram, np.diag(s))
        a = 2.0 * np.diag(s) - np.diag(s) @ ginv_ds
        a = 0.5 * (a + a.T)
        if min_eigenvalue(a) < -1e-10 * max(float(np.max(np.abs(a))), 1.0):
            raise ValueError("2 diag(s) - diag(s) gram^{-1} diag(s) is not PSD")
        return cls(X, gram, s, q, np.eye(p) - ginv_ds, _psd_sqrt_upper(a))

    @property
    def shape(self):
        return self.X.shape


def _orthonormal_complement(design, stream, attempts=3):
    n, p = design.shape
    Q = design._basis
    for _ in range(attempts):
        Z = stream.standard_normal((n, p))
        Z -= Q @ (Q.T @ Z)
        U, r = np.linalg.qr(Z)
        diag = np.abs(np.diag(r))
        if diag.min() > 1e-8 * max(diag.max(), 1e-300):
            # second projection removes what rounding left in col(X)
            U -= Q @ (Q.T @ U)
            U, _ = np.linalg.qr(U)
            return U
    raise RankDeficientX("could not draw an orthonormal complement")


def fixed_x_knockoff(design, stream):
    """Fixed-X knockoff ``X (I - G^{-1} D) - U C`` with ``C.T C = 2D - D G^{-1} D``.

    ``U`` is a random orthonormal ``n x p`` matrix orthogonal to ``col(X)``:
    a Gaussian matrix projected onto the orthocomplement and orthonormalized.
    """
    U = _orthonormal_complement(design, stream)
    return design.X @ design._shift - U @ design._factor


def exchangeability_diagnostic(X, Xt, j, z=4.0):
    """Compare moments of ``[X, X~]`` with those after swapping column ``j``.

    Returns a dict of mean and covariance discrepancies scaled by rough
    Monte Carlo standard errors.  Advisory only: a degenerate copy
    ``X~ = X`` passes trivially.
    """
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xt, dtype=float)
    if X.shape != Xt.shape:
        raise DimensionMismatch("X and knockoffs differ in shape")
    n, p = X.shape
    joint = np.hstack([X, Xt])
    swapped = joint.copy()
    swapped[:, [j, j + p]] = swapped[:, [j + p, j]]
    mean_gap = np.abs(joint.mean(axis=0) - swapped.mean(axis=0))
    c = np.cov(joint, rowvar=False)
    cs = np.cov(swapped, rowvar=False)
    cov_gap = np.abs(c - cs)
    sd = np.sqrt(np.diag(c))
    mean_se = np.sqrt(2.0) * sd / np.sqrt(n)
    # a difference of two sample covariances, each with variance about (s_a s_b)^2 / n
    cov_se = np.sqrt(2.0) * np.outer(sd, sd) / np.sqrt(n)
    mean_z = float(np.max(mean_gap / np.maximum(mean_se, 1e-300)))
    cov_z = float(np.max(cov_gap / np.maximum(cov_se, 1e-300)))
    return {
        "feature": int(j),
        "n": int(n),
        "max_mean_discrepancy": float(mean_gap.max()),
        "max_cov_discrepancy": float(cov_gap.max()),
        "mean_z": mean_z,
        "cov_z": cov_z,
        "threshold_z": float(z),
        "flagged": bool(mean_z > z or cov_z > z),
    }
