"""Feature-importance statistics built from L1-penalized regression.

The Lasso fits use accelerated proximal gradient with full-gradient
updates.  Unlike cyclic coordinate descent, every coordinate is updated
from the same iterate, so exchanging two columns exchanges their
coefficients along the whole trajectory; this is what makes the
coefficient-difference statistic exactly antisymmetric under a swap of a
feature with its knockoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _lasso_kernels as _k
from .exceptions import DimensionMismatch, NonFinite
from .numerics import TOL

FAMILIES = ("gaussian", "logistic")
KKT_TOL = 1e-6


@dataclass(frozen=True)
class ImportanceVector:
    """Per-feature statistics ``w`` from one knockoff realization."""

    w: np.ndarray
    statistic_id: str = "lcd"
    run_index: int = 0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1:
            raise DimensionMismatch("importance statistics must be a vector")
        if not np.all(np.isfinite(w)):
            raise NonFinite("importance statistics must be finite")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.shape[0]


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    intercept: float
    lam: float
    family: str
    n_iter: int = 0
    converged: bool = True
    lambdas: np.ndarray | None = field(default=None, repr=False)
    cv_error: np.ndarray | None = field(default=None, repr=False)


def _as_statistic(w, statistic_id="custom", run_index=0):
    if isinstance(w, ImportanceVector):
        return w
    return ImportanceVector(np.asarray(w, dtype=float), statistic_id, run_index)


def _check_inputs(design, y, family):
    design = np.ascontiguousarray(design, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    if design.ndim != 2:
        raise DimensionMismatch("design must be a 2-D array")
    if design.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design has {design.shape[0]} rows but y has {y.shape[0]}")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    if family == "logistic" and not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic family needs a 0/1 response")
    return design, y


def lambda_max(design, y):
    """Smallest penalty at which every coefficient is zero."""
    design, y = _check_inputs(design, y, "gaussian")
    xc = design - design.mean(axis=0)
    return float(np.max(np.abs(xc.T @ (y - y.mean())))) / design.shape[0]


class _Problem:
    """Centered sufficient statistics of a row subset, ready for path fits."""

    def __init__(self, design, y, rows, family):
        self.family = family
        self.n = rows.shape[0]
        G, b, yy, mean, ybar = _k.centered_gram(design, y, rows)
        self.G, self.b, self.yy, self.mean, self.ybar = G, b, yy, mean, ybar
        top = float(np.linalg.eigvalsh(G)[-1]) if G.shape[0] else 0.0
        if family == "gaussian":
            lip = top / self.n
        else:
            self.XcT = np.ascontiguousarray((design[rows] - mean).T)
            self.y = np.ascontiguousarray(y[rows])
            lip = max(top, float(self.n)) / (4.0 * self.n)
        self.step = 1.0 / lip if lip > 0 else 1.0

    def path(self, lambdas, rtol, max_iter, start=None):
        q = self.b.shape[0]
        lambdas = np.ascontiguousarray(lambdas, dtype=float)
        beta0 = np.zeros(q) if start is None else np.ascontiguousarray(start[0], dtype=float)
        if self.family == "gaussian":
            betas, iters, conv = _k.gaussian_path(
                self.G, self.b, self.yy, float(self.n), lambdas, self.step, rtol, max_iter, beta0
            )
            intercepts = self.ybar - betas @ self.mean
        else:
            if start is None:
                ybar = min(max(self.ybar, 1e-12), 1 - 1e-12)
                b00 = float(np.log(ybar / (1 - ybar)))
            else:
                # stored intercepts refer to uncentered columns
                b00 = float(start[1] + beta0 @ self.mean)
            betas, b0, iters, conv = _k.logistic_path(
                self.XcT, self.y, lambdas, self.step, rtol, max_iter, beta0, b00
            )
            intercepts = b0 - betas @ self.mean
        if not np.all(np.isfinite(betas)) or not np.all(np.isfinite(intercepts)):
            raise NonFinite("proximal gradient diverged")
        return betas, intercepts, iters, conv


def fista_lasso(design, y, lam, family="gaussian", rtol=TOL.lasso_obj_rtol, max_iter=TOL.lasso_max_iter):
    """Minimize ``(1/2n) * loss + lam * ||beta||_1`` with an unpenalized intercept.

    ``loss`` is the squared error (gaussian) or the binomial deviance
    (logistic).  Iteration stops when the relative decrease of the objective
    drops below ``rtol`` or after ``max_iter`` steps.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    design, y = _check_inputs(design, y, family)
    prob = _Problem(design, y, np.arange(design.shape[0]), family)
    betas, intercepts, iters, conv = prob.path(np.array([lam], dtype=float), rtol, max_iter)
    fit = LassoFit(betas[0], float(intercepts[0]), float(lam), family, int(iters[0]), bool(conv[0]))
    return _polish(fit, prob, design, y, rtol, max_iter)


def _polish(fit, prob, design, y, rtol, max_iter, kkt_tol=KKT_TOL):
    """Tighten the objective tolerance until the KKT conditions hold to ``kkt_tol``.

    A small relative objective decrease does not by itself bound the
    subgradient residual on poorly conditioned designs.
    """
    n_iter = fit.n_iter
    while kkt_residual(fit, design, y) > kkt_tol and rtol > 1e-15 and n_iter < 50 * max_iter:
        rtol *= 1e-2
        betas, intercepts, iters, conv = prob.path(
            np.array([fit.lam]), rtol, max_iter, start=(fit.coefficients, fit.intercept)
        )
        n_iter += int(iters[0])
        fit = replace(fit, coefficients=betas[0], intercept=float(intercepts[0]), n_iter=n_iter,
                      converged=bool(conv[0]))
    return fit


def lasso_objective(fit, design, y):
    design, y = _check_inputs(design, y, fit.family)
    eta = fit.intercept + design @ fit.coefficients
    n = design.shape[0]
    if fit.family == "gaussian":
        loss = 0.5 * np.sum((y - eta) ** 2) / n
    else:
        loss = np.sum(np.logaddexp(0.0, eta) - y * eta) / n
    return float(loss + fit.lam * np.sum(np.abs(fit.coefficients)))


def kkt_residual(fit, design, y):
    """Largest violation of the Lasso optimality conditions at ``fit``."""
    design, y = _check_inputs(design, y, fit.family)
    n = design.shape[0]
    eta = fit.intercept + design @ fit.coefficients
    mu = eta if fit.family == "gaussian" else 1.0 / (1.0 + np.exp(-eta))
    grad = design.T @ (mu - y) / n
    beta = fit.coefficients
    active = beta != 0
    res = np.where(
        active,
        np.abs(grad + fit.lam * np.sign(beta)),
        np.maximum(np.abs(grad) - fit.lam, 0.0),
    )
    return float(max(np.max(res, initial=0.0), abs(np.mean(mu - y))))


def lambda_grid(design, y, grid=100, ratio=None):
    n, q = design.shape
    if ratio is None:
        ratio = 1e-4 if n > q else 1e-2
    lmax = lambda_max(design, y)
    if lmax <= 0:
        lmax = 1e-12
    return lmax * ratio ** np.linspace(0.0, 1.0, grid)


def fold_assignment(n, folds, stream):
    perm = stream.permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


def _heldout_loss(family, design, y, rows, betas, intercepts):
    eta = intercepts[:, None] + betas @ design[rows].T
    yt = y[rows][None, :]
    if family == "gaussian":
        return np.sum((yt - eta) ** 2, axis=1)
    return 2.0 * np.sum(np.logaddexp(0.0, eta) - yt * eta, axis=1)


def cv_lasso(
    design,
    y,
    family="gaussian",
    folds=10,
    grid=100,
    stream=None,
    ratio=None,
    rtol=TOL.lasso_obj_rtol,
    max_iter=TOL.lasso_max_iter,
):
    """K-fold cross-validated Lasso over a log-spaced penalty grid.

    The grid runs from ``lambda_max`` down to ``lambda_max * ratio``.  Each
    fold fits the whole path with warm starts; the returned fit is the
    full-data solution at the penalty minimizing the pooled held-out loss
    (the largest such penalty on ties).
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if stream is None:
        raise ValueError("cv_lasso needs an RngStream for the fold split")
    design, y = _check_inputs(design, y, family)
    n = design.shape[0]
    lambdas = lambda_grid(design, y, grid, ratio)
    ids = fold_assignment(n, folds, stream)
    err = np.zeros(grid)
    for f in range(folds):
        train = np.flatnonzero(ids != f)
        test = np.flatnonzero(ids == f)
        if test.size == 0:
            continue
        prob = _Problem(design, y, train, family)
        betas, intercepts, _, _ = prob.path(lambdas, rtol, max_iter)
        err += _heldout_loss(family, design, y, test, betas, intercepts)
    err /= n
    best = int(np.argmin(err))
    prob = _Problem(design, y, np.arange(n), family)
    betas, intercepts, iters, conv = prob.path(lambdas[: best + 1], rtol, max_iter)
    fit = LassoFit(
        betas[-1],
        float(intercepts[-1]),
        float(lambdas[best]),
        family,
        int(iters[-1]),
        bool(conv[-1]),
        lambdas=lambdas,
        cv_error=err,
    )
    return _polish(fit, prob, design, y, rtol, max_iter)


def lcd_statistic(X, Xt, y, family="gaussian", stream=None, folds=10, grid=100, run_index=0):
    """Lasso coefficient difference ``|beta_j| - |beta~_j|``.

    The response never influences the knockoffs; it only enters here.  Exact
    ties in magnitude give ``w_j == 0``.
    """
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xt, dtype=float)
    if X.shape != Xt.shape:
        raise DimensionMismatch(f"X has shape {X.shape} but knockoffs have {Xt.shape}")
    p = X.shape[1]
    fit = cv_lasso(np.hstack([X, Xt]), y, family, folds, grid, stream)
    beta = fit.coefficients
    w = np.abs(beta[:p]) - np.abs(beta[p:])
    return ImportanceVector(w, "lcd", run_index)


@dataclass(frozen=True)
class LcdStatistic:
    """Picklable LCD statistic with fixed CV settings, for the derandomized loops."""

    family: str = "gaussian"
    folds: int = 10
    grid: int = 100

    def __call__(self, X, Xt, y, stream, run_index=0):
        return lcd_statistic(X, Xt, y, self.family, stream, self.folds, self.grid, run_index)
