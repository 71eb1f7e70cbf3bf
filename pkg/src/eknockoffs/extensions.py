"""Derandomized fixed-X knockoffs, misspecification diagnostics, the
multi-environment filter and side-information e-values."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DegenerateConditional,
    DimensionMismatch,
    EnvDimensionMismatch,
    InvalidOrdering,
    NonPositiveWeight,
)
from .filter import (
    EValueVector,
    SelectionResult,
    aggregate_statistics,
    average_evalues,
    ebh,
    knockoff_threshold,
    map_runs,
    run_streams,
)
from .knockoffs import fixed_x_knockoff, sample_knockoff_mx
from .numerics import binom_cdf_pmf
from .stats import ImportanceVector, LcdStatistic, _as_statistic


# ---------------------------------------------------------------------------
# fixed-X
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _FixedXRun:
    design: object
    y: np.ndarray
    statistic: object
    master_seed: object

    def __call__(self, m):
        ko_stream, stat_stream, _ = run_streams(self.master_seed, m)
        Xt = fixed_x_knockoff(self.design, ko_stream)
        return _as_statistic(self.statistic(self.design.X, Xt, self.y, stat_stream, run_index=m)).w


def derandomized_fixed_x(
    design,
    y,
    statistic=None,
    alpha_kn=0.05,
    alpha_ebh=0.1,
    M=50,
    master_seed=0,
    c=1.0,
    early_stop=True,
    workers=1,
    keep_runs=False,
):
    """Derandomized fixed-X knockoffs; each run draws a fresh orthonormal ``U``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    statistic = LcdStatistic() if statistic is None else statistic
    task = _FixedXRun(design, np.asarray(y, dtype=float), statistic, master_seed)
    W = np.vstack(map_runs(task, range(1, M + 1), workers))
    sel, e_avg = aggregate_statistics(W, alpha_kn, alpha_ebh, c, early_stop, keep_runs)
    return SelectionResult(sel.selected, sel.khat, sel.level, "fixed-x-derand"), e_avg


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KlDiagnostic:
    kl: np.ndarray  # runs x features
    kl_max: np.ndarray = field(init=False)

    def __post_init__(self):
        kl = np.atleast_2d(np.asarray(self.kl, dtype=float))
        object.__setattr__(self, "kl", kl)
        object.__setattr__(self, "kl_max", kl.max(axis=0))


def _conditionals(model):
    """Coefficients and variances of each ``X_j | X_{-j}`` from the precision matrix."""
    prec = model.precision()
    d = np.diag(prec).copy()
    if np.any(d <= 0):
        raise DegenerateConditional("precision matrix has a nonpositive diagonal")
    return prec, d


def _cond_logpdf(model, prec, d, X, values):
    """Log density of ``values[:, j]`` under ``X_j | X_{-j} = X[:, -j]`` for every j."""
    centered = X - model.mean
    # E[X_j | X_-j] = mu_j - sum_{k != j} prec_jk (x_k - mu_k) / prec_jj
    off = centered @ prec - centered * d
    cond_mean = model.mean - off / d
    var = 1.0 / d
    if np.any(var <= 0):
        raise DegenerateConditional("conditional variance is not positive")
    resid = values - cond_mean
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * resid**2 / var


def empirical_kl(model_true, model_used, X, Xt_runs):
    """Per-run, per-feature log likelihood-ratio sums comparing the true and used conditionals."""
    X = np.asarray(X, dtype=float)
    pt, dt = _conditionals(model_true)
    pu, du = _conditionals(model_used)
    lp_x = _cond_logpdf(model_true, pt, dt, X, X)
    lq_x = _cond_logpdf(model_used, pu, du, X, X)
    rows = []
    for Xt in Xt_runs:
        Xt = np.asarray(Xt, dtype=float)
        if Xt.shape != X.shape:
            raise DimensionMismatch("knockoff run has the wrong shape")
        lp_t = _cond_logpdf(model_true, pt, dt, X, Xt)
        lq_t = _cond_logpdf(model_used, pu, du, X, Xt)
        rows.append(np.sum(lp_x - lq_x + lq_t - lp_t, axis=0))
    return KlDiagnostic(np.array(rows))


# ---------------------------------------------------------------------------
# multiple environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiEnvStatistics:
    W: np.ndarray  # environments x features
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if not np.all(np.isfinite(W)):
            raise ValueError("multi-environment statistics must be finite")
        object.__setattr__(self, "W", W)

    @property
    def env_count(self):
        return self.W.shape[0]


def multienv_statistic_cst(S):
    """Consistency statistic: smallest sign across environments times the product of magnitudes."""
    W = S.W if isinstance(S, MultiEnvStatistics) else np.atleast_2d(S)
    w = np.min(np.sign(W), axis=0) * np.prod(np.abs(W), axis=0)
    return ImportanceVector(w, "mekf-cst")


def multienv_statistic_pcst(S, r, stream):
    """Partial-consistency statistic for association in at least ``r`` environments.

    The sign comes from a randomized binomial p-value of the negative-sign
    count; the magnitude is the product of the ``r`` smallest magnitudes.
    One uniform per feature is drawn from ``stream`` in column order.
    """
    W = S.W if isinstance(S, MultiEnvStatistics) else np.atleast_2d(S)
    E, p = W.shape
    if not 1 <= r <= E:
        raise ValueError("r must lie in [1, E]")
    U = stream.uniform(p)
    mags = np.sort(np.abs(W), axis=0)  # ascending: row 0 is the E-th largest
    mag = np.prod(mags[:r], axis=0)
    out = np.empty(p)
    for j in range(p):
        n_neg = int(np.sum(W[:, j] < 0))
        n_zero = int(np.sum(W[:, j] == 0))
        trials = max(E - r + 1 - n_zero, 0)
        cdf, _ = binom_cdf_pmf(n_neg - 1, trials, 0.5)
        _, pmf = binom_cdf_pmf(n_neg, trials, 0.5)
        pj = cdf + U[j] * pmf
        out[j] = np.sign(0.5 - pj) * mag[j]
    return ImportanceVector(out, f"mekf-pcst{r}")


@dataclass(frozen=True)
class _MekfRun:
    datasets: tuple
    models: tuple
    statistic: object
    mode: str
    r: int
    master_seed: object

    def __call__(self, m):
        rows = []
        for e, ((X, y), model) in enumerate(zip(self.datasets, self.models)):
            ko_stream, stat_stream, _ = run_streams(self.master_seed, m, env=e)
            Xt = sample_knockoff_mx(model, X, ko_stream)
            rows.append(_as_statistic(self.statistic(X, Xt, y, stat_stream, run_index=m)).w)
        S = MultiEnvStatistics(np.vstack(rows))
        if self.mode == "cst":
            return multienv_statistic_cst(S).w
        _, _, aux = run_streams(self.master_seed, m)
        return multienv_statistic_pcst(S, self.r, aux).w


def derandomized_mekf(
    datasets,
    models,
    statistic=None,
    mode="cst",
    r=None,
    alpha_kn=0.05,
    alpha_ebh=0.1,
    M=50,
    master_seed=0,
    c=1.0,
    early_stop=True,
    workers=1,
    keep_runs=False,
):
    """Derandomized multi-environment knockoff filter.

    ``datasets`` is a sequence of ``(X_e, y_e)`` pairs and ``models`` the
    matching Gaussian feature models.  ``mode`` is ``"cst"`` (association in
    every environment) or ``"pcst"`` with ``r`` (in at least ``r``).
    """
    datasets = tuple((np.asarray(X, dtype=float), np.asarray(y, dtype=float)) for X, y in datasets)
    models = tuple(models)
    if len(datasets) != len(models) or not datasets:
        raise EnvDimensionMismatch("need one model per environment")
    p = datasets[0][0].shape[1]
    if any(X.shape[1] != p for X, _ in datasets) or any(mdl.p != p for mdl in models):
        raise EnvDimensionMismatch("all environments must share the feature dimension")
    if mode not in ("cst", "pcst"):
        raise ValueError("mode must be 'cst' or 'pcst'")
    if mode == "pcst" and (r is None or not 1 <= r <= len(datasets)):
        raise ValueError("pcst mode needs 1 <= r <= number of environments")
    statistic = LcdStatistic() if statistic is None else statistic
    task = _MekfRun(datasets, models, statistic, mode, int(r or 0), master_seed)
    W = np.vstack(map_runs(task, range(1, M + 1), workers))
    sel, e_avg = aggregate_statistics(W, alpha_kn, alpha_ebh, c, early_stop, keep_runs)
    return SelectionResult(sel.selected, sel.khat, sel.level, f"mekf-{mode}"), e_avg


# ---------------------------------------------------------------------------
# side information
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SideInfo:
    u: np.ndarray
    kind: str = "weights"

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if self.kind not in ("weights", "covariates"):
            raise ValueError("kind must be 'weights' or 'covariates'")
        if self.kind == "weights" and (u.ndim != 1 or np.any(~(u > 0))):
            raise NonPositiveWeight("weights must be strictly positive")


def weighted_evalues(w, thr, side, p_dim=None):
    """Side-information weighted e-values ``p u_j 1{w_j >= t} / (u_j + sum_k u_k 1{w_k <= -t})``."""
    w = _as_statistic(w).w
    p_dim = w.shape[0] if p_dim is None else int(p_dim)
    u = side.u if isinstance(side, SideInfo) else SideInfo(side).u
    if np.any(~(u > 0)):
        raise NonPositiveWeight("weights must be strictly positive")
    if u.shape != w.shape:
        raise DimensionMismatch("one weight per feature is required")
    if not thr.finite:
        return EValueVector(np.zeros(w.shape[0]), p_dim, "weighted")
    t = thr.t
    neg = float(np.sum(u[w <= -t]))
    e = np.where(w >= t, p_dim * u / (u + neg), 0.0)
    return EValueVector(e, p_dim, "weighted")


def default_ordering(side, magnitudes, revealed):
    """Screen the unscreened feature that looks most null.

    Lowest side-information score first, ties broken by smallest magnitude.
    Uses only the masked information (magnitudes and side information).
    """
    u = side.u if side.u.ndim == 1 else side.u[:, 0]
    open_ = np.flatnonzero(np.isnan(revealed))
    key = np.lexsort((open_, magnitudes[open_], u[open_]))
    return int(open_[key[0]])


def adaptive_knockoff_evalues(w, side, ordering_rule=None, alpha_kn=0.05, p_dim=None):
    """e-values from sequential screening driven by side information.

    At step ``k`` (``k`` features screened) let ``P(k)``/``N(k)`` be the
    unscreened features with positive/negative statistics.  Stop at the first
    ``k`` with ``(1 + |N(k)|) / max(|P(k)|, 1) <= alpha_kn``; features in
    ``P(T)`` get ``p / (1 + |N(T)|)``.

    ``ordering_rule(side, magnitudes, revealed)`` returns the next index to
    screen, where ``revealed`` holds the signs of screened features and NaN
    elsewhere.  It must not look at unscreened signs.
    """
    w = _as_statistic(w).w
    p = w.shape[0]
    p_dim = p if p_dim is None else int(p_dim)
    rule = default_ordering if ordering_rule is None else ordering_rule
    mags = np.abs(w)
    revealed = np.full(p, np.nan)
    unscreened = np.ones(p, dtype=bool)
    pos = int(np.sum(w > 0))
    neg = int(np.sum(w < 0))
    for k in range(p + 1):
        if (1 + neg) / max(pos, 1) <= alpha_kn:
            e = np.where(unscreened & (w > 0), p_dim / (1.0 + neg), 0.0)
            return EValueVector(e, p_dim, "adaptive")
        if k == p:
            break
        j = rule(side, mags, revealed.copy())
        if not 0 <= j < p or not unscreened[j]:
            raise InvalidOrdering(f"ordering rule returned index {j}, already screened or out of range")
        unscreened[j] = False
        revealed[j] = np.sign(w[j])
        if w[j] > 0:
            pos -= 1
        elif w[j] < 0:
            neg -= 1
    return EValueVector(np.zeros(p), p_dim, "adaptive")


@dataclass(frozen=True)
class _SideRun:
    X: np.ndarray
    y: np.ndarray
    model: object
    statistic: object
    master_seed: object

    def __call__(self, m):
        ko_stream, stat_stream, _ = run_streams(self.master_seed, m)
        Xt = sample_knockoff_mx(self.model, self.X, ko_stream)
        return _as_statistic(self.statistic(self.X, Xt, self.y, stat_stream, run_index=m)).w


def derandomized_side_info(
    X,
    y,
    model,
    side,
    version="weighted",
    statistic=None,
    ordering_rule=None,
    alpha_kn=0.05,
    alpha_ebh=0.1,
    M=50,
    master_seed=0,
    workers=1,
    keep_runs=False,
):
    """Derandomized knockoffs using side information (weighted or adaptive e-values)."""
    if version not in ("weighted", "adaptive"):
        raise ValueError("version must be 'weighted' or 'adaptive'")
    statistic = LcdStatistic() if statistic is None else statistic
    task = _SideRun(np.asarray(X, dtype=float), np.asarray(y, dtype=float), model, statistic, master_seed)
    W = np.vstack(map_runs(task, range(1, M + 1), workers))
    p = W.shape[1]
    per_run = []
    for w in W:
        if version == "weighted":
            thr = knockoff_threshold(w, alpha_kn, c=1.0, early_stop=True)
            per_run.append(weighted_evalues(w, thr, side, p))
        else:
            per_run.append(adaptive_knockoff_evalues(w, side, ordering_rule, alpha_kn, p))
    e_avg = average_evalues(per_run, keep_runs)
    sel = ebh(e_avg, alpha_ebh)
    return SelectionResult(sel.selected, sel.khat, sel.level, f"side-{version}"), e_avg
