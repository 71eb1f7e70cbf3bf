"""Knockoff thresholds, knockoff e-values, e-BH and derandomized aggregation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import OffsetTooSmall
from .knockoffs import sample_knockoff_mx
from .numerics import TOL, as_stream
from .stats import LcdStatistic, _as_statistic

# stream layout inside one run m: purpose -> environment
KNOCKOFF_PURPOSE = 0
STATISTIC_PURPOSE = 1
AUX_PURPOSE = 2


@dataclass(frozen=True)
class ThresholdResult:
    t: float
    offset_c: float
    alpha_kn: float
    early_stopped: bool
    num_ge: int
    num_le_neg: int

    @property
    def finite(self):
        return math.isfinite(self.t)


@dataclass(frozen=True)
class EValueVector:
    e: np.ndarray
    p_dim: int
    source: str = "single_run"
    runs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float)
        if e.ndim != 1 or np.any(e < 0) or not np.all(np.isfinite(e)):
            raise ValueError("e-values must be a finite nonnegative vector")
        object.__setattr__(self, "e", e)

    def __len__(self):
        return self.e.shape[0]


@dataclass(frozen=True)
class SelectionResult:
    selected: np.ndarray
    khat: int
    level: float
    method: str

    def as_set(self):
        return set(int(j) for j in self.selected)

    def __len__(self):
        return self.selected.shape[0]


def _empty_selection(level, method):
    return SelectionResult(np.array([], dtype=np.int64), 0, float(level), method)


def knockoff_threshold(w, alpha_kn, c=1.0, early_stop=False, tie_rtol=TOL.tie_rtol):
    """Data-dependent knockoff threshold.

    Scans the positive magnitudes of ``w`` in increasing order and returns
    the first ``t`` with ``(c + #{w <= -t}) / #{w >= t} <= alpha_kn``.  With
    ``early_stop`` the scan also stops at the first ``t`` where fewer than
    ``1/alpha_kn`` statistics reach ``t``, a hopeless case for the ratio.
    Returns ``t = inf`` when no candidate qualifies.
    """
    w = _as_statistic(w).w
    if not 0 < alpha_kn <= 1:
        raise ValueError("alpha_kn must lie in (0, 1]")
    if c < 0:
        raise ValueError("offset c must be nonnegative")
    mags = np.unique(np.abs(w[w != 0]))
    if mags.size == 0:
        return ThresholdResult(math.inf, float(c), float(alpha_kn), False, 0, 0)
    pos = np.sort(w[w > 0])
    neg = np.sort(-w[w < 0])
    num_ge = pos.size - np.searchsorted(pos, mags, side="left")
    num_le_neg = neg.size - np.searchsorted(neg, mags, side="left")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(num_ge > 0, (c + num_le_neg) / np.maximum(num_ge, 1), np.inf)
    ok = ratio <= alpha_kn * (1.0 + tie_rtol)
    if early_stop:
        hopeless = num_ge < 1.0 / alpha_kn * (1.0 - tie_rtol)
        hit = np.flatnonzero(ok | hopeless)
    else:
        hit = np.flatnonzero(ok)
    if hit.size == 0:
        return ThresholdResult(math.inf, float(c), float(alpha_kn), False, 0, 0)
    i = int(hit[0])
    return ThresholdResult(
        float(mags[i]),
        float(c),
        float(alpha_kn),
        bool(early_stop and not ok[i]),
        int(num_ge[i]),
        int(num_le_neg[i]),
    )


def knockoff_evalues(w, thr, p_dim=None, any_offset=False):
    """Knockoff e-values ``e_j = p * 1{w_j >= t} / (1 + #{w_k <= -t})``.

    The threshold must come from an offset ``c >= 1`` unless ``any_offset``
    is set (used for offset sweeps; see the README for the caveat).
    """
    w = _as_statistic(w).w
    p_dim = w.shape[0] if p_dim is None else int(p_dim)
    if thr.offset_c < 1 and not any_offset:
        raise OffsetTooSmall(f"offset c={thr.offset_c} < 1 voids the e-value budget")
    if not thr.finite:
        return EValueVector(np.zeros(w.shape[0]), p_dim)
    t = thr.t
    denom = 1.0 + np.count_nonzero(w <= -t)
    e = np.where(w >= t, p_dim / denom, 0.0)
    return EValueVector(e, p_dim)


def ebh(e, level, tie_rtol=TOL.tie_rtol):
    """e-BH: select ``{j : e_j >= p / (level * khat)}`` with the largest self-consistent ``khat``."""
    if isinstance(e, EValueVector):
        vals, p = e.e, e.p_dim
    else:
        vals = np.asarray(e, dtype=float)
        p = vals.shape[0]
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    order = np.sort(vals)[::-1]
    k = np.arange(1, order.size + 1)
    passing = np.flatnonzero(order * level * k >= p * (1.0 - tie_rtol))
    if passing.size == 0:
        return _empty_selection(level, "ebh")
    khat = int(passing[-1]) + 1
    cut = p / (level * khat) * (1.0 - tie_rtol)
    sel = np.flatnonzero(vals >= cut)
    return SelectionResult(sel.astype(np.int64), khat, float(level), "ebh")


def knockoff_filter(w, alpha, c=1.0):
    """Classic knockoff selection ``{j : w_j >= T}`` at level ``alpha``."""
    w = _as_statistic(w).w
    thr = knockoff_threshold(w, alpha, c=c, early_stop=False)
    if not thr.finite:
        return _empty_selection(alpha, "knockoff")
    sel = np.flatnonzero(w >= thr.t)
    return SelectionResult(sel.astype(np.int64), int(sel.size), float(alpha), "knockoff")


def average_evalues(evalues, keep_runs=False):
    """Mean of per-run e-values, summed in run order."""
    evalues = list(evalues)
    p_dim = evalues[0].p_dim
    total = np.zeros(len(evalues[0]))
    for ev in evalues:
        total += ev.e
    runs = np.vstack([ev.e for ev in evalues]) if keep_runs else None
    return EValueVector(total / len(evalues), p_dim, "averaged", runs)


def run_streams(master_seed, m, env=0):
    """Knockoff, statistic and auxiliary streams for run ``m`` (environment ``env``)."""
    base = as_stream(master_seed, m)
    return (
        base.spawn(KNOCKOFF_PURPOSE).spawn(env),
        base.spawn(STATISTIC_PURPOSE).spawn(env),
        base.spawn(AUX_PURPOSE),
    )


def map_runs(fn, items, workers=1):
    """Order-preserving map, optionally over worker processes."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class _MxRun:
    X: np.ndarray
    y: np.ndarray
    model: object
    statistic: object
    master_seed: object

    def __call__(self, m):
        ko_stream, stat_stream, _ = run_streams(self.master_seed, m)
        Xt = sample_knockoff_mx(self.model, self.X, ko_stream)
        return _as_statistic(self.statistic(self.X, Xt, self.y, stat_stream, run_index=m)).w


def knockoff_statistics_runs(X, y, model, statistic=None, M=1, master_seed=0, workers=1, first_run=1):
    """Statistics ``W^(m)`` for runs ``m = first_run, ..., first_run + M - 1`` as an ``M x p`` array."""
    statistic = LcdStatistic() if statistic is None else statistic
    task = _MxRun(np.asarray(X, dtype=float), np.asarray(y, dtype=float), model, statistic, master_seed)
    return np.vstack(map_runs(task, range(first_run, first_run + M), workers))


def evalues_from_statistics(W, alpha_kn, c=1.0, early_stop=True):
    """Per-run knockoff e-values for each row of ``W``."""
    W = np.atleast_2d(W)
    out = []
    for w in W:
        thr = knockoff_threshold(w, alpha_kn, c=c, early_stop=early_stop)
        out.append(knockoff_evalues(w, thr, W.shape[1]))
    return out


def aggregate_statistics(W, alpha_kn, alpha_ebh, c=1.0, early_stop=True, keep_runs=False):
    """Threshold, e-values, average and e-BH for precomputed statistics."""
    per_run = evalues_from_statistics(W, alpha_kn, c, early_stop)
    e_avg = average_evalues(per_run, keep_runs)
    sel = ebh(e_avg, alpha_ebh)
    return SelectionResult(sel.selected, sel.khat, sel.level, "kn-derand"), e_avg


def derandomized_knockoffs(
    X,
    y,
    model,
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
    """Derandomized model-X knockoffs with averaged e-values.

    Run ``m`` samples its knockoffs and statistic from streams keyed by
    ``(master_seed, m)``, so the output does not depend on ``workers``.
    Returns the e-BH selection and the averaged e-values.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if not (0 < alpha_kn < 1 and 0 < alpha_ebh < 1):
        raise ValueError("alpha_kn and alpha_ebh must lie in (0, 1)")
    W = knockoff_statistics_runs(X, y, model, statistic, M, master_seed, workers)
    return aggregate_statistics(W, alpha_kn, alpha_ebh, c, early_stop, keep_runs)


def sharpness_diagnostic(e, sel):
    """Ratio of each selected e-value to the e-BH cutoff ``p / (level * |S|)``.

    Ratios are at least one by construction; values near one mean the
    e-values carry little slack beyond what e-BH needs.
    """
    if len(sel) == 0:
        return {"ratios": [], "min_ratio": None, "max_ratio": None}
    vals = e.e if isinstance(e, EValueVector) else np.asarray(e, dtype=float)
    p = e.p_dim if isinstance(e, EValueVector) else vals.shape[0]
    cutoff = p / (sel.level * len(sel))
    ratios = vals[sel.selected] / cutoff
    return {
        "cutoff": float(cutoff),
        "ratios": [float(r) for r in ratios],
        "min_ratio": float(ratios.min()),
        "max_ratio": float(ratios.max()),
    }
