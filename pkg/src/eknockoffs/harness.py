"""Simulation designs, ground truth and evaluation metrics for desk-scale experiments."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigInvalid
from .filter import (
    SelectionResult,
    aggregate_statistics,
    knockoff_filter,
    map_runs,
    run_streams,
)
from .knockoffs import GaussianModel, sample_knockoff_mx
from .numerics import RngStream
from .stats import LcdStatistic

# top-level stream ids under the experiment seed
BETA_STREAM = 0
DATA_STREAM = 1
DERAND_STREAM = 2
ORIGINAL_STREAM = 3

MODEL_FAMILIES = ("gaussian_linear", "logistic")
METHODS = ("derandomized", "original")


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation design plus the procedure parameters.

    The ``nonnull_count`` signals sit at 0-based indices ``z, 2z+1, ...``
    (every ``z+1``-th feature) with alternating signs.
    """

    n: int = 200
    p: int = 50
    model_family: str = "gaussian_linear"
    amplitude: float = 8.0
    spacing: int = 4
    nonnull_count: int = 10
    covariance: str = "ar1"
    rho: float = 0.5
    alpha_kn: float = 0.05
    alpha_ebh: float = 0.1
    c: float = 1.0
    early_stop: bool = True
    M: int = 10
    replicates: int = 50
    reruns: int = 5
    folds: int = 10
    grid: int = 100
    master_seed: int = 0
    methods: tuple = METHODS
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        self.validate()

    def validate(self):
        for name in ("n", "p", "nonnull_count", "M", "replicates", "reruns", "folds", "grid"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigInvalid(f"{name}: expected a positive integer, got {v!r}")
        if not isinstance(self.spacing, (int, np.integer)) or self.spacing < 0:
            raise ConfigInvalid(f"spacing: expected a nonnegative integer, got {self.spacing!r}")
        if self.nonnull_count * (self.spacing + 1) > self.p:
            raise ConfigInvalid("nonnull_count: nonnull_count * (spacing + 1) must not exceed p")
        if self.model_family not in MODEL_FAMILIES:
            raise ConfigInvalid(f"model_family: must be one of {MODEL_FAMILIES}")
        if self.covariance != "ar1":
            raise ConfigInvalid("covariance: only 'ar1' is supported")
        if not -1 < self.rho < 1:
            raise ConfigInvalid("rho: must lie in (-1, 1)")
        for name in ("alpha_kn", "alpha_ebh"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigInvalid(f"{name}: must lie in (0, 1)")
        if self.c < 0:
            raise ConfigInvalid("c: must be nonnegative")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigInvalid(f"methods: choose from {METHODS}")
        if not isinstance(self.master_seed, (int, np.integer)) or self.master_seed < 0:
            raise ConfigInvalid("master_seed: expected a nonnegative integer")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


@dataclass(frozen=True)
class ExperimentTruth:
    beta: np.ndarray
    nonnull_set: frozenset = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "nonnull_set", frozenset(np.flatnonzero(beta != 0).tolist()))


def ar1_covariance(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def signal_positions(cfg):
    return np.arange(1, cfg.nonnull_count + 1) * (cfg.spacing + 1) - 1


def experiment_beta(cfg):
    """Coefficients shared by every dataset of the experiment (seeded by ``master_seed`` only)."""
    stream = RngStream(cfg.master_seed, BETA_STREAM)
    bar = cfg.amplitude + stream.standard_normal(cfg.nonnull_count)
    signs = np.where(np.arange(cfg.nonnull_count) % 2 == 0, 1.0, -1.0)
    beta = np.zeros(cfg.p)
    beta[signal_positions(cfg)] = signs * bar / math.sqrt(cfg.n)
    return beta


def experiment_model(cfg):
    return GaussianModel.from_cov(ar1_covariance(cfg.p, cfg.rho))


def generate_dataset(cfg, stream, model=None):
    """Draw ``(X, y, truth)``; ``X`` rows are ``N(0, AR1(rho))`` and ``y`` follows ``model_family``."""
    model = experiment_model(cfg) if model is None else model
    beta = experiment_beta(cfg)
    chol = np.linalg.cholesky(model.cov)
    X = stream.standard_normal((cfg.n, cfg.p)) @ chol.T
    eta = X @ beta
    if cfg.model_family == "gaussian_linear":
        y = eta + stream.standard_normal(cfg.n)
    else:
        prob = 1.0 / (1.0 + np.exp(-eta))
        y = (stream.uniform(cfg.n) < prob).astype(float)
    return X, y, ExperimentTruth(beta)


def dataset_stream(cfg, d):
    return RngStream(cfg.master_seed, DATA_STREAM, (d,))


def score_selection(sel, truth):
    """``(|S & H1| / |H1|, |S & H0| / max(|S|, 1))``."""
    S = sel.as_set() if isinstance(sel, SelectionResult) else set(int(j) for j in sel)
    h1 = truth.nonnull_set if isinstance(truth, ExperimentTruth) else frozenset(truth)
    true_pos = len(S & h1)
    power = true_pos / len(h1) if h1 else 0.0
    fdp = (len(S) - true_pos) / max(len(S), 1)
    return float(power), float(fdp)


def _indicator(selections, p):
    """0/1 array of shape (D, K, p) from nested selection lists."""
    D = len(selections)
    K = len(selections[0])
    out = np.zeros((D, K, p))
    for d, row in enumerate(selections):
        if len(row) != K:
            raise ValueError("every replicate needs the same number of reruns")
        for k, sel in enumerate(row):
            idx = sel.selected if isinstance(sel, SelectionResult) else list(sel)
            out[d, k, list(idx)] = 1.0
    return out


def selection_frequencies(selections, p):
    """Marginal frequencies ``p_j`` and per-replicate frequencies ``p_{j,d}``."""
    ind = _indicator(selections, p)
    return ind.mean(axis=(0, 1)), ind.mean(axis=1)


def selection_variability(selections, p):
    """Marginal and conditional selection variability of ``selections[d][k]``.

    Both are normalized by the variability of a procedure that picks the
    same number of features uniformly at random; a zero denominator gives 0.
    Computed from integer selection counts so that each value is a single
    correctly rounded ratio.
    """
    counts = _indicator(selections, p).astype(np.int64)  # D x K x p
    D, K, _ = counts.shape
    N = D * K
    c = counts.sum(axis=(0, 1))
    S = int(counts.sum())
    # sum_j p_j (1 - p_j) / [p (s/p)(1 - s/p)] with p_j = c_j / N and s = S / N
    den = S * (p * N - S)
    marginal = p * int(np.sum(c * (N - c))) / den if den > 0 else 0.0
    c_d = counts.sum(axis=1)  # D x p
    S_d = counts.sum(axis=(1, 2))
    den = int(np.sum(S_d * (p * K - S_d)))
    conditional = p * int(np.sum(c_d * (K - c_d))) / den if den > 0 else 0.0
    return float(marginal), float(conditional)


def baseline_frequency(selections, p):
    """Fraction of runs selecting each feature."""
    selections = list(selections)
    if not selections:
        raise ValueError("need at least one run")
    return _indicator([selections], p)[0].mean(axis=0)


@dataclass
class MetricsReport:
    method: str
    power: float
    fdr: float
    power_se: float
    fdr_se: float
    marginal_variability: float
    conditional_variability: float
    mean_size: float
    freq: np.ndarray = field(repr=False)
    freq_by_replicate: np.ndarray = field(repr=False)

    def summary(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("freq", "freq_by_replicate")}
        d["freq"] = [float(v) for v in self.freq]
        return d


@dataclass
class ExperimentStatistics:
    """Raw per-(d, k) statistics, reusable across procedure parameters."""

    cfg: ExperimentConfig
    truths: list
    derand_W: list  # [d][k] -> M x p array
    original_w: list  # [d][k] -> p vector


@dataclass(frozen=True)
class _ReplicateTask:
    cfg: ExperimentConfig

    def __call__(self, dk):
        d, k = dk
        cfg = self.cfg
        model = experiment_model(cfg)
        X, y, truth = generate_dataset(cfg, dataset_stream(cfg, d), model)
        stat = LcdStatistic("gaussian" if cfg.model_family == "gaussian_linear" else "logistic",
                            cfg.folds, cfg.grid)
        W = None
        if "derandomized" in cfg.methods:
            seed = RngStream(cfg.master_seed, DERAND_STREAM, (d, k))
            rows = []
            for m in range(1, cfg.M + 1):
                ko, st, _ = run_streams(seed, m)
                rows.append(stat(X, sample_knockoff_mx(model, X, ko), y, st, run_index=m).w)
            W = np.vstack(rows)
        w = None
        if "original" in cfg.methods:
            seed = RngStream(cfg.master_seed, ORIGINAL_STREAM, (d, k))
            ko, st, _ = run_streams(seed, 1)
            w = stat(X, sample_knockoff_mx(model, X, ko), y, st).w
        return truth, W, w


def experiment_statistics(cfg, workers=1):
    """Compute all knockoff statistics of the ``replicates x reruns`` grid."""
    grid = [(d, k) for d in range(cfg.replicates) for k in range(cfg.reruns)]
    out = map_runs(_ReplicateTask(cfg), grid, workers)
    truths, W, w = [], [], []
    for d in range(cfg.replicates):
        row = out[d * cfg.reruns:(d + 1) * cfg.reruns]
        truths.append(row[0][0])
        W.append([r[1] for r in row])
        w.append([r[2] for r in row])
    return ExperimentStatistics(cfg, truths, W, w)


def _report(method, selections, truths, p):
    D = len(selections)
    power = np.zeros((D, len(selections[0])))
    fdp = np.zeros_like(power)
    for d, row in enumerate(selections):
        for k, sel in enumerate(row):
            power[d, k], fdp[d, k] = score_selection(sel, truths[d])
    per_d_power = power.mean(axis=1)
    per_d_fdp = fdp.mean(axis=1)
    se = (lambda a: float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0)
    marginal, conditional = selection_variability(selections, p)
    freq, freq_d = selection_frequencies(selections, p)
    sizes = [len(sel) for row in selections for sel in row]
    rep = MetricsReport(method, float(power.mean()), float(fdp.mean()), se(per_d_power), se(per_d_fdp),
                        marginal, conditional, float(np.mean(sizes)), freq, freq_d)
    return rep, power, fdp


def evaluate(stats, alpha_kn=None, alpha_ebh=None, M=None, c=None, early_stop=None):
    """Selections and metrics from stored statistics.

    Any parameter left as ``None`` comes from the config.  ``M`` may be
    smaller than the number of stored runs, in which case the first ``M``
    runs are used.
    """
    cfg = stats.cfg
    alpha_kn = cfg.alpha_kn if alpha_kn is None else alpha_kn
    alpha_ebh = cfg.alpha_ebh if alpha_ebh is None else alpha_ebh
    M = cfg.M if M is None else M
    c = cfg.c if c is None else c
    early_stop = cfg.early_stop if early_stop is None else early_stop
    reports, rows, selections = {}, [], {}
    for method in cfg.methods:
        sels = []
        for d in range(cfg.replicates):
            row = []
            for k in range(cfg.reruns):
                if method == "derandomized":
                    sel, _ = aggregate_statistics(stats.derand_W[d][k][:M], alpha_kn, alpha_ebh, c, early_stop)
                else:
                    sel = knockoff_filter(stats.original_w[d][k], alpha_ebh, c)
                row.append(sel)
            sels.append(row)
        rep, power, fdp = _report(method, sels, stats.truths, cfg.p)
        reports[method] = rep
        selections[method] = sels
        for d in range(cfg.replicates):
            for k in range(cfg.reruns):
                rows.append({
                    "d": d, "k": k, "method": method, "size": len(sels[d][k]),
                    "fdp": float(fdp[d, k]), "power": float(power[d, k]),
                    "selected": " ".join(str(j) for j in sels[d][k].selected),
                })
    return reports, rows, selections


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    reports: dict
    rows: list
    selections: dict

    def summary(self):
        return {
            "config": self.cfg.to_dict(),
            "seed": self.cfg.master_seed,
            "error_bars": "plus/minus one standard error over dataset draws",
            "metrics": {m: r.summary() for m, r in self.reports.items()},
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "runs.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, ["d", "k", "method", "size", "fdp", "power", "selected"])
            writer.writeheader()
            writer.writerows(self.rows)
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_experiment(cfg, workers=1):
    """Run the ``replicates x reruns`` grid for every configured method.

    Output depends only on ``cfg`` (including its seed), not on ``workers``.
    """
    stats = experiment_statistics(cfg, workers)
    reports, rows, selections = evaluate(stats)
    return ExperimentResult(cfg, reports, rows, selections)
