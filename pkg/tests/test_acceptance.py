"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The heavy simulations (criteria 3, 11) share one set of stored knockoff
statistics; procedures with different parameters are re-evaluated on them.
"""

import math
import time
from fractions import Fraction
import itertools

import numpy as np
import pytest

from eknockoffs.extensions import SideInfo, derandomized_mekf, empirical_kl, weighted_evalues
from eknockoffs.filter import (
    aggregate_statistics,
    derandomized_knockoffs,
    ebh,
    knockoff_evalues,
    knockoff_filter,
    knockoff_statistics_runs,
    knockoff_threshold,
    run_streams,
)
from eknockoffs.harness import (
    ExperimentConfig,
    ExperimentTruth,
    dataset_stream,
    evaluate,
    experiment_model,
    experiment_statistics,
    generate_dataset,
    score_selection,
    selection_variability,
)
from eknockoffs.knockoffs import FixedXDesign, GaussianModel, fixed_x_knockoff, sample_knockoff_mx
from eknockoffs.numerics import RngStream
from eknockoffs.stats import LcdStatistic, lcd_statistic

from conftest import ACCEPTANCE_LINES, ar1

ALPHAS = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]
DESK = ExperimentConfig(n=200, p=50, nonnull_count=10, spacing=4, amplitude=8.0, rho=0.5, M=10,
                        alpha_ebh=0.1, alpha_kn=0.05, replicates=50, reruns=5, master_seed=2024)


def report(number, ok, detail, started):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({time.perf_counter() - started:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def fuzz_w(rng):
    """Random statistic vector mixing ties, zeros and continuous values."""
    p = int(rng.integers(5, 201))
    kind = rng.integers(3)
    if kind == 0:
        w = rng.integers(-8, 9, p).astype(float)
    elif kind == 1:
        w = rng.standard_normal(p) + (rng.uniform(size=p) < rng.uniform()) * rng.exponential(3, p)
        w[rng.uniform(size=p) < 0.3] = 0.0
    else:
        w = np.round(rng.standard_normal(p) * 2, 1) + (rng.uniform(size=p) < 0.2) * 4
    return w


def brute_ebh(e, level):
    p = len(e)
    khat = max([k for k in range(1, p + 1) if np.sum(e >= p / (level * k)) >= k], default=0)
    return set(np.flatnonzero(e >= p / (level * khat)).tolist()) if khat else set()


@pytest.fixture(scope="module")
def desk_stats():
    return experiment_statistics(DESK)


def test_criterion_01_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(10_000):
        w = fuzz_w(rng)
        alpha = float(rng.choice(ALPHAS))
        thr = knockoff_threshold(w, alpha, c=1.0)
        if knockoff_filter(w, alpha).as_set() != ebh(knockoff_evalues(w, thr, len(w)), alpha).as_set():
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 10
    assert report(1, ok, f"knockoff filter == e-BH(knockoff e-values) on 10000 vectors, "
                         f"{mismatches} mismatches", t0)


def test_criterion_02_ebh_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    mismatches = 0
    for _ in range(1000):
        p = int(rng.integers(1, 13))
        level = float(rng.choice(ALPHAS))
        # mix of continuous values and values sitting exactly on e-BH cutoffs
        cut = p / (level * rng.integers(1, p + 1, p))
        e = np.where(rng.uniform(size=p) < 0.5, cut, rng.uniform(0, 2 * p / level, p))
        e[rng.uniform(size=p) < 0.2] = 0.0
        if ebh(e, level).as_set() != brute_ebh(e, level):
            mismatches += 1
    ok = mismatches == 0 and time.perf_counter() - t0 < 5
    assert report(2, ok, f"e-BH matches brute force on 1000 vectors, {mismatches} mismatches", t0)


def test_criterion_03_fdr_control(desk_stats):
    t0 = time.perf_counter()
    reports, _, _ = evaluate(desk_stats)
    runs = DESK.replicates * DESK.reruns
    bound = 0.1 + 3 * math.sqrt(0.1 * 0.9 / runs)
    der, org = reports["derandomized"], reports["original"]
    ok = der.fdr <= bound and org.fdr <= bound and der.fdr <= org.fdr
    assert report(3, ok, f"FDR derandomized {der.fdr:.4f} (power {der.power:.3f}), original {org.fdr:.4f} "
                         f"(power {org.power:.3f}), bound {bound:.4f}, {runs} runs", t0)


def ebh_margin(e, level):
    """Smallest distance of the sorted e-values from the e-BH boundary (and of every
    e-value from the final cutoff); a perturbation below this cannot change the set."""
    p = len(e)
    order = np.sort(e)[::-1]
    k = np.arange(1, p + 1)
    margin = float(np.min(np.abs(order - p / (level * k))))
    khat = ebh(e, level).khat
    if khat:
        margin = min(margin, float(np.min(np.abs(e - p / (level * khat)))))
    return margin


def test_criterion_04_derandomization():
    t0 = time.perf_counter()
    cfg = DESK
    model = experiment_model(cfg)
    X, y, _ = generate_dataset(cfg, dataset_stream(cfg, 0), model)
    M = 500
    W1 = knockoff_statistics_runs(X, y, model, LcdStatistic(), M, RngStream(cfg.master_seed, 40))
    W2 = knockoff_statistics_runs(X, y, model, LcdStatistic(), M, RngStream(cfg.master_seed, 41))
    band = 5 * cfg.p / math.sqrt(M)
    ok, parts = True, []
    for alpha_kn in (0.05, 0.1):
        s1, e1 = aggregate_statistics(W1, alpha_kn, 0.1)
        s2, _ = aggregate_statistics(W2, alpha_kn, 0.1)
        delta = ebh_margin(e1.e, 0.1)
        diff = sorted(s1.as_set() ^ s2.as_set())
        if delta > band:
            ok &= not diff
            parts.append(f"alpha_kn={alpha_kn}: margin {delta:.2f} > {band:.2f}, sets equal={not diff}")
        else:
            parts.append(f"alpha_kn={alpha_kn}: margin {delta:.2f} <= {band:.2f} (not asserted), "
                         f"|S1|={len(s1)} |S2|={len(s2)} symmetric difference {diff}")
    ok &= time.perf_counter() - t0 < 300
    assert report(4, ok, "; ".join(parts), t0)


def test_criterion_05_early_stop_dominance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    violations = 0
    for _ in range(10_000):
        w = fuzz_w(rng)
        alpha = float(rng.choice(ALPHAS))
        e_stop = knockoff_evalues(w, knockoff_threshold(w, alpha, early_stop=True)).e
        e_plain = knockoff_evalues(w, knockoff_threshold(w, alpha, early_stop=False)).e
        violations += int(np.any(e_stop < e_plain))
    ok = violations == 0 and time.perf_counter() - t0 < 10
    assert report(5, ok, f"early-stop e-values dominate on 10000 vectors, {violations} violations", t0)


def test_criterion_06_swap_antisymmetry():
    t0 = time.perf_counter()
    n, p = 100, 20
    model = GaussianModel.from_cov(ar1(p, 0.5))
    chol = np.linalg.cholesky(model.cov)
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(600 + i)
        X = rng.standard_normal((n, p)) @ chol.T
        beta = np.zeros(p)
        beta[rng.choice(p, 5, replace=False)] = rng.choice([-1, 1], 5) * rng.uniform(0.3, 1.0, 5)
        y = X @ beta + rng.standard_normal(n)
        Xt = sample_knockoff_mx(model, X, RngStream(i))
        swap = rng.choice(p, int(rng.integers(1, p + 1)), replace=False)
        Xs, Xts = X.copy(), Xt.copy()
        Xs[:, swap], Xts[:, swap] = Xt[:, swap], X[:, swap]
        w = lcd_statistic(X, Xt, y, stream=RngStream(10_000 + i)).w
        ws = lcd_statistic(Xs, Xts, y, stream=RngStream(10_000 + i)).w
        sign = np.ones(p)
        sign[swap] = -1
        worst = max(worst, float(np.max(np.abs(ws - sign * w))))
    ok = worst <= 1e-8 and time.perf_counter() - t0 < 120
    assert report(6, ok, f"LCD swap antisymmetry on 100 problems, max deviation {worst:.2e}", t0)


def test_criterion_07_fixed_x_gram():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        X = np.random.default_rng(700 + i).standard_normal((60, 10))
        design = FixedXDesign.from_matrix(X)
        Xt = fixed_x_knockoff(design, RngStream(i))
        G = X.T @ X
        worst = max(worst, float(np.max(np.abs(Xt.T @ Xt - G))),
                    float(np.max(np.abs(X.T @ Xt - (G - np.diag(design.s))))))
    ok = worst <= 1e-8 and time.perf_counter() - t0 < 30
    assert report(7, ok, f"fixed-X Gram identities on 100 designs, max deviation {worst:.2e}", t0)


def test_criterion_08_evalue_budget():
    t0 = time.perf_counter()
    n, p, runs = 100, 20, 2000
    model = GaussianModel.from_cov(ar1(p, 0.3))
    chol = np.linalg.cholesky(model.cov)
    stat = LcdStatistic()
    totals = np.empty(runs)
    for r in range(runs):
        data = RngStream(800, 0, (r,))
        X = data.standard_normal((n, p)) @ chol.T
        y = data.standard_normal(n)  # response independent of every feature
        ko, st, _ = run_streams(RngStream(800, 1), r + 1)
        w = stat(X, sample_knockoff_mx(model, X, ko), y, st).w
        totals[r] = knockoff_evalues(w, knockoff_threshold(w, 0.05, early_stop=True)).e.sum()
    mean, se = totals.mean(), totals.std(ddof=1) / math.sqrt(runs)
    ok = mean <= p + 3 * se and time.perf_counter() - t0 < 120
    assert report(8, ok, f"null-only mean sum of e-values {mean:.3f} <= p + 3SE = {p + 3 * se:.3f} "
                         f"over {runs} runs", t0)


def test_criterion_09_reductions():
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    weighted_ok = True
    for _ in range(2000):
        w = fuzz_w(rng)
        thr = knockoff_threshold(w, float(rng.choice(ALPHAS)), early_stop=True)
        weighted_ok &= np.array_equal(weighted_evalues(w, thr, SideInfo(np.ones(len(w)))).e,
                                      knockoff_evalues(w, thr).e)
    classic_ok = mekf_ok = True
    stat = LcdStatistic()
    for i in range(5):
        cfg = DESK.replace(master_seed=900 + i)
        model = experiment_model(cfg)
        X, y, _ = generate_dataset(cfg, dataset_stream(cfg, 0), model)
        sel, _ = derandomized_knockoffs(X, y, model, stat, 0.1, 0.1, M=1, master_seed=i, early_stop=False)
        ko, st, _ = run_streams(i, 1)
        w = stat(X, sample_knockoff_mx(model, X, ko), y, st).w
        classic_ok &= sel.as_set() == knockoff_filter(w, 0.1).as_set()
        s1, e1 = derandomized_mekf([(X, y)], [model], stat, "cst", None, 0.1, 0.1, M=3, master_seed=i)
        s2, e2 = derandomized_knockoffs(X, y, model, stat, 0.1, 0.1, M=3, master_seed=i)
        mekf_ok &= np.array_equal(e1.e, e2.e) and np.array_equal(s1.selected, s2.selected)
    ok = bool(weighted_ok and classic_ok and mekf_ok)
    assert report(9, ok, f"weighted u=1 bit-equal {weighted_ok}, M=1 classic {classic_ok}, "
                         f"E=1 MEKF-cst {mekf_ok}", t0)


def test_criterion_10_metrics_oracle():
    t0 = time.perf_counter()
    p = 3
    truth = ExperimentTruth(np.array([1.0, 0.0, 0.0]))
    subsets = [frozenset(c) for r in range(p + 1) for c in itertools.combinations(range(p), r)]
    bad = 0
    for table in itertools.product(subsets, repeat=4):
        grid = [[table[0], table[1]], [table[2], table[3]]]
        runs = list(table)
        # exact rational evaluation of every formula
        for s in runs:
            want = (Fraction(len(s & {0}), 1), Fraction(len(s - {0}), max(len(s), 1)))
            if score_selection(s, truth) != (float(want[0]), float(want[1])):
                bad += 1
        p_hat = [Fraction(sum(j in s for s in runs), 4) for j in range(p)]
        s_hat = Fraction(sum(len(s) for s in runs), 4)
        den = p * (s_hat / p) * (1 - s_hat / p)
        marginal = sum(q * (1 - q) for q in p_hat) / den if den else Fraction(0)
        num = den_c = Fraction(0)
        for row in grid:
            q_d = [Fraction(sum(j in s for s in row), 2) for j in range(p)]
            s_d = Fraction(sum(len(s) for s in row), 2)
            num += sum(q * (1 - q) for q in q_d)
            den_c += p * (s_d / p) * (1 - s_d / p)
        conditional = num / den_c if den_c else Fraction(0)
        got = selection_variability(grid, p)
        if got != (float(marginal), float(conditional)):
            bad += 1
    ok = bad == 0
    assert report(10, ok, f"power/FDP/variability vs exact enumeration over {len(subsets) ** 4} toy tables "
                          f"(D=K=2, p=3), {bad} mismatches", t0)


def test_criterion_11_parameter_guidance(desk_stats):
    t0 = time.perf_counter()
    half, _, _ = evaluate(desk_stats, alpha_kn=0.05)
    full, _, _ = evaluate(desk_stats, alpha_kn=0.1)
    a, b = half["derandomized"], full["derandomized"]
    band = 3 * math.sqrt(a.power_se ** 2 + b.power_se ** 2)
    ok = a.power >= b.power - band
    assert report(11, ok, f"power at alpha_kn=0.05: {a.power:.3f}, at alpha_kn=0.1: {b.power:.3f}, "
                          f"band {band:.3f}", t0)


def test_criterion_12_robustness():
    t0 = time.perf_counter()
    cfg = DESK.replace(master_seed=1200)
    model = experiment_model(cfg)
    used = GaussianModel.from_cov(model.cov * 1.05)
    stat = LcdStatistic()
    D = 50
    eps = 0.0
    fdp = {0.05: [], 0.1: []}
    for d in range(D):
        X, y, truth = generate_dataset(cfg, dataset_stream(cfg, d), model)
        seed = RngStream(cfg.master_seed, 12, (d,))
        Xt_runs, rows = [], []
        for m in range(1, cfg.M + 1):
            ko, st, _ = run_streams(seed, m)
            Xt = sample_knockoff_mx(used, X, ko)
            Xt_runs.append(Xt)
            rows.append(stat(X, Xt, y, st).w)
        eps = max(eps, float(empirical_kl(model, used, X, Xt_runs).kl_max.max()))
        for alpha_kn in fdp:
            sel, _ = aggregate_statistics(np.vstack(rows), alpha_kn, 0.1)
            fdp[alpha_kn].append(score_selection(sel, truth)[1])
    ok, parts = True, []
    for alpha_kn, values in fdp.items():
        values = np.array(values)
        fdr, se = values.mean(), values.std(ddof=1) / math.sqrt(D)
        bound = math.exp(eps) * 0.1 + 3 * se
        ok &= fdr <= bound
        parts.append(f"alpha_kn={alpha_kn}: FDR {fdr:.4f} <= {bound:.4f}")
    ok &= time.perf_counter() - t0 < 600
    assert report(12, ok, f"covariance x1.05, epsilon = {eps:.3f}; " + "; ".join(parts), t0)
