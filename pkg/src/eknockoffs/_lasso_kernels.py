"""Compiled proximal-gradient kernels for the L1-penalized fits.

All reductions run in a fixed order that does not depend on column
position, so two identical design columns always receive bit-identical
coefficients, and permuting columns only perturbs results at rounding level.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def centered_gram(X, y, rows):
    """Gram matrix, cross-product and sums of squares of the row subset, centered."""
    n = rows.shape[0]
    q = X.shape[1]
    mean = np.zeros(q)
    ybar = 0.0
    for r in range(n):
        i = rows[r]
        ybar += y[i]
        for j in range(q):
            mean[j] += X[i, j]
    ybar /= n
    for j in range(q):
        mean[j] /= n
    G = np.zeros((q, q))
    b = np.zeros(q)
    yy = 0.0
    xi = np.empty(q)
    for r in range(n):
        i = rows[r]
        yi = y[i] - ybar
        yy += yi * yi
        for j in range(q):
            xi[j] = X[i, j] - mean[j]
        for j in range(q):
            v = xi[j]
            b[j] += v * yi
            for k in range(q):
                G[j, k] += v * xi[k]
    return G, b, yy, mean, ybar


@numba.njit(cache=True)
def _sparse_gram_matvec(G, beta, out):
    q = beta.shape[0]
    for j in range(q):
        out[j] = 0.0
    for k in range(q):
        bk = beta[k]
        if bk != 0.0:
            for j in range(q):
                out[j] += bk * G[k, j]


@numba.njit(cache=True)
def _soft(v, t):
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


@numba.njit(cache=True)
def _gauss_obj(Gbeta, beta, b, yy, n, lam):
    quad = 0.0
    l1 = 0.0
    for j in range(beta.shape[0]):
        quad += beta[j] * (0.5 * Gbeta[j] - b[j])
        l1 += abs(beta[j])
    return (0.5 * yy + quad) / n + lam * l1


@numba.njit(cache=True)
def gaussian_path(G, b, yy, n, lambdas, step, rtol, max_iter, beta0):
    """FISTA with monotone restarts along a decreasing lambda path (warm starts).

    Returns the coefficient matrix (one row per lambda), the iteration counts
    and a flag per lambda telling whether the objective criterion was met.
    """
    q = b.shape[0]
    L = lambdas.shape[0]
    out = np.zeros((L, q))
    iters = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    beta = beta0.copy()
    Gb = np.empty(q)
    _sparse_gram_matvec(G, beta, Gb)
    beta_prev = beta.copy()
    Gb_prev = Gb.copy()
    beta_new = np.empty(q)
    Gb_new = np.empty(q)
    for li in range(L):
        lam = lambdas[li]
        obj = _gauss_obj(Gb, beta, b, yy, n, lam)
        t = 1.0
        for j in range(q):
            beta_prev[j] = beta[j]
            Gb_prev[j] = Gb[j]
        it = 0
        while it < max_iter:
            it += 1
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_new
            for j in range(q):
                z = beta[j] + mom * (beta[j] - beta_prev[j])
                gz = Gb[j] + mom * (Gb[j] - Gb_prev[j])
                beta_new[j] = _soft(z - step * (gz - b[j]) / n, step * lam)
            _sparse_gram_matvec(G, beta_new, Gb_new)
            obj_new = _gauss_obj(Gb_new, beta_new, b, yy, n, lam)
            if obj_new > obj:
                if t == 1.0:
                    # a plain proximal step cannot descend further
                    conv[li] = True
                    break
                # restart: drop momentum and retry from the current iterate
                t = 1.0
                for j in range(q):
                    beta_prev[j] = beta[j]
                    Gb_prev[j] = Gb[j]
                continue
            for j in range(q):
                beta_prev[j] = beta[j]
                Gb_prev[j] = Gb[j]
                beta[j] = beta_new[j]
                Gb[j] = Gb_new[j]
            t = t_new
            done = obj - obj_new <= rtol * max(abs(obj_new), 1e-300)
            obj = obj_new
            if done:
                conv[li] = True
                break
        iters[li] = it
        for j in range(q):
            out[li, j] = beta[j]
    return out, iters, conv


@numba.njit(cache=True)
def _sparse_matvec_t(XT, beta, out):
    q = XT.shape[0]
    n = XT.shape[1]
    for i in range(n):
        out[i] = 0.0
    for k in range(q):
        bk = beta[k]
        if bk != 0.0:
            for i in range(n):
                out[i] += bk * XT[k, i]


@numba.njit(cache=True)
def _log1pexp(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@numba.njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _logit_obj(Xb, b0, beta, y, lam):
    n = y.shape[0]
    s = 0.0
    for i in range(n):
        eta = b0 + Xb[i]
        s += _log1pexp(eta) - y[i] * eta
    l1 = 0.0
    for j in range(beta.shape[0]):
        l1 += abs(beta[j])
    return s / n + lam * l1


@numba.njit(cache=True)
def logistic_path(XcT, y, lambdas, step, rtol, max_iter, beta0, b00):
    """Same scheme as ``gaussian_path`` for the penalized logistic likelihood.

    ``XcT`` is the transposed design with centered columns; the intercept is
    unpenalized and updated with the same step.
    """
    q = XcT.shape[0]
    n = XcT.shape[1]
    L = lambdas.shape[0]
    out = np.zeros((L, q))
    out0 = np.zeros(L)
    iters = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    beta = beta0.copy()
    b0 = b00
    Xb = np.empty(n)
    _sparse_matvec_t(XcT, beta, Xb)
    beta_prev = beta.copy()
    b0_prev = b0
    Xb_prev = Xb.copy()
    beta_new = np.empty(q)
    Xb_new = np.empty(n)
    resid = np.empty(n)
    for li in range(L):
        lam = lambdas[li]
        obj = _logit_obj(Xb, b0, beta, y, lam)
        t = 1.0
        for j in range(q):
            beta_prev[j] = beta[j]
        for i in range(n):
            Xb_prev[i] = Xb[i]
        b0_prev = b0
        it = 0
        while it < max_iter:
            it += 1
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_new
            z0 = b0 + mom * (b0 - b0_prev)
            g0 = 0.0
            for i in range(n):
                xz = Xb[i] + mom * (Xb[i] - Xb_prev[i])
                resid[i] = _sigmoid(z0 + xz) - y[i]
                g0 += resid[i]
            g0 /= n
            for j in range(q):
                g = 0.0
                for i in range(n):
                    g += XcT[j, i] * resid[i]
                z = beta[j] + mom * (beta[j] - beta_prev[j])
                beta_new[j] = _soft(z - step * g / n, step * lam)
            b0_new = z0 - step * g0
            _sparse_matvec_t(XcT, beta_new, Xb_new)
            obj_new = _logit_obj(Xb_new, b0_new, beta_new, y, lam)
            if obj_new > obj:
                if t == 1.0:
                    conv[li] = True
                    break
                t = 1.0
                for j in range(q):
                    beta_prev[j] = beta[j]
                for i in range(n):
                    Xb_prev[i] = Xb[i]
                b0_prev = b0
                continue
            for j in range(q):
                beta_prev[j] = beta[j]
                beta[j] = beta_new[j]
            for i in range(n):
                Xb_prev[i] = Xb[i]
                Xb[i] = Xb_new[i]
            b0_prev = b0
            b0 = b0_new
            t = t_new
            done = obj - obj_new <= rtol * max(abs(obj_new), 1e-300)
            obj = obj_new
            if done:
                conv[li] = True
                break
        iters[li] = it
        out0[li] = b0
        for j in range(q):
            out[li, j] = beta[j]
    return out, out0, iters, conv
