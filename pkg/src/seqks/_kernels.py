"""Compiled whole-stream kernels.

Each kernel walks a stream once and, at every step ``t``, scans the windows
``s = t, t-1, ..., max(t-L+1, 0)`` (0-based here, 1-based in the public API)
while accumulating per-bin sums, so the cost per step is O(L * D).

The binned KS kernel performs exactly the same floating-point operations as
the streaming numpy implementation in :mod:`seqks.ks_core`; the two agree
bit for bit.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def ks_window_path(X, F0, L):
    T, D = X.shape
    W = np.zeros(T)
    start = np.zeros(T, np.int64)
    jbin = np.zeros(T, np.int64)
    skipped = np.ones(T, np.bool_)
    S = np.zeros(D, np.int64)
    for t in range(T):
        S[:] = 0
        tot = 0
        best = 0.0
        for r in range(min(L, t + 1)):
            k = t - r
            for j in range(D):
                S[j] += X[k, j]
                tot += X[k, j]
            if tot == 0:
                continue
            c = 0
            m = -1.0
            jm = 0
            for j in range(D):
                c += S[j]
                g = abs(F0[j] - c / tot)
                if g > m:
                    m = g
                    jm = j
            v = m * np.sqrt(tot)
            # older windows come later; >= lets the smallest s win ties
            if skipped[t] or v >= best:
                best = v
                start[t] = k + 1
                jbin[t] = jm + 1
                skipped[t] = False
        W[t] = best
    return W, start, jbin, skipped


@njit(cache=True)
def sorted_sup_gap(u, n):
    # u[:n] sorted values of F0 at the samples
    m = 0.0
    for i in range(n):
        hi = (i + 1) / n - u[i]
        lo = u[i] - i / n
        if hi > m:
            m = hi
        if lo > m:
            m = lo
    return m


@njit(cache=True, fastmath=True)
def _window_gaps(pool, lab, npool, lo, m, inv, C, mx):
    # One sweep for all m windows; window j holds labels >= lo + j. Points
    # outside a window still give valid values of its sup (the empirical CDF
    # is flat there), so every window scans the whole pool branch-free.
    for j in range(m):
        C[j] = 0.0
        mx[j] = 0.0
    for i in range(npool):
        p = pool[i]
        k = lab[i] - lo
        for j in range(m):
            c = C[j]
            gap_lo = p - c * inv[j]
            c += 1.0 if j <= k else 0.0
            gap_hi = c * inv[j] - p
            C[j] = c
            mx[j] = max(mx[j], max(gap_lo, gap_hi))


@njit(cache=True)
def raw_ks_window_path(u, offsets, L, first=0):
    """Windowed KS over raw samples; ``u`` holds F0(y), sorted within each step.

    Steps before ``first`` are left at zero and flagged skipped.
    """
    T = offsets.shape[0] - 1
    W = np.zeros(T)
    start = np.zeros(T, np.int64)
    skipped = np.ones(T, np.bool_)
    maxn = 0
    for t in range(T):
        n = offsets[t + 1] - offsets[max(0, t - L + 1)]
        if n > maxn:
            maxn = n
    pool = np.empty(maxn)
    lab = np.empty(maxn, np.int64)
    tmp = np.empty(maxn)
    tlab = np.empty(maxn, np.int64)
    inv = np.empty(L)
    C = np.empty(L)
    mx = np.empty(L)
    npool = 0
    for t in range(T):
        lo = max(0, t - L + 1)
        # drop the step that left the window, then merge in step t
        k = 0
        for i in range(npool):
            if lab[i] >= lo:
                tmp[k] = pool[i]
                tlab[k] = lab[i]
                k += 1
        seg = u[offsets[t]:offsets[t + 1]]
        i = 0
        j = 0
        npool = 0
        while i < k or j < seg.shape[0]:
            if j >= seg.shape[0] or (i < k and tmp[i] <= seg[j]):
                pool[npool] = tmp[i]
                lab[npool] = tlab[i]
                i += 1
            else:
                pool[npool] = seg[j]
                lab[npool] = t
                j += 1
            npool += 1
        if t < first:
            continue
        m = t - lo + 1
        for j in range(m):
            n = offsets[t + 1] - offsets[lo + j]
            inv[j] = 1.0 / n if n > 0 else 0.0
        _window_gaps(pool, lab, npool, lo, m, inv, C, mx)
        best = 0.0
        for j in range(m):
            n = offsets[t + 1] - offsets[lo + j]
            if n == 0:
                continue
            v = mx[j] * np.sqrt(n)
            # ascending s with a strict comparison: the smallest s wins ties
            if skipped[t] or v > best:
                best = v
                start[t] = lo + j + 1
                skipped[t] = False
        W[t] = best
    return W, start, skipped


@njit(cache=True)
def ef_poisson_path(X, row_dot, lam_total, lfact, L):
    """Log of the summed gamma-Poisson Bayes factors over windows.

    ``row_dot[k]`` is sum_j x_kj log(lambda0_j); ``lfact[n]`` is log(n!).
    """
    T, D = X.shape
    out = np.zeros(T)
    start = np.zeros(T, np.int64)
    S = np.zeros(D, np.int64)
    logbf = np.empty(L)
    for t in range(T):
        S[:] = 0
        sum_s = 0
        sum_a = 0.0
        nw = min(L, t + 1)
        best = -np.inf
        for r in range(nw):
            k = t - r
            lf = 0.0
            for j in range(D):
                S[j] += X[k, j]
                sum_s += X[k, j]
            for j in range(D):
                lf += lfact[S[j]]
            sum_a += row_dot[k]
            m = r + 1
            v = lf - (sum_s + D) * math.log(m + 1.0) - sum_a + m * lam_total
            logbf[r] = v
            if v >= best:
                best = v
                start[t] = k + 1
        acc = 0.0
        for r in range(nw):
            acc += math.exp(logbf[r] - best)
        out[t] = best + math.log(acc)
    return out, start


@njit(cache=True)
def glr_poisson_path(X, row_dot, lam_total, xlogx, L):
    """Windowed Poisson GLR; ``xlogx[n]`` is n log n with 0 log 0 = 0."""
    T, D = X.shape
    out = np.zeros(T)
    start = np.zeros(T, np.int64)
    S = np.zeros(D, np.int64)
    for t in range(T):
        S[:] = 0
        sum_s = 0
        sum_a = 0.0
        best = -np.inf
        for r in range(min(L, t + 1)):
            k = t - r
            acc = 0.0
            for j in range(D):
                S[j] += X[k, j]
                sum_s += X[k, j]
            for j in range(D):
                acc += xlogx[S[j]]
            sum_a += row_dot[k]
            m = r + 1
            v = acc - sum_s * math.log(m) - sum_a - sum_s + m * lam_total
            if v >= best:
                best = v
                start[t] = k + 1
        out[t] = best
    return out, start


@njit(cache=True)
def ef_gaussian_path(ybar, n, sigma, tau, L):
    T = ybar.shape[0]
    out = np.zeros(T)
    start = np.zeros(T, np.int64)
    logbf = np.empty(L)
    s2 = sigma * sigma
    t2 = tau * tau
    for t in range(T):
        prec = 0.0
        b = 0.0
        nw = min(L, t + 1)
        best = -np.inf
        for r in range(nw):
            k = t - r
            if n[k] > 0:
                prec += n[k] / s2
                b += n[k] * ybar[k] / s2
            v = -0.5 * math.log1p(t2 * prec) + t2 * b * b / (2.0 * (1.0 + t2 * prec))
            logbf[r] = v
            if v >= best:
                best = v
                start[t] = k + 1
        acc = 0.0
        for r in range(nw):
            acc += math.exp(logbf[r] - best)
        out[t] = best + math.log(acc)
    return out, start


@njit(cache=True)
def glr_gaussian_path(ybar, n, sigma, L, variance_change):
    T = ybar.shape[0]
    out = np.zeros(T)
    start = np.zeros(T, np.int64)
    skipped = np.ones(T, np.bool_)
    s2 = sigma * sigma
    for t in range(T):
        sw = 0.0
        swy = 0.0
        swy2 = 0.0
        m = 0
        best = 0.0
        for r in range(min(L, t + 1)):
            k = t - r
            if n[k] > 0:
                sw += n[k]
                swy += n[k] * ybar[k]
                swy2 += n[k] * ybar[k] * ybar[k]
                m += 1
            if m == 0:
                continue
            if variance_change:
                if m < 2:
                    continue
                var_hat = (swy2 - swy * swy / sw) / m
                if var_hat <= 0.0:
                    continue
                v = -0.5 * m * math.log(var_hat / s2) - 0.5 * m + swy2 / (2.0 * s2)
            else:
                v = swy * swy / (2.0 * s2 * sw)
            if skipped[t] or v >= best:
                best = v
                start[t] = k + 1
                skipped[t] = False
        out[t] = best
    return out, start, skipped
