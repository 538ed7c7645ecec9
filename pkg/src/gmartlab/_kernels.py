"""Compiled inner loops.  Inputs are C-contiguous float64 arrays; no validation here."""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def scheduled_paths(z, scale, m_out, inc_out):
    """M_{j+1} = M_j + scale_j * Z_j with a deterministic per-step scale (sigma_j * sqrt(dt_j))."""
    n, N = z.shape
    for i in range(n):
        m = 0.0
        m_out[i, 0] = 0.0
        for j in range(N):
            y = m + scale[j] * z[i, j]
            m_out[i, j + 1] = y
            inc_out[i, j] = y - m
            m = y


@njit(**_JIT)
def sigma_paths(z, sigma, sqrt_dt, dt, m_out, inc_out, qv_out):
    """Euler paths for a given (path, step) volatility matrix."""
    n, N = z.shape
    for i in range(n):
        m = 0.0
        q = 0.0
        m_out[i, 0] = 0.0
        qv_out[i, 0] = 0.0
        for j in range(N):
            s = sigma[i, j]
            y = m + s * sqrt_dt[j] * z[i, j]
            m_out[i, j + 1] = y
            inc_out[i, j] = y - m
            m = y
            q += s * s * dt[j]
            qv_out[i, j + 1] = q


@njit(**_JIT)
def bangbang_paths(z, sqrt_dt, dt, pivot, s_above, s_below, m_out, inc_out, qv_out, sig_out):
    n, N = z.shape
    for i in range(n):
        m = 0.0
        q = 0.0
        m_out[i, 0] = 0.0
        qv_out[i, 0] = 0.0
        for j in range(N):
            s = s_below + (s_above - s_below) * (m >= pivot)
            sig_out[i, j] = s
            y = m + s * sqrt_dt[j] * z[i, j]
            m_out[i, j + 1] = y
            inc_out[i, j] = y - m
            m = y
            q += s * s * dt[j]
            qv_out[i, j + 1] = q


@njit(**_JIT)
def _first_ge(levels, a0, h, x):
    # smallest k with levels[k] >= x, in [0, K]
    K = levels.shape[0]
    g = (x - a0) / h
    if g <= 0.0:
        k = 0
    elif g >= K:
        k = K
    else:
        k = int(math.ceil(g))
    while k > 0 and levels[k - 1] >= x:
        k -= 1
    while k < K and levels[k] < x:
        k += 1
    return k


@njit(**_JIT)
def _first_gt(levels, a0, h, x):
    # smallest k with levels[k] > x, in [0, K]
    K = levels.shape[0]
    g = (x - a0) / h
    if g <= 0.0:
        k = 0
    elif g >= K:
        k = K
    else:
        k = int(math.floor(g))
    while k > 0 and levels[k - 1] > x:
        k -= 1
    while k < K and levels[k] <= x:
        k += 1
    return k


@njit(**_JIT)
def tanaka_levels(m, levels, h, rec, out):
    """Accumulate |y-a| - |x-a| - sgn(x-a)(y-x) (sgn(0) = -1) over steps.

    The increment vanishes unless level a is crossed: a in [x, y) on up-steps
    and a in (y, x) on down-steps, where it equals 2|y - a|.
    """
    n, Np1 = m.shape
    N = Np1 - 1
    K = levels.shape[0]
    R = rec.shape[0]
    a0 = levels[0]
    acc = np.zeros(K)
    for i in range(n):
        acc[:] = 0.0
        r = 0
        for j in range(N):
            while r < R and rec[r] == j:
                out[i, :, r] = acc
                r += 1
            x = m[i, j]
            y = m[i, j + 1]
            if y > x:
                k0 = _first_ge(levels, a0, h, x)
                k1 = _first_ge(levels, a0, h, y)
                for k in range(k0, k1):
                    acc[k] += 2.0 * (y - levels[k])
            elif y < x:
                k0 = _first_gt(levels, a0, h, y)
                k1 = _first_ge(levels, a0, h, x)
                for k in range(k0, k1):
                    acc[k] += 2.0 * (levels[k] - y)
        while r < R:
            out[i, :, r] = acc
            r += 1


@njit(**_JIT)
def occupation_levels(m, w, levels, h, eps, symmetric, rec, out):
    """Accumulate w_j / eps over steps with M_j in [a, a+eps) (or (a-eps, a+eps), /2eps)."""
    n, Np1 = m.shape
    N = Np1 - 1
    K = levels.shape[0]
    R = rec.shape[0]
    a0 = levels[0]
    denom = 2.0 * eps if symmetric else eps
    acc = np.zeros(K)
    for i in range(n):
        acc[:] = 0.0
        r = 0
        for j in range(N):
            while r < R and rec[r] == j:
                out[i, :, r] = acc
                r += 1
            x = m[i, j]
            wj = w[i, j] / denom
            if wj == 0.0:
                continue
            k0 = _first_ge(levels, a0, h, x - eps)
            if k0 > 0:
                k0 -= 1
            hi = x + eps if symmetric else x
            k1 = _first_gt(levels, a0, h, hi)
            if k1 < K:
                k1 += 1
            for k in range(k0, k1):
                a = levels[k]
                if symmetric:
                    inside = (a - eps < x) and (x < a + eps)
                else:
                    inside = (a <= x) and (x < a + eps)
                if inside:
                    acc[k] += wj
        while r < R:
            out[i, :, r] = acc
            r += 1


@njit(**_JIT)
def pair_sup_moments(m, xs, ys, power, out):
    """out[i, g] = sup_t |int_0^t (sgn(M-x_g) - sgn(M-y_g)) dM|^power along path i."""
    n, Np1 = m.shape
    G = xs.shape[0]
    cum = np.zeros(G)
    sup = np.zeros(G)
    for i in range(n):
        cum[:] = 0.0
        sup[:] = 0.0
        for j in range(Np1 - 1):
            x = m[i, j]
            dm = m[i, j + 1] - x
            for g in range(G):
                sx = 1.0 if x - xs[g] > 0.0 else -1.0
                sy = 1.0 if x - ys[g] > 0.0 else -1.0
                d = sx - sy
                if d != 0.0:
                    cum[g] += d * dm
                    v = abs(cum[g])
                    if v > sup[g]:
                        sup[g] = v
        for g in range(G):
            out[i, g] = sup[g] ** power


@njit(**_JIT)
def tanaka_few(m, levels, out):
    """Terminal Tanaka local time at a handful of levels (direct crossing test per level)."""
    n, Np1 = m.shape
    K = levels.shape[0]
    for i in range(n):
        for k in range(K):
            out[i, k] = 0.0
        for j in range(Np1 - 1):
            x = m[i, j]
            y = m[i, j + 1]
            for k in range(K):
                a = levels[k]
                if x <= a < y:
                    out[i, k] += 2.0 * (y - a)
                elif y < a < x:
                    out[i, k] += 2.0 * (a - y)


@njit(**_JIT)
def occupation_few(m, w, levels, eps, symmetric, out):
    """Terminal occupation estimate at a handful of levels for each window in ``eps``."""
    n, Np1 = m.shape
    K = levels.shape[0]
    E = eps.shape[0]
    for i in range(n):
        for k in range(K):
            for e in range(E):
                out[i, k, e] = 0.0
        for j in range(Np1 - 1):
            x = m[i, j]
            wj = w[i, j]
            for k in range(K):
                a = levels[k]
                for e in range(E):
                    ep = eps[e]
                    if symmetric:
                        if a - ep < x and x < a + ep:
                            out[i, k, e] += wj / (2.0 * ep)
                    elif a <= x and x < a + ep:
                        out[i, k, e] += wj / ep


@njit(**_JIT)
def growth_violation(m, w, levels, h, eps, band, mode, viol, total):
    """Per (path, level): mass of dL_t(a) on steps with |M_j - a| > band, and total mass.

    mode 0 uses Tanaka increments, 1 the one-sided occupation window, 2 the
    symmetric one.
    """
    n, Np1 = m.shape
    K = levels.shape[0]
    a0 = levels[0]
    denom = 2.0 * eps if mode == 2 else eps
    for i in range(n):
        for k in range(K):
            viol[i, k] = 0.0
            total[i, k] = 0.0
        for j in range(Np1 - 1):
            x = m[i, j]
            if mode == 0:
                y = m[i, j + 1]
                if y > x:
                    k0 = _first_ge(levels, a0, h, x)
                    k1 = _first_ge(levels, a0, h, y)
                elif y < x:
                    k0 = _first_gt(levels, a0, h, y)
                    k1 = _first_ge(levels, a0, h, x)
                else:
                    continue
                for k in range(k0, k1):
                    a = levels[k]
                    inc = 2.0 * abs(y - a)
                    total[i, k] += inc
                    if abs(x - a) > band:
                        viol[i, k] += inc
            else:
                wj = w[i, j] / denom
                if wj == 0.0:
                    continue
                k0 = _first_ge(levels, a0, h, x - eps)
                if k0 > 0:
                    k0 -= 1
                k1 = _first_gt(levels, a0, h, x + eps)
                if k1 < K:
                    k1 += 1
                for k in range(k0, k1):
                    a = levels[k]
                    if mode == 2:
                        inside = (a - eps < x) and (x < a + eps)
                    else:
                        inside = (a <= x) and (x < a + eps)
                    if inside:
                        total[i, k] += wj
                        if abs(x - a) > band:
                            viol[i, k] += wj
