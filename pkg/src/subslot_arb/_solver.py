"""Backward-induction kernel for the fallback value function (numba).

Nodes are ``(k, m)``: failed attempts so far and subslot within the current
slot. Consecutive waits are implied by ``m`` (only waits move within a slot),
so the wait budget just bounds how far ``m`` can advance in each slot.
All option statistics are taken across ``N`` simulated belief-model paths.
"""

import math

import numpy as np
from numba import njit

CLOSE = 0
RETRY = 1
WAIT = 2

# utilities closer than this (relative, plus a notional-scaled floor) count as
# ties, so float rounding never overrides the close > retry > wait preference
TIE_RTOL = 1e-12
TIE_NOTIONAL = 1e-15


@njit(cache=True)
def _beats(u, best, floor):
    return u > best + TIE_RTOL * max(abs(u), abs(best)) + floor


@njit(cache=True)
def _mean_std(v):
    n = v.shape[0]
    m = 0.0
    for i in range(n):
        m += v[i]
    m /= n
    s = 0.0
    for i in range(n):
        d = v[i] - m
        s += d * d
    return m, math.sqrt(s / n)


@njit(cache=True)
def solve_kernel(
    z_mid,  # (N, S) standard normals, one per path and second
    z_eta,  # (N, J) standard normals, one per path and future slot
    mid0,
    dex0,
    eta0,
    entry,
    d,
    q,
    sigma,
    beta,
    fee,
    rho,
    eta_sd,
    alpha,
    lam,
    k_max,
    M,
    guard,
    wait_max,
    k0,
    m0,
    w0,
    lead,
):
    N = z_mid.shape[0]
    S = z_mid.shape[1]
    logmid = np.empty((N, S + 1))
    lm0 = math.log(mid0)
    for p in range(N):
        logmid[p, 0] = lm0
        for o in range(S):
            logmid[p, o + 1] = logmid[p, o] + sigma * z_mid[p, o]

    J = k_max - k0
    dex = np.empty((N, J + 1))
    for p in range(N):
        dex[p, 0] = dex0
        eta = eta0
        for j in range(1, J + 1):
            eta = rho * eta + eta_sd * z_eta[p, j - 1]
            dex[p, j] = math.exp(logmid[p, lead + j * M - m0]) + eta

    close_mult = 1.0 + beta if d > 0 else 1.0 - beta
    V = np.full((k_max + 1, M + 1, N), np.nan)
    actions = np.full((k_max + 1, M + 1), -1, dtype=np.int8)
    utils = np.full((k_max + 1, M + 1, 3), np.nan)
    c = np.empty(N)
    s = np.empty(N)
    land_sd = math.sqrt(alpha * (1.0 - alpha))
    floor = TIE_NOTIONAL * q * abs(entry)

    for k in range(k_max, k0 - 1, -1):
        m_start = m0 if k == k0 else 0
        w_start = w0 if k == k0 else 0
        if k == k_max:
            o = lead + (k - k0) * M + (m_start - m0)
            for p in range(N):
                c[p] = d * q * (entry - math.exp(logmid[p, o]) * close_mult)
                V[k, m_start, p] = c[p]
            mc, sc = _mean_std(c)
            utils[k, m_start, CLOSE] = mc - lam * sc
            actions[k, m_start] = CLOSE
            continue

        m_end = min(M, m_start + max(wait_max - w_start, 0))
        for p in range(N):
            px = dex[p, k - k0]
            ex = px / (1.0 - fee) if d > 0 else px * (1.0 - fee)
            s[p] = d * q * (entry - ex)
        ms, ss = _mean_std(s)

        for m in range(m_end, m_start - 1, -1):
            o = lead + (k - k0) * M + (m - m0)
            w = w_start + (m - m_start)
            for p in range(N):
                c[p] = d * q * (entry - math.exp(logmid[p, o]) * close_mult)
            mc, sc = _mean_std(c)
            uc = mc - lam * sc
            utils[k, m, CLOSE] = uc
            best = uc
            act = CLOSE

            if m <= M - guard:
                mn, sn = _mean_std(V[k + 1, 0])
                e = alpha * ms + (1.0 - alpha) * mn
                var = alpha * ss * ss + (1.0 - alpha) * sn * sn + alpha * (1.0 - alpha) * (ms - mn) ** 2
                ur = e - lam * math.sqrt(var)
                utils[k, m, RETRY] = ur
                if _beats(ur, best, floor):
                    best = ur
                    act = RETRY

            if m < M and w < wait_max:
                mw, sw = _mean_std(V[k, m + 1])
                uw = mw - lam * sw
                utils[k, m, WAIT] = uw
                if _beats(uw, best, floor):
                    best = uw
                    act = WAIT

            actions[k, m] = act
            if act == CLOSE:
                for p in range(N):
                    V[k, m, p] = c[p]
            elif act == WAIT:
                for p in range(N):
                    V[k, m, p] = V[k, m + 1, p]
            else:
                for p in range(N):
                    vn = V[k + 1, 0, p]
                    V[k, m, p] = alpha * s[p] + (1.0 - alpha) * vn - lam * land_sd * abs(s[p] - vn)

    return V[k0, m0].copy(), actions, utils
