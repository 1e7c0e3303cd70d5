"""Compiled Gibbs-sweep kernels.

Conventions shared by all kernels:

* count arrays are laid out column-major in the cluster index, i.e.
  ``n1[j, k]`` (binary) or ``cnt[j, k, l]`` (categorical), so the innermost
  loop over clusters is contiguous;
* log-gamma values of ``prior + count`` are read from precomputed tables
  indexed by the integer count;
* uniforms are drawn by the caller from a ``numpy.random.Generator`` and
  passed in, which keeps chains bit-reproducible from ``(seed, stream)``.

Per-row conditionals multiply per-column factors in linear space and fold
them into the log accumulator every ``_BLOCK`` columns; factors are bounded
below by roughly ``min(prior)/(n + sum(prior))`` so a block cannot underflow.
"""
import math

import numpy as np
from numba import njit

_BLOCK = 32
_CUT = 40.0


@njit(cache=True)
def lgamma_table(a, n):
    out = np.empty(n + 1)
    for m in range(n + 1):
        out[m] = math.lgamma(a + m)
    return out


@njit(cache=True)
def _draw(logw, u):
    top = -np.inf
    for k in range(logw.shape[0]):
        if logw[k] > top:
            top = logw[k]
    total = 0.0
    w = np.empty(logw.shape[0])
    for k in range(logw.shape[0]):
        w[k] = math.exp(logw[k] - top)
        total += w[k]
    target = u * total
    acc = 0.0
    last = 0
    for k in range(logw.shape[0]):
        if w[k] > 0.0:
            last = k
            acc += w[k]
            if target < acc:
                return k
    return last


@njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


# ---------------------------------------------------------------------------
# Binary clustering with global variable selection
# ---------------------------------------------------------------------------

@njit(cache=True)
def bbc1_counts(Y, C, K):
    """``cnt[y, j, k]``: rows of cluster k with value y in column j."""
    n, p = Y.shape
    cnt = np.zeros((2, p, K + 1), dtype=np.int64)
    nk = np.zeros(K + 1, dtype=np.int64)
    for i in range(n):
        c = C[i]
        nk[c] += 1
        for j in range(p):
            cnt[Y[i, j], j, c] += 1
    return cnt, nk


@njit(cache=True)
def bbc1_column_terms(cnt, nk, N1, n, tab, lba, lbw):
    """Per-column pooled background, null-cluster background and foreground
    log marginals. ``tab[y, k, m]`` holds ``lgamma(prior_y(k) + m)`` with
    the background prior in slot ``k = 0`` and the biomarker prior in
    slot 1; ``tab[2, k, m]`` is the same for the summed prior."""
    p = cnt.shape[1]
    K1 = nk.shape[0]
    bg = np.empty(p)
    nullbg = np.empty(p)
    fg = np.empty(p)
    for j in range(p):
        bg[j] = tab[1, 0, N1[j]] + tab[0, 0, n - N1[j]] - tab[2, 0, n] - lbw
        nullbg[j] = (tab[1, 0, cnt[1, j, 0]] + tab[0, 0, cnt[0, j, 0]]
                     - tab[2, 0, nk[0]] - lbw)
        s = 0.0
        for k in range(1, K1):
            s += tab[1, 1, cnt[1, j, k]] + tab[0, 1, cnt[0, j, k]] - tab[2, 1, nk[k]] - lba
        fg[j] = s
    return bg, nullbg, fg


@njit(cache=True)
def bbc1_sweep_C(Y, C, cnt, nk, bg, nullbg, fg, logprior, log_pi, log_1mpi,
                 prior, tab, u):
    """One systematic scan over rows, each C_i drawn from its S-collapsed
    conditional. ``nullbg`` and ``fg`` are kept in sync with the counts.

    ``prior[y, k]`` is the Beta pseudo-count for value y in cluster k
    (background prior at k = 0)."""
    n, p = Y.shape
    K1 = nk.shape[0]
    k0 = 0 if logprior[0] > -np.inf else 1
    psum = prior[0] + prior[1]
    logw = np.empty(K1)
    prod = np.empty(K1)
    inv = np.empty(K1)
    for i in range(n):
        c = C[i]
        tc = 0 if c == 0 else 1
        nk[c] -= 1
        dn = tab[2, tc, nk[c] + 1] - tab[2, tc, nk[c]]
        for k in range(K1):
            logw[k] = logprior[k]
            prod[k] = 1.0
            inv[k] = 1.0 / (psum[k] + nk[k])
        blk = 0
        for j in range(p):
            y = Y[i, j]
            cnt[y, j, c] -= 1
            h = cnt[y, j, c]
            delta = tab[y, tc, h + 1] - tab[y, tc, h] - dn
            if c == 0:
                nullbg[j] -= delta
            else:
                fg[j] -= delta
            d = log_pi + nullbg[j] + fg[j] - log_1mpi - bg[j]
            if d < -_CUT:
                continue
            if d > _CUT:
                e0 = 0.0
                e1 = 1.0
            elif d > 0.0:
                e0 = math.exp(-d)
                e1 = 1.0
            else:
                e0 = 1.0
                e1 = math.exp(d)
            py = prior[y]
            cy = cnt[y, j]
            for k in range(k0, K1):
                prod[k] *= e0 + e1 * (py[k] + cy[k]) * inv[k]
            blk += 1
            if blk == _BLOCK:
                for k in range(k0, K1):
                    logw[k] += math.log(prod[k])
                    prod[k] = 1.0
                blk = 0
        for k in range(k0, K1):
            logw[k] += math.log(prod[k])
        k = _draw(logw, u[i])
        C[i] = k
        tk = 0 if k == 0 else 1
        dn = tab[2, tk, nk[k] + 1] - tab[2, tk, nk[k]]
        for j in range(p):
            y = Y[i, j]
            h = cnt[y, j, k]
            delta = tab[y, tk, h + 1] - tab[y, tk, h] - dn
            if k == 0:
                nullbg[j] += delta
            else:
                fg[j] += delta
            cnt[y, j, k] = h + 1
        nk[k] += 1


@njit(cache=True)
def bbc1_sweep_S(bg, nullbg, fg, log_pi, log_1mpi, S, u):
    """Draw every S_j from its exact conditional; return the collapsed
    ``ln P(Y|C)`` and the joint ``ln P(Y|C,S) + ln P(S)``."""
    p = bg.shape[0]
    collapsed = 0.0
    joint = 0.0
    for j in range(p):
        s0 = log_1mpi + bg[j]
        s1 = log_pi + nullbg[j] + fg[j]
        tot = _logaddexp(s0, s1)
        collapsed += tot
        if u[j] < math.exp(s1 - tot):
            S[j] = 1
            joint += s1
        else:
            S[j] = 0
            joint += s0
    return collapsed, joint


# ---------------------------------------------------------------------------
# Categorical bi-clustering with cluster-specific selection
# ---------------------------------------------------------------------------

@njit(cache=True)
def bbc2_counts(Y, C, K, L):
    n, p = Y.shape
    cnt = np.zeros((p, K, L), dtype=np.int64)
    nk = np.zeros(K, dtype=np.int64)
    for i in range(n):
        c = C[i]
        nk[c] += 1
        for j in range(p):
            cnt[j, c, Y[i, j]] += 1
    return cnt, nk


@njit(cache=True)
def bbc2_pool(cnt, masks, sidx):
    p, K, L = cnt.shape
    pool = np.zeros((p, L), dtype=np.int64)
    for j in range(p):
        m = masks[sidx[j]]
        for k in range(K):
            if not (m >> k) & 1:
                for l in range(L):
                    pool[j, l] += cnt[j, k, l]
    return pool


@njit(cache=True)
def _dm(c, tg, tgs, dm0):
    L = c.shape[0]
    s = 0.0
    tot = 0
    for l in range(L):
        s += tg[l, c[l]]
        tot += c[l]
    return s - tgs[tot] - dm0


@njit(cache=True)
def bbc2_sweep_C(Y, C, cnt, nk, pool, masks, sidx, gamma, logprior_c, u):
    """Systematic scan over rows; C_i | C_-i, S, Y with Theta integrated out."""
    n, p = Y.shape
    K = nk.shape[0]
    gs = 0.0
    for l in range(gamma.shape[0]):
        gs += gamma[l]
    logw = np.empty(K)
    prod = np.empty(K)
    inv = np.empty(K)
    for i in range(n):
        c = C[i]
        nk[c] -= 1
        for j in range(p):
            y = Y[i, j]
            cnt[j, c, y] -= 1
            if not (masks[sidx[j]] >> c) & 1:
                pool[j, y] -= 1
        for k in range(K):
            logw[k] = logprior_c
            prod[k] = 1.0
            inv[k] = 1.0 / (gs + nk[k])
        blk = 0
        for j in range(p):
            m = masks[sidx[j]]
            if m == 0:
                continue
            y = Y[i, j]
            ptot = 0
            for l in range(gamma.shape[0]):
                ptot += pool[j, l]
            pp = (gamma[y] + pool[j, y]) / (gs + ptot)
            for k in range(K):
                if (m >> k) & 1:
                    prod[k] *= (gamma[y] + cnt[j, k, y]) * inv[k]
                else:
                    prod[k] *= pp
            blk += 1
            if blk == _BLOCK:
                for k in range(K):
                    logw[k] += math.log(prod[k])
                    prod[k] = 1.0
                blk = 0
        for k in range(K):
            logw[k] += math.log(prod[k])
        k = _draw(logw, u[i])
        C[i] = k
        nk[k] += 1
        for j in range(p):
            y = Y[i, j]
            cnt[j, k, y] += 1
            if not (masks[sidx[j]] >> k) & 1:
                pool[j, y] += 1


@njit(cache=True)
def bbc2_column_config_logp(cnt_j, masks, logprior_cfg, tg, tgs, dm0, out):
    """Unnormalised ``ln P(Y_j | C, s) + ln P(s)`` for every canonical s."""
    K, L = cnt_j.shape
    single = np.empty(K)
    for k in range(K):
        single[k] = _dm(cnt_j[k], tg, tgs, dm0)
    pooled = np.empty(L, dtype=np.int64)
    for ci in range(masks.shape[0]):
        m = masks[ci]
        for l in range(L):
            pooled[l] = 0
        v = logprior_cfg[ci]
        for k in range(K):
            if (m >> k) & 1:
                v += single[k]
            else:
                for l in range(L):
                    pooled[l] += cnt_j[k, l]
        v += _dm(pooled, tg, tgs, dm0)
        out[ci] = v


@njit(cache=True)
def bbc2_sweep_S(cnt, pool, masks, sidx, logprior_cfg, tg, tgs, dm0, u, draw):
    """Draw each S_j from its conditional over canonical configurations
    (when ``draw`` is true; otherwise only evaluate). Returns
    ``(collapsed, joint, log_cond)`` where ``log_cond`` is
    ``sum_j ln P(S_j | Y, C)`` at the resulting S."""
    p, K, L = cnt.shape
    ncfg = masks.shape[0]
    lp = np.empty(ncfg)
    collapsed = 0.0
    joint = 0.0
    log_cond = 0.0
    for j in range(p):
        bbc2_column_config_logp(cnt[j], masks, logprior_cfg, tg, tgs, dm0, lp)
        top = -np.inf
        for ci in range(ncfg):
            if lp[ci] > top:
                top = lp[ci]
        tot = 0.0
        for ci in range(ncfg):
            tot += math.exp(lp[ci] - top)
        lse = top + math.log(tot)
        collapsed += lse
        if draw:
            sidx[j] = _draw(lp, u[j])
            m = masks[sidx[j]]
            for l in range(L):
                pool[j, l] = 0
            for k in range(K):
                if not (m >> k) & 1:
                    for l in range(L):
                        pool[j, l] += cnt[j, k, l]
        joint += lp[sidx[j]]
        log_cond += lp[sidx[j]] - lse
    return collapsed, joint, log_cond


@njit(cache=True)
def bbc2_conditional_mode(cnt, masks, logprior_cfg, tg, tgs, dm0):
    """Per-column exact posterior mode and the config probabilities."""
    p, K, L = cnt.shape
    ncfg = masks.shape[0]
    lp = np.empty(ncfg)
    mode = np.empty(p, dtype=np.int64)
    prob = np.empty((p, ncfg))
    for j in range(p):
        bbc2_column_config_logp(cnt[j], masks, logprior_cfg, tg, tgs, dm0, lp)
        top = -np.inf
        best = 0
        for ci in range(ncfg):
            if lp[ci] > top:
                top = lp[ci]
                best = ci
        tot = 0.0
        for ci in range(ncfg):
            prob[j, ci] = math.exp(lp[ci] - top)
            tot += prob[j, ci]
        for ci in range(ncfg):
            prob[j, ci] /= tot
        mode[j] = best
    return mode, prob


@njit(cache=True)
def bbc2_rb_logprob(Y, log_sel, log_bg, masks, sidx, log_cprior):
    """``ln P(C_i = k | Y, Theta, S)`` for every row and cluster; rows are
    conditionally independent once Theta and S are fixed."""
    n, p = Y.shape
    K = log_sel.shape[1]
    out = np.zeros((n, K))
    for i in range(n):
        for k in range(K):
            out[i, k] = log_cprior
        for j in range(p):
            m = masks[sidx[j]]
            if m == 0:
                continue
            y = Y[i, j]
            b = log_bg[j, y]
            for k in range(K):
                if (m >> k) & 1:
                    out[i, k] += log_sel[j, k, y]
                else:
                    out[i, k] += b
        top = -np.inf
        for k in range(K):
            if out[i, k] > top:
                top = out[i, k]
        tot = 0.0
        for k in range(K):
            tot += math.exp(out[i, k] - top)
        lse = top + math.log(tot)
        for k in range(K):
            out[i, k] -= lse
    return out
