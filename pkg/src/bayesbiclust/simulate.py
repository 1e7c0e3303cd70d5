"""Synthetic data with stored ground truth.

Each generator is addressed by an integer ``seed``. Labels come from the
stream ``(seed, 0)`` and column j from ``(seed, 1, j)``, so a column's values
do not depend on how many other columns are generated or in what order.
Cluster labels are 1-based; ``S`` matrices are ``(p, K)`` booleans.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError
from .stats import rng_stream


@dataclass
class Synthetic:
    Y: np.ndarray
    labels: np.ndarray
    S: np.ndarray
    params: dict


def _labels(n, K, seed):
    return rng_stream(seed, 0).integers(1, K + 1, n).astype(np.int64)


def _categorical_column(rng, probs, labels, n):
    """Draw one column; ``probs[k]`` is the law for label k (row 0 unused
    when every label is >= 1)."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(n)
    rows = cdf[labels]
    return (u[:, None] >= rows).sum(axis=1).astype(np.uint8)


def gen_bbc1(n, p, K, Ns, seed) -> Synthetic:
    """Binary data with ``Ns`` biomarker columns.

    Background rates ~ Beta(1, 1); biomarker rates ~ Beta(0.2, 0.2)
    independently per cluster; labels uniform over ``1..K``.
    """
    if not 0 <= Ns <= p:
        raise UsageError("Ns must lie in [0, p]")
    C = _labels(n, K, seed)
    bio = np.sort(rng_stream(seed, 2).choice(p, Ns, replace=False))
    S = np.zeros(p, dtype=bool)
    S[bio] = True
    Y = np.empty((n, p), dtype=np.uint8)
    for j in range(p):
        rng = rng_stream(seed, 1, j)
        if S[j]:
            rate = np.concatenate([[0.0], rng.beta(0.2, 0.2, K)])[C]
        else:
            rate = rng.beta(1.0, 1.0)
        Y[:, j] = rng.random(n) < rate
    return Synthetic(Y, C, S, dict(model="bbc1", n=n, p=p, K=K, Ns=Ns, seed=seed))


def gen_bbc2(n, p, K, L, pi_s, seed, dirichlet=None) -> Synthetic:
    """Categorical data with cluster-specific selection.

    ``S_kj ~ Bernoulli(pi_s)`` independently, stored in canonical form (a
    single unselected cluster is marked selected, since its law is then its
    own). Every distinct law is drawn from ``Dirichlet(dirichlet)``, all
    ones by default; unselected clusters share the column background.
    """
    if L < 2:
        raise UsageError("L must be at least 2")
    if not 0 <= pi_s <= 1:
        raise UsageError("pi_s must lie in [0, 1]")
    g = np.ones(L) if dirichlet is None else np.asarray(dirichlet, dtype=float)
    C = _labels(n, K, seed)
    S = np.zeros((p, K), dtype=bool)
    Y = np.empty((n, p), dtype=np.uint8)
    for j in range(p):
        rng = rng_stream(seed, 1, j)
        s = rng.random(K) < pi_s
        if K > 1 and s.sum() == K - 1:
            s[:] = True
        S[j] = s
        bg = rng.dirichlet(g)
        own = rng.dirichlet(g, size=K)
        probs = np.vstack([bg, np.where(s[:, None], own, bg)])
        Y[:, j] = _categorical_column(rng, probs, C, n)
    return Synthetic(Y, C, S, dict(model="bbc2", n=n, p=p, K=K, L=L, pi_s=pi_s, seed=seed))


def gen_semisynthetic_noise(base, extra, seed, L=3):
    """Append ``extra`` noise columns, each i.i.d. Categorical(theta) with
    ``theta ~ Dirichlet(1, ..., 1)``."""
    base = np.asarray(base, dtype=np.uint8)
    n = base.shape[0]
    cols = []
    for j in range(extra):
        rng = rng_stream(seed, 3, j)
        theta = rng.dirichlet(np.ones(L))
        cols.append(_categorical_column(rng, theta[None, :], np.zeros(n, dtype=np.int64), n))
    if not cols:
        return base.copy()
    return np.hstack([base, np.stack(cols, axis=1)])


def shuffle_features(Y, fraction, seed):
    """Permute the rows of a random ``fraction`` of the columns independently.

    Returns ``(Y_shuffled, shuffled_column_ids)``.
    """
    if not 0 <= fraction <= 1:
        raise UsageError("fraction must lie in [0, 1]")
    Y = np.array(Y, copy=True)
    p = Y.shape[1]
    m = int(round(fraction * p))
    ids = np.sort(rng_stream(seed, 4).choice(p, m, replace=False))
    for j in ids:
        Y[:, j] = rng_stream(seed, 5, int(j)).permutation(Y[:, j])
    return Y, ids


def gen_hierarchy(n_per_leaf, p, seed, levels=(2, 2), signal=(0.3, 0.1), L=3) -> Synthetic:
    """Nested groups: each level splits every group into ``levels[d]``
    children. A column is informative at depth d with probability
    ``signal[d]``; informative columns draw a fresh Dirichlet(1) law per
    group at that depth, which all its descendants inherit.

    ``labels`` are leaf ids ``1..prod(levels)``; ``params['super']`` holds the
    first-level group of each row.
    """
    if len(levels) != len(signal):
        raise UsageError("levels and signal must have the same length")
    n_leaves = int(np.prod(levels))
    n = n_per_leaf * n_leaves
    leaf = np.repeat(np.arange(n_leaves), n_per_leaf)
    # group index of each leaf at every depth
    path = []
    size = n_leaves
    for b in levels:
        size //= b
        path.append(np.arange(n_leaves) // size)
    Y = np.empty((n, p), dtype=np.uint8)
    S = np.zeros((p, len(levels)), dtype=bool)
    for j in range(p):
        rng = rng_stream(seed, 1, j)
        law = np.tile(rng.dirichlet(np.ones(L)), (n_leaves, 1))
        for d, share in enumerate(signal):
            if rng.random() < share:
                S[j, d] = True
                groups = path[d]
                fresh = rng.dirichlet(np.ones(L), size=groups.max() + 1)
                law = fresh[groups]
        Y[:, j] = _categorical_column(rng, law, leaf, n)
    perm = rng_stream(seed, 0).permutation(n)
    Y = Y[perm]
    leaf = leaf[perm]
    return Synthetic(Y, leaf + 1, S,
                     dict(model="hierarchy", n_per_leaf=n_per_leaf, p=p, levels=list(levels),
                          signal=list(signal), L=L, seed=seed,
                          super=(path[0][leaf] + 1).tolist()))


def gen_integration(n, p, seed, modules=((10, 12), (10, 12)), shift=0.8, noise_sd=0.25,
                    background=(0.0, 0.3), n_extra=200):
    """Fisher-z stacks with planted co-expression modules.

    The genome has ``n + n_extra`` genes, of which ``n`` are the query.
    ``modules`` lists ``(size, n_supporting_layers)``; query genes are
    assigned to modules in order and the rest of the query is null (label 0).
    Supporting layers are chosen per module at random. Every pair value is
    drawn from ``N(mu0, sd0**2)`` except within-module pairs on supporting
    layers, which are ``N(mu0 + shift, noise_sd**2)``.

    Returns ``(Z, query, C, S)``: ``Z`` has shape ``(p, N, N)``, ``query``
    indexes the query genes in ``Z``, ``C`` holds their labels and ``S`` is
    the ``(p, K)`` layer-support matrix.
    """
    K = len(modules)
    if sum(m for m, _ in modules) > n:
        raise UsageError("modules hold more genes than n")
    N = n + n_extra
    C = np.zeros(n, dtype=np.int64)
    start = 0
    for k, (size, _) in enumerate(modules, start=1):
        C[start:start + size] = k
        start += size
    rng = rng_stream(seed, 0)
    S = np.zeros((p, K), dtype=bool)
    for k, (_, n_sup) in enumerate(modules):
        S[rng.choice(p, n_sup, replace=False), k] = True
    query = np.sort(rng.choice(N, n, replace=False))
    C = C[rng.permutation(n)]
    full = np.zeros(N, dtype=np.int64)
    full[query] = C
    mu0, sd0 = background
    iu = np.triu_indices(N, 1)
    li, lj = full[iu[0]], full[iu[1]]
    same = (li == lj) & (li > 0)
    Z = np.zeros((p, N, N))
    for d in range(p):
        r = rng_stream(seed, 1, d)
        vals = r.normal(mu0, sd0, iu[0].size)
        for k in range(K):
            if S[d, k]:
                mask = same & (li == k + 1)
                vals[mask] = r.normal(mu0 + shift, noise_sd, mask.sum())
        Z[d][iu] = vals
        Z[d] += Z[d].T
    return Z, query, C, S
