"""Shared plumbing: MCMC settings, fit results, label handling, K search."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .exceptions import UsageError


@dataclass(frozen=True)
class MCMCConfig:
    n_iter: int = 500
    burn_in: int = 200
    n_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1 or self.n_chains < 1:
            raise UsageError("n_iter and n_chains must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise UsageError(f"burn_in ({self.burn_in}) must be in [0, n_iter={self.n_iter})")

    @property
    def n_keep(self):
        return self.n_iter - self.burn_in


def as_k_values(n_clusters, n_objects=None) -> list[int]:
    """Normalise an int / iterable / None cluster-count argument to a sorted list."""
    if n_clusters is None:
        if n_objects is None:
            raise UsageError("cannot infer a K range without the data size")
        return list(range(1, max(2, n_objects // 20) + 1))
    if isinstance(n_clusters, (int, np.integer)):
        ks = [int(n_clusters)]
    else:
        ks = sorted({int(k) for k in n_clusters})
    if not ks:
        raise UsageError("K range is empty")
    if ks[0] < 1:
        raise UsageError("cluster counts must be >= 1")
    return ks


def canonical_labels(C) -> np.ndarray:
    """Relabel clusters 1..K in order of first appearance; label 0 (null) is kept."""
    C = np.asarray(C)
    out = np.zeros(C.shape, dtype=np.int64)
    mapping = {0: 0}
    nxt = 1
    for i, c in enumerate(C.tolist()):
        if c not in mapping:
            mapping[c] = nxt
            nxt += 1
        out[i] = mapping[c]
    return out


def log_class_size(C, K: int) -> float:
    """Log number of distinct labelings of the partition ``C`` with K labels.

    With ``m`` nonempty non-null clusters this is ``K!/(K-m)!``, which equals
    ``K!`` whenever at most one label is unused.
    """
    m = len({int(c) for c in np.asarray(C).tolist() if c != 0})
    return math.lgamma(K + 1) - math.lgamma(K - m + 1)


def log_prior_C(C, K: int, gamma0: float = 0.0) -> float:
    C = np.asarray(C)
    n0 = int(np.sum(C == 0))
    if n0 and gamma0 <= 0:
        return -np.inf
    out = (C.size - n0) * math.log((1.0 - gamma0) / K)
    if n0:
        out += n0 * math.log(gamma0)
    return out


def map_extract(logpost) -> int:
    """Index of the highest-scoring retained sample (earliest on ties)."""
    logpost = np.asarray(logpost, dtype=float)
    if logpost.size == 0:
        raise UsageError("no samples to extract a MAP estimate from")
    return int(np.argmax(logpost))


def truncated_poisson_logprior(K: int, alpha: float) -> float:
    """Unnormalised ``ln P(K)`` with ``K - 1 ~ Poisson(alpha)``."""
    return (K - 1) * math.log(alpha) - math.lgamma(K) - alpha


@dataclass
class KFit:
    """Everything retained from the chains run at one K."""

    K: int
    labels: np.ndarray
    selection: np.ndarray
    log_marginal: float
    logpost: np.ndarray
    map_index: int
    extra: dict = field(default_factory=dict)


@dataclass
class FitResult:
    model: str
    k_values: list
    log_marginal: dict
    log_prior_k: dict
    k_hat: int
    labels: np.ndarray
    selection: np.ndarray
    selection_prob: np.ndarray
    per_k: dict = field(default_factory=dict)

    def score(self, K):
        return self.log_marginal[K] + self.log_prior_k.get(K, 0.0)


def bracket_search(score: Callable[[int], float], k_min: int, k_max: int,
                   n_grid: int = 4) -> tuple[int, dict]:
    """Coarse-to-fine search for the K maximising ``score``.

    Evaluates an evenly spaced grid, narrows the interval to the grid
    neighbours of the best value and repeats until the interval holds at
    most ``n_grid`` integers, which are then scanned densely. Returns the
    best K and the cache of all evaluated scores.
    """
    if k_min > k_max:
        raise UsageError("empty K interval")
    cache: dict[int, float] = {}

    def ev(k):
        if k not in cache:
            cache[k] = score(k)
        return cache[k]

    n_grid = max(n_grid, 3)
    lo, hi = k_min, k_max
    while hi - lo + 1 > n_grid:
        grid = sorted({int(round(x)) for x in np.linspace(lo, hi, n_grid)})
        vals = [ev(k) for k in grid]
        b = int(np.argmax(vals))
        new_lo = grid[b - 1] if b > 0 else grid[0]
        new_hi = grid[b + 1] if b + 1 < len(grid) else grid[-1]
        if (new_lo, new_hi) == (lo, hi):
            break  # bracket no longer shrinks; scan it densely
        lo, hi = new_lo, new_hi
    for k in range(lo, hi + 1):
        ev(k)
    best = max(cache, key=lambda k: (cache[k], -k))
    return best, cache


def dense_search(score: Callable[[int], float], ks: Iterable[int]) -> tuple[int, dict]:
    cache = {k: score(k) for k in ks}
    best = max(cache, key=lambda k: (cache[k], -k))
    return best, cache
