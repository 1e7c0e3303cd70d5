"""Categorical bi-clustering with cluster-specific feature selection.

Every column j carries a selection vector ``S_j`` over the K clusters.
Clusters with ``S_kj = 1`` have their own category distribution on column j;
the remaining clusters share a pooled background distribution. Vectors with
exactly one zero describe the same likelihood as all-ones, so only the
``2**K - K`` canonical configurations are sampled.

Category probabilities are integrated out against ``Dirichlet(gamma)``;
K carries a truncated Poisson prior on ``K - 1``; ``ln P(Y | K)`` is
estimated with a Chib-style identity at a high-posterior partition.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_is_fitted

from . import _kernels as kern
from ._base import (FitResult, KFit, MCMCConfig, as_k_values, dense_search,
                    map_extract, truncated_poisson_logprior)
from ._validation import check_categorical
from .exceptions import DataError, DomainError, EstimationError, UsageError
from .stats import dirichlet_multinomial_logmarg, log_multibeta, rng_stream

K_CAP = 12
_PERM_EXACT = 7


@dataclass(frozen=True)
class Bbc2Hyper:
    alpha: float = 0.05
    pi_s: float = 0.1
    gamma: tuple | None = None  # None means all ones at the data's L
    k_cap: int = K_CAP

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not 0 < self.pi_s < 1:
            raise DomainError("pi_s must lie in (0, 1)")
        if self.gamma is not None and not all(g > 0 for g in self.gamma):
            raise DomainError("gamma must be componentwise positive")

    def gamma_for(self, L: int) -> np.ndarray:
        if self.gamma is None:
            return np.ones(L)
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (L,):
            raise DataError(f"gamma has length {g.size} but the data have {L} categories")
        return g


# ---------------------------------------------------------------------------
# Configuration space
# ---------------------------------------------------------------------------

def sj_config_space(K: int) -> list[tuple[int, ...]]:
    """Canonical selection vectors in lexicographic order (``2**K - K`` of them)."""
    if K < 1:
        raise UsageError("K must be >= 1")
    if K == 1:
        return [(1,)]
    return [b for b in itertools.product((0, 1), repeat=K) if sum(b) != K - 1]


def canonicalize(bits) -> tuple[int, ...]:
    bits = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in bits):
        raise UsageError("selection bits must be 0/1")
    if sum(bits) == len(bits) - 1:
        return (1,) * len(bits)
    return bits


def is_canonical(bits) -> bool:
    return sum(bits) != len(bits) - 1


def config_masks(K: int) -> np.ndarray:
    return np.array([sum(b << k for k, b in enumerate(cfg)) for cfg in sj_config_space(K)],
                    dtype=np.int64)


def sj_log_prior(config, pi_s: float, K: int) -> float:
    config = tuple(int(b) for b in config)
    if len(config) != K:
        raise UsageError(f"config length {len(config)} != K={K}")
    if not is_canonical(config):
        raise UsageError(f"{config} is not canonical")
    s = sum(config)
    if s == K:
        return math.log(pi_s ** K + K * pi_s ** (K - 1) * (1 - pi_s))
    return s * math.log(pi_s) + (K - s) * math.log1p(-pi_s)


def col_logmarg_bbc2(counts, config, gamma) -> float:
    """``ln P(Y_j | C, S_j)`` from per-cluster category counts (K x L)."""
    counts = np.asarray(counts, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if counts.ndim != 2 or len(config) != counts.shape[0]:
        raise UsageError("counts must be K x L matching the config length")
    sel = np.asarray(config, dtype=bool)
    out = dirichlet_multinomial_logmarg(counts[~sel].sum(axis=0), gamma)
    for row in counts[sel]:
        out += dirichlet_multinomial_logmarg(row, gamma)
    return float(out)


# ---------------------------------------------------------------------------
# Chain state
# ---------------------------------------------------------------------------

@dataclass
class ThetaDraw:
    """One draw of the category probabilities given (C, S)."""

    selected: np.ndarray    # (p, K, L); rows of unselected clusters copy background
    background: np.ndarray  # (p, L)


class Bbc2State:
    """Labels ``C`` (0-based here), configuration indices ``sidx`` and counts."""

    def __init__(self, Y, C, K, L, hyper: Bbc2Hyper, sidx=None):
        self.Y = np.ascontiguousarray(Y, dtype=np.uint8)
        n, p = self.Y.shape
        self.K, self.L, self.hyper = int(K), int(L), hyper
        if self.K > hyper.k_cap:
            raise UsageError(f"K={K} exceeds the enumeration cap {hyper.k_cap}; "
                             "use the hierarchical model (HBBC) instead")
        self.C = np.array(C, dtype=np.int64)
        if self.C.shape != (n,) or (n and (self.C.min() < 0 or self.C.max() >= K)):
            raise UsageError(f"C must hold one label in 0..{K - 1} per row")
        self.configs = sj_config_space(self.K)
        self.masks = config_masks(self.K)
        self.all_ones = len(self.configs) - 1
        self.logprior_cfg = np.array([sj_log_prior(c, hyper.pi_s, self.K) for c in self.configs])
        self.sidx = (np.full(p, self.all_ones, dtype=np.int64) if sidx is None
                     else np.array(sidx, dtype=np.int64))
        self.gamma = hyper.gamma_for(self.L)
        self.tg = np.stack([kern.lgamma_table(g, n) for g in self.gamma])
        self.tgs = kern.lgamma_table(self.gamma.sum(), n)
        self.dm0 = log_multibeta(self.gamma)
        self.log_cprior = -math.log(self.K)
        self.refresh()

    def refresh(self):
        self.cnt, self.nk = kern.bbc2_counts(self.Y, self.C, self.K, self.L)
        self.pool = kern.bbc2_pool(self.cnt, self.masks, self.sidx)

    def sweep_C(self, rng):
        u = rng.random(self.Y.shape[0])
        kern.bbc2_sweep_C(self.Y, self.C, self.cnt, self.nk, self.pool, self.masks,
                          self.sidx, self.gamma, self.log_cprior, u)

    def sweep_S(self, rng=None):
        """Redraw every S_j (or only evaluate when ``rng`` is None).

        Returns ``(ln P(Y|C), ln P(Y|C,S) + ln P(S), ln P(S|Y,C))``.
        """
        draw = rng is not None
        u = rng.random(self.Y.shape[1]) if draw else np.zeros(self.Y.shape[1])
        return kern.bbc2_sweep_S(self.cnt, self.pool, self.masks, self.sidx,
                                 self.logprior_cfg, self.tg, self.tgs, self.dm0, u, draw)

    def config_posterior(self):
        """Exact per-column conditional mode and configuration probabilities."""
        return kern.bbc2_conditional_mode(self.cnt, self.masks, self.logprior_cfg,
                                          self.tg, self.tgs, self.dm0)

    def log_prior_C(self):
        return self.Y.shape[0] * self.log_cprior

    def selection_bits(self, sidx=None):
        sidx = self.sidx if sidx is None else sidx
        return ((self.masks[sidx][:, None] >> np.arange(self.K)) & 1).astype(bool)


def gibbs_update_C_bbc2(state: Bbc2State, rng) -> Bbc2State:
    state.sweep_C(rng)
    return state


def gibbs_update_Sj_bbc2(state: Bbc2State, j: int, rng) -> Bbc2State:
    """Draw S_j alone from its conditional over the canonical configurations."""
    lp = np.empty(len(state.masks))
    kern.bbc2_column_config_logp(state.cnt[j], state.masks, state.logprior_cfg,
                                 state.tg, state.tgs, state.dm0, lp)
    w = np.exp(lp - lp.max())
    state.sidx[j] = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
    state.sidx[j] = min(state.sidx[j], len(w) - 1)
    state.pool = kern.bbc2_pool(state.cnt, state.masks, state.sidx)
    return state


def sample_theta_given_CS(state: Bbc2State, rng) -> ThetaDraw:
    """Dirichlet posterior draws for selected cluster rates and backgrounds."""
    g = state.gamma
    sel = rng.standard_gamma(state.cnt + g)
    sel /= sel.sum(axis=2, keepdims=True)
    bg = rng.standard_gamma(state.pool + g)
    bg /= bg.sum(axis=1, keepdims=True)
    bits = state.selection_bits()
    sel = np.where(bits[:, :, None], sel, bg[:, None, :])
    return ThetaDraw(sel, bg)


def _log_clip(x):
    return np.log(np.maximum(x, 1e-300))


def init_labels(Y, K, L, rng, method="kmeans"):
    """Starting labels (0-based): uniform at random, or k-means on the
    one-hot encoding of Y."""
    n = Y.shape[0]
    if method == "random" or K == 1 or n < K:
        return rng.integers(0, K, n).astype(np.int64)
    if method != "kmeans":
        raise UsageError(f"unknown init {method!r}")
    X = np.zeros((n, Y.shape[1] * L), dtype=np.float32)
    X[np.repeat(np.arange(n), Y.shape[1]),
      (np.arange(Y.shape[1]) * L + Y).ravel()] = 1.0
    km = KMeans(K, n_init=4, random_state=int(rng.integers(2**31))).fit(X)
    return km.labels_.astype(np.int64)


# ---------------------------------------------------------------------------
# Sampling and marginal likelihood
# ---------------------------------------------------------------------------

@dataclass
class Bbc2Samples:
    K: int
    C: np.ndarray          # (M, n) 0-based
    sidx: np.ndarray       # (M, p) configuration indices
    logpost: np.ndarray    # ln P(Y|C,S) + ln P(C) + ln P(S)
    collapsed: np.ndarray  # ln P(Y|C) + ln P(C)
    rb_logprob: np.ndarray  # (M, n, K) ln P(C_i = k | Y, Theta^m, S^m)
    extra: dict = field(default_factory=dict)


def run_chain_bbc2(Y, K, L, hyper: Bbc2Hyper, mcmc: MCMCConfig, stream=(0,),
                   keep_rb=True, init="kmeans") -> Bbc2Samples:
    """Collapsed Gibbs at fixed K. Every column starts fully selected so the
    first label sweep sees all the data."""
    Y = np.ascontiguousarray(Y, dtype=np.uint8)
    n, p = Y.shape
    M = mcmc.n_keep * mcmc.n_chains
    Cs = np.empty((M, n), dtype=np.int16)
    Ss = np.empty((M, p), dtype=np.int16)
    lps = np.empty(M)
    cols = np.empty(M)
    rb = np.empty((M, n, K)) if keep_rb else np.empty((0, n, K))
    m = 0
    for chain in range(mcmc.n_chains):
        rng = rng_stream(mcmc.seed, *stream, K, chain)
        state = Bbc2State(Y, init_labels(Y, K, L, rng, init), K, L, hyper)
        for it in range(mcmc.n_iter):
            if K > 1:
                state.sweep_C(rng)
            collapsed, joint, _ = state.sweep_S(rng)
            if it >= mcmc.burn_in:
                lc = state.log_prior_C()
                Cs[m] = state.C
                Ss[m] = state.sidx
                lps[m] = joint + lc
                cols[m] = collapsed + lc
                if keep_rb:
                    th = sample_theta_given_CS(state, rng)
                    rb[m] = kern.bbc2_rb_logprob(Y, _log_clip(th.selected),
                                                 _log_clip(th.background), state.masks,
                                                 state.sidx, state.log_cprior)
                m += 1
    return Bbc2Samples(K, Cs, Ss, lps, cols, rb)


def _log_mean_over_relabelings(A, n_used):
    """``ln (1/K!) sum_sigma exp(sum_k A[k, sigma(k)])`` for a K x K matrix.

    Exact for small K; otherwise the dominant relabeling, counted once per
    permutation of the empty labels."""
    K = A.shape[0]
    if K <= _PERM_EXACT:
        perms = np.array(list(itertools.permutations(range(K))))
        vals = A[np.arange(K), perms].sum(axis=1)
        return float(logsumexp(vals)) - math.lgamma(K + 1)
    r, c = linear_sum_assignment(-A)
    return (float(A[r, c].sum()) + math.lgamma(K - n_used + 1) - math.lgamma(K + 1))


def chib_log_PY_given_K(samples: Bbc2Samples, Y, L, hyper: Bbc2Hyper):
    """Chib estimate of ``ln P(Y | K)``.

    ``C*`` is the retained sample with the largest ``ln P(Y|C) + ln P(C)``.
    The identity used is::

        ln P(Y|K) = ln P(Y|C*,S*) + ln P(C*) + ln P(S*)
                    - ln P(S*|Y,C*) - ln P(C*|Y)

    with ``S*`` the exact conditional mode at ``C*``. The ordinate
    ``P(C*|Y)`` is the Rao-Blackwell average of ``prod_i P(C_i = c*_i |
    Y, Theta^m, S^m)``, averaged over all relabelings of ``C*`` so the
    estimate does not depend on which label permutation the chain visits.

    Returns ``(estimate, C_star, details)``.
    """
    K = samples.K
    M = samples.C.shape[0]
    if M == 0:
        raise UsageError("no samples")
    idx = map_extract(samples.collapsed)
    C_star = samples.C[idx].astype(np.int64)
    state = Bbc2State(Y, C_star, K, L, hyper)
    mode, prob = state.config_posterior()
    state.sidx[:] = mode
    state.refresh()
    _, joint, log_cond = state.sweep_S(None)
    numer = joint + state.log_prior_C() - log_cond
    if K == 1:
        return float(numer), C_star, {"log_ordinate": 0.0, "S_star": mode}
    if samples.rb_logprob.shape[0] != M:
        raise UsageError("samples were drawn without Rao-Blackwell terms")
    onehot = np.zeros((samples.C.shape[1], K))
    onehot[np.arange(C_star.size), C_star] = 1.0
    A = np.einsum("ik,mil->mkl", onehot, samples.rb_logprob)
    used = int(np.unique(C_star).size)
    terms = np.array([_log_mean_over_relabelings(A[m], used) for m in range(M)])
    log_ord = float(logsumexp(terms)) - math.log(M)
    if not np.isfinite(log_ord):
        raise EstimationError("Chib ordinate is numerically zero")
    return float(numer - log_ord), C_star, {"log_ordinate": log_ord, "S_star": mode}


def k1_log_marginal(Y, L, hyper: Bbc2Hyper) -> float:
    """Closed-form ``ln P(Y | K = 1) = sum_j ln DM(n_j; gamma)``."""
    Y = np.asarray(Y)
    g = hyper.gamma_for(L)
    counts = np.stack([(Y == l).sum(axis=0) for l in range(L)], axis=1)
    return float(sum(dirichlet_multinomial_logmarg(c, g) for c in counts))


def fit_bbc2_at_K(Y, K, L, hyper: Bbc2Hyper, mcmc: MCMCConfig, stream=(0,),
                  selection="sample") -> KFit:
    """Run the chain(s) at one K and summarise: Chib estimate, MAP labels,
    per-column selection."""
    if K > hyper.k_cap:
        raise UsageError(f"K={K} exceeds the enumeration cap {hyper.k_cap}; "
                         "use the hierarchical model (HBBC) instead")
    samples = run_chain_bbc2(Y, K, L, hyper, mcmc, stream)
    est, C_star, info = chib_log_PY_given_K(samples, Y, L, hyper)
    idx = map_extract(samples.logpost)
    C_hat = samples.C[idx].astype(np.int64)
    state = Bbc2State(Y, C_hat, K, L, hyper)
    mode, prob = state.config_posterior()
    if selection == "conditional":
        sidx = mode
    elif selection == "sample":
        sidx = samples.sidx[idx].astype(np.int64)
    else:
        raise UsageError(f"unknown selection rule {selection!r}")
    bits = state.selection_bits(sidx)
    cfg_bits = state.selection_bits(np.arange(len(state.masks)))
    marg = prob @ cfg_bits.astype(float)
    return KFit(K=K, labels=C_hat + 1, selection=bits, log_marginal=est,
                logpost=samples.logpost, map_index=idx,
                extra={"selection_prob": marg, "config_index": sidx,
                       "C_star": C_star + 1, "log_ordinate": info["log_ordinate"]})


def fit_bbc2(Y, k_values=None, hyper: Bbc2Hyper | None = None,
             mcmc: MCMCConfig | None = None, n_categories=None, search=None,
             selection="sample") -> FitResult:
    """Fit each K and select ``argmax ln P(K) + ln P(Y|K)``.

    ``labels`` are 1-based; ``selection`` is a ``(p, K_hat)`` boolean matrix
    of canonical selection vectors.
    """
    hyper = hyper or Bbc2Hyper()
    mcmc = mcmc or MCMCConfig(n_iter=500, burn_in=200)
    Y, L = check_categorical(Y, n_categories)
    ks = as_k_values(k_values, Y.shape[0])
    if ks[-1] > hyper.k_cap:
        raise UsageError(f"K={ks[-1]} exceeds the enumeration cap {hyper.k_cap}; "
                         "use the hierarchical model (HBBC) instead")
    per_k = {}
    prior = {}

    def score(K):
        per_k[K] = fit_bbc2_at_K(Y, K, L, hyper, mcmc, selection=selection)
        prior[K] = truncated_poisson_logprior(K, hyper.alpha)
        return per_k[K].log_marginal + prior[K]

    if search is None:
        k_hat, _ = dense_search(score, ks)
    else:
        k_hat, _ = search(score)
    best = per_k[k_hat]
    return FitResult(model="bbc2", k_values=sorted(per_k),
                     log_marginal={k: per_k[k].log_marginal for k in sorted(per_k)},
                     log_prior_k={k: prior[k] for k in sorted(prior)}, k_hat=k_hat,
                     labels=best.labels, selection=best.selection,
                     selection_prob=best.extra["selection_prob"], per_k=per_k)


class BBC2(ClusterMixin, BaseEstimator):
    """Bayesian bi-clustering of categorical data.

    Parameters
    ----------
    n_clusters : int, iterable of int or None
        Candidate cluster counts; ``None`` scans ``1..max(2, n // 20)``.
    alpha : float
        Rate of the truncated Poisson prior on ``K - 1``.
    pi_s : float
        Prior probability that a cluster selects a column.
    gamma : sequence of float or None
        Dirichlet prior; all ones when ``None``.
    n_categories : int or None
        Number of categories L; inferred from the data when ``None``.
    n_iter, burn_in, n_chains, random_state
        Chain settings.

    Attributes
    ----------
    labels_ : ndarray (n_samples,), 1-based cluster labels
    selection_ : ndarray of bool (n_features, n_clusters_)
    selection_prob_ : ndarray (n_features, n_clusters_)
    n_clusters_ : int
    log_marginal_ : dict
    """

    def __init__(self, n_clusters=None, *, alpha=0.05, pi_s=0.1, gamma=None,
                 n_categories=None, n_iter=500, burn_in=200, n_chains=1, random_state=0):
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.pi_s = pi_s
        self.gamma = gamma
        self.n_categories = n_categories
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.random_state = random_state

    def _hyper(self):
        g = None if self.gamma is None else tuple(float(x) for x in self.gamma)
        return Bbc2Hyper(alpha=self.alpha, pi_s=self.pi_s, gamma=g)

    def fit(self, X, y=None):
        Y, L = check_categorical(X, self.n_categories)
        mcmc = MCMCConfig(self.n_iter, self.burn_in, self.n_chains, int(self.random_state or 0))
        res = fit_bbc2(Y, as_k_values(self.n_clusters, Y.shape[0]), self._hyper(), mcmc, L)
        self.fit_result_ = res
        self.labels_ = res.labels
        self.n_clusters_ = res.k_hat
        self.selection_ = res.selection
        self.selection_prob_ = res.selection_prob
        self.log_marginal_ = res.log_marginal
        self.n_categories_ = L
        self.n_features_in_ = Y.shape[1]
        self._train = Y
        return self

    def predict_log_proba(self, X):
        """Posterior predictive ``ln P(C_new = k | x_new, Y, labels_, selection_)``
        with columns ordered ``1..K``."""
        check_is_fitted(self, "labels_")
        X, _ = check_categorical(X, self.n_categories_)
        if X.shape[1] != self.n_features_in_:
            raise DataError("feature count differs from the training data")
        K, L = self.n_clusters_, self.n_categories_
        g = self._hyper().gamma_for(L)
        Yt = self._train
        C = self.labels_ - 1
        cnt = np.stack([np.stack([(Yt[C == k] == l).sum(axis=0) for l in range(L)], axis=1)
                        for k in range(K)], axis=1)  # (p, K, L)
        sel = self.selection_
        pool = np.where(~sel[:, :, None], cnt, 0).sum(axis=1)
        own = np.log((cnt + g) / (cnt + g).sum(axis=2, keepdims=True))
        bg = np.log((pool + g) / (pool + g).sum(axis=1, keepdims=True))
        lp = np.where(sel[:, :, None], own, bg[:, None, :])  # (p, K, L)
        cols = np.arange(X.shape[1])
        logits = np.full((X.shape[0], K), -math.log(K))
        for k in range(K):
            logits[:, k] += lp[cols, k, X].sum(axis=1)
        return logits - logsumexp(logits, axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.predict_log_proba(X), axis=1) + 1
