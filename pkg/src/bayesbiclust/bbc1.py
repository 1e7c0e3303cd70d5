"""Binary clustering with global variable selection.

Each column is either a biomarker (``S_j = 1``: its Bernoulli rate differs
between clusters) or background (``S_j = 0``: one rate shared by all rows).
Rates are integrated out against Beta priors and, for the cluster updates,
``S`` is integrated out as well, so the chain moves on ``C`` alone and ``S``
is redrawn exactly given ``C`` after every sweep.

The marginal likelihood ``P(Y | K)`` is estimated from the identity
``P(Y|K) = P(Y|C*,K) P(C*|K) / P(C*|Y,K)`` with the denominator taken as
the empirical frequency of the modal partition among the retained samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels as kern
from ._base import (FitResult, KFit, MCMCConfig, as_k_values, canonical_labels,
                    dense_search, log_class_size, log_prior_C, map_extract)
from ._validation import check_binary
from .exceptions import DataError, EstimationError, UsageError
from .stats import beta_bernoulli_logmarg, log_beta, rng_stream


@dataclass(frozen=True)
class Bbc1Hyper:
    gamma0: float = 0.0
    pi_s: float = 0.1
    alpha_theta: tuple = (1.0, 1.0)
    alpha_w: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.gamma0 < 1.0:
            raise UsageError("gamma0 must lie in [0, 1)")
        if not 0.0 < self.pi_s < 1.0:
            raise UsageError("pi_s must lie in (0, 1)")
        if min(self.alpha_theta) <= 0 or min(self.alpha_w) <= 0:
            raise UsageError("Beta prior parameters must be positive")

    def log_cluster_prior(self, K):
        out = np.full(K + 1, math.log((1.0 - self.gamma0) / K))
        out[0] = math.log(self.gamma0) if self.gamma0 > 0 else -np.inf
        return out


# ---------------------------------------------------------------------------
# Reference (non-incremental) evaluations
# ---------------------------------------------------------------------------

def col_logmarg_bbc1(column, C, s, hyper: Bbc1Hyper, K: int) -> float:
    """``ln P(Y_j | C, S_j = s)`` for one binary column.

    Background-only when ``s = 0``; otherwise one Beta-Bernoulli term per
    cluster plus a background term for rows in the null cluster.
    """
    column = np.asarray(column)
    C = np.asarray(C)
    if column.size and not np.isin(column, (0, 1)).all():
        raise DataError("column must be binary")
    aw, bw = hyper.alpha_w
    if not s:
        n1 = int(column.sum())
        return beta_bernoulli_logmarg(n1, column.size - n1, aw, bw)
    at, bt = hyper.alpha_theta
    out = 0.0
    null = column[C == 0]
    if null.size:
        out += beta_bernoulli_logmarg(int(null.sum()), int(null.size - null.sum()), aw, bw)
    for k in range(1, K + 1):
        yk = column[C == k]
        out += beta_bernoulli_logmarg(int(yk.sum()), int(yk.size - yk.sum()), at, bt)
    return out


def collapsed_logmarg_bbc1(Y, C, hyper: Bbc1Hyper, K: int) -> float:
    """``ln P(Y | C, K)`` with both the rates and ``S`` integrated out."""
    lp, l1p = math.log(hyper.pi_s), math.log1p(-hyper.pi_s)
    out = 0.0
    for j in range(Y.shape[1]):
        out += np.logaddexp(l1p + col_logmarg_bbc1(Y[:, j], C, 0, hyper, K),
                            lp + col_logmarg_bbc1(Y[:, j], C, 1, hyper, K))
    return float(out)


def logpost_bbc1(C, S, Y, hyper: Bbc1Hyper, K: int) -> float:
    """Unnormalised ``ln P(C, S | Y, K)``."""
    lp, l1p = math.log(hyper.pi_s), math.log1p(-hyper.pi_s)
    out = log_prior_C(C, K, hyper.gamma0)
    for j in range(Y.shape[1]):
        s = int(S[j])
        out += (lp if s else l1p) + col_logmarg_bbc1(Y[:, j], C, s, hyper, K)
    return float(out)


def s_posterior_bbc1(Y, C, hyper: Bbc1Hyper, K: int) -> np.ndarray:
    """``P(S_j = 1 | C, Y, K)`` for every column."""
    state = Bbc1State(Y, C, K, hyper)
    d = (math.log(hyper.pi_s) + state.nullbg + state.fg
         - math.log1p(-hyper.pi_s) - state.bg)
    return 1.0 / (1.0 + np.exp(-d))


# ---------------------------------------------------------------------------
# Incremental chain state
# ---------------------------------------------------------------------------

class Bbc1State:
    """Chain state with cached counts and per-column marginals."""

    def __init__(self, Y, C, K, hyper: Bbc1Hyper, S=None):
        self.Y = np.ascontiguousarray(Y, dtype=np.uint8)
        self.K = int(K)
        self.hyper = hyper
        n = self.Y.shape[0]
        self.C = np.array(C, dtype=np.int64)
        if self.C.shape != (n,):
            raise UsageError("C must have one label per row")
        if self.C.size and (self.C.min() < 0 or self.C.max() > K):
            raise UsageError(f"labels must lie in 0..{K}")
        if hyper.gamma0 == 0 and np.any(self.C == 0):
            raise UsageError("label 0 is forbidden when gamma0 == 0")
        self.S = np.zeros(self.Y.shape[1], dtype=np.int64) if S is None else np.array(S, dtype=np.int64)
        a1, a2 = (float(a) for a in hyper.alpha_theta)
        w1, w2 = (float(a) for a in hyper.alpha_w)
        # tab[y, slot, m] = lgamma(prior + m); slot 0 background, 1 biomarker
        self._tab = np.stack([
            np.stack([kern.lgamma_table(w2, n), kern.lgamma_table(a2, n)]),
            np.stack([kern.lgamma_table(w1, n), kern.lgamma_table(a1, n)]),
            np.stack([kern.lgamma_table(w1 + w2, n), kern.lgamma_table(a1 + a2, n)]),
        ])
        self._lb = (log_beta(a1, a2), log_beta(w1, w2))
        self._prior = np.empty((2, K + 1))
        self._prior[0] = a2
        self._prior[1] = a1
        self._prior[0, 0] = w2
        self._prior[1, 0] = w1
        self.N1 = self.Y.sum(axis=0).astype(np.int64)
        self.log_pi = math.log(hyper.pi_s)
        self.log_1mpi = math.log1p(-hyper.pi_s)
        self.logprior = hyper.log_cluster_prior(K)
        self.refresh()

    def refresh(self):
        """Rebuild counts and cached marginals from ``C`` (drops float drift)."""
        self.cnt, self.nk = kern.bbc1_counts(self.Y, self.C, self.K)
        lba, lbw = self._lb
        self.bg, self.nullbg, self.fg = kern.bbc1_column_terms(
            self.cnt, self.nk, self.N1, self.Y.shape[0], self._tab, lba, lbw)

    def sweep_C(self, rng):
        u = rng.random(self.Y.shape[0])
        kern.bbc1_sweep_C(self.Y, self.C, self.cnt, self.nk, self.bg, self.nullbg, self.fg,
                          self.logprior, self.log_pi, self.log_1mpi, self._prior,
                          self._tab, u)

    def sweep_S(self, rng):
        """Redraw S given C; returns ``(ln P(Y|C), ln P(Y|C,S) + ln P(S))``."""
        u = rng.random(self.Y.shape[1])
        return kern.bbc1_sweep_S(self.bg, self.nullbg, self.fg,
                                 self.log_pi, self.log_1mpi, self.S, u)

    def log_prior_C(self):
        return log_prior_C(self.C, self.K, self.hyper.gamma0)


def gibbs_update_C_bbc1(state: Bbc1State, rng) -> Bbc1State:
    state.sweep_C(rng)
    return state


def gibbs_update_S_bbc1(state: Bbc1State, rng) -> Bbc1State:
    state.sweep_S(rng)
    return state


def init_labels(n, K, gamma0, rng):
    C = rng.integers(1, K + 1, size=n)
    if gamma0 > 0:
        C[rng.random(n) < gamma0] = 0
    return C


@dataclass
class Bbc1Samples:
    """Retained draws from one or more chains at a fixed K."""

    K: int
    C: np.ndarray          # (M, n)
    S: np.ndarray          # (M, p) bool
    logpost: np.ndarray    # ln P(Y|C,S) + ln P(C) + ln P(S)
    collapsed: np.ndarray  # ln P(Y|C) + ln P(C)


def run_chain_bbc1(Y, K, hyper: Bbc1Hyper, mcmc: MCMCConfig, stream=(0,)) -> Bbc1Samples:
    Y = np.ascontiguousarray(Y, dtype=np.uint8)
    n, p = Y.shape
    M = mcmc.n_keep * mcmc.n_chains
    Cs = np.empty((M, n), dtype=np.int16)
    Ss = np.empty((M, p), dtype=bool)
    lps = np.empty(M)
    cols = np.empty(M)
    m = 0
    for chain in range(mcmc.n_chains):
        rng = rng_stream(mcmc.seed, *stream, K, chain)
        state = Bbc1State(Y, init_labels(n, K, hyper.gamma0, rng), K, hyper)
        for it in range(mcmc.n_iter):
            state.refresh()
            state.sweep_C(rng)
            collapsed, joint = state.sweep_S(rng)
            if it >= mcmc.burn_in:
                lc = state.log_prior_C()
                Cs[m] = state.C
                Ss[m] = state.S.astype(bool)
                lps[m] = joint + lc
                cols[m] = collapsed + lc
                m += 1
    return Bbc1Samples(K, Cs, Ss, lps, cols)


def log_PY_given_K_bbc1(samples: Bbc1Samples):
    """Frequency-based estimate of ``ln P(Y | K)``.

    Returns ``(estimate, C_star, frequency)``. Samples are canonicalised by
    order of first appearance so that label-permuted copies of a partition
    are counted together.
    """
    M = samples.C.shape[0]
    if M == 0:
        raise UsageError("no samples")
    keys = {}
    first = {}
    for m in range(M):
        key = canonical_labels(samples.C[m]).tobytes()
        keys[key] = keys.get(key, 0) + 1
        first.setdefault(key, m)
    best = max(keys, key=lambda k: (keys[k], -first[k]))
    freq = keys[best]
    if freq == 0:
        raise EstimationError("modal partition has zero frequency")
    m_star = first[best]
    C_star = samples.C[m_star].astype(np.int64)
    # freq estimates the mass of the whole relabeling class of C*
    est = (samples.collapsed[m_star] - math.log(freq / M)
           + log_class_size(C_star, samples.K))
    return float(est), C_star, freq / M


def fit_bbc1(Y, k_values, hyper: Bbc1Hyper | None = None,
             mcmc: MCMCConfig | None = None, search=None) -> FitResult:
    """Fit every K in ``k_values`` and pick the one maximising ``P(Y|K)``."""
    hyper = hyper or Bbc1Hyper()
    mcmc = mcmc or MCMCConfig(n_iter=900, burn_in=200)
    Y = check_binary(Y)
    per_k = {}

    def score(K):
        samples = run_chain_bbc1(Y, K, hyper, mcmc)
        est, C_star, freq = log_PY_given_K_bbc1(samples)
        idx = map_extract(samples.logpost)
        C_hat = samples.C[idx].astype(np.int64)
        prob = s_posterior_bbc1(Y, C_hat, hyper, K)
        per_k[K] = KFit(K=K, labels=C_hat, selection=samples.S[idx].copy(),
                        log_marginal=est, logpost=samples.logpost, map_index=idx,
                        extra={"mode_frequency": freq, "selection_prob": prob,
                               "C_star": C_star})
        return est

    ks = as_k_values(k_values, Y.shape[0])
    if search is None:
        k_hat, _ = dense_search(score, ks)
    else:
        k_hat, _ = search(score)
    best = per_k[k_hat]
    prob = best.extra["selection_prob"]
    return FitResult(model="bbc1", k_values=sorted(per_k),
                     log_marginal={k: per_k[k].log_marginal for k in sorted(per_k)},
                     log_prior_k={k: 0.0 for k in per_k}, k_hat=k_hat,
                     labels=best.labels, selection=prob >= 0.5,
                     selection_prob=prob, per_k=per_k)


class BBC1(ClusterMixin, BaseEstimator):
    """Bayesian clustering of binary data with global variable selection.

    Parameters
    ----------
    n_clusters : int, iterable of int or None
        Candidate cluster counts. The count maximising the estimated
        marginal likelihood is kept. ``None`` scans ``1..max(2, n // 20)``.
    pi_s : float
        Prior probability that a column is a biomarker.
    gamma0 : float
        Prior probability of the null cluster (label 0). ``0`` disables it.
    alpha_theta, alpha_w : (float, float)
        Beta priors on biomarker and background rates.
    n_iter, burn_in, n_chains, random_state
        Chain settings.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        MAP cluster labels at the selected K (``1..K``; ``0`` = null).
    selected_features_ : ndarray of bool, shape (n_features,)
        Columns whose posterior biomarker probability at ``labels_`` is >= 0.5.
    selection_prob_ : ndarray of shape (n_features,)
    n_clusters_ : int
    log_marginal_ : dict
        ``{K: ln P(Y | K)}`` estimates.
    """

    def __init__(self, n_clusters=None, *, pi_s=0.1, gamma0=0.0,
                 alpha_theta=(1.0, 1.0), alpha_w=(1.0, 1.0),
                 n_iter=900, burn_in=200, n_chains=1, random_state=0):
        self.n_clusters = n_clusters
        self.pi_s = pi_s
        self.gamma0 = gamma0
        self.alpha_theta = alpha_theta
        self.alpha_w = alpha_w
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.random_state = random_state

    def _hyper(self):
        return Bbc1Hyper(gamma0=self.gamma0, pi_s=self.pi_s,
                         alpha_theta=tuple(self.alpha_theta), alpha_w=tuple(self.alpha_w))

    def fit(self, X, y=None):
        Y = check_binary(X)
        mcmc = MCMCConfig(self.n_iter, self.burn_in, self.n_chains, int(self.random_state or 0))
        res = fit_bbc1(Y, as_k_values(self.n_clusters, Y.shape[0]), self._hyper(), mcmc)
        self.fit_result_ = res
        self.labels_ = res.labels
        self.n_clusters_ = res.k_hat
        self.selected_features_ = res.selection
        self.selection_prob_ = res.selection_prob
        self.log_marginal_ = res.log_marginal
        self._train = Y
        self.n_features_in_ = Y.shape[1]
        return self

    def predict_log_proba(self, X):
        """Posterior predictive ``ln P(C_new = k | x_new, Y, labels_)``,
        columns ordered ``0..K`` (label 0 is -inf unless gamma0 > 0)."""
        check_is_fitted(self, "labels_")
        X = check_binary(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError("feature count differs from the training data")
        hyper = self._hyper()
        K = self.n_clusters_
        sel = self.selected_features_
        logits = np.tile(hyper.log_cluster_prior(K), (X.shape[0], 1))
        a1, a2 = hyper.alpha_theta
        w1, w2 = hyper.alpha_w
        Ysel = self._train[:, sel]
        Xs = X[:, sel].astype(float)
        for k in range(K + 1):
            rows = Ysel[self.labels_ == k]
            b1, b2 = (w1, w2) if k == 0 else (a1, a2)
            ones = rows.sum(axis=0)
            p1 = (b1 + ones) / (b1 + b2 + rows.shape[0])
            logits[:, k] += Xs @ np.log(p1) + (1 - Xs) @ np.log1p(-p1)
        logits -= np.logaddexp.reduce(logits, axis=1, keepdims=True)
        return logits

    def predict(self, X):
        return np.argmax(self.predict_log_proba(X), axis=1)
