"""Co-expression modules across many datasets from Fisher-z correlation matrices.

Each dataset d contributes a gene-by-gene matrix of z-transformed
correlations. A pair of query genes in the same non-null cluster k on a
layer that supports k is ``N(theta_dk, sigma_dk^2)`` with a
Normal-Inverse-Gamma prior; every other pair follows the layer background
``N(theta_0d, sigma_0d^2)``, fixed at its genome-wide estimate. Rates and
support indicators are integrated out, leaving a Gibbs sampler on labels
``C`` in ``{0, ..., K}`` (0 is the null cluster).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._base import MCMCConfig, as_k_values
from .exceptions import DataError, DomainError, UsageError
from .stats import LOG_2PI, NIGParams, nig_logmarg, nig_logmarg_array, rng_stream

_CLAMP = 1.0 - 1e-6


def fisher_z(r):
    """``0.5 * ln((1 + r) / (1 - r))``; values with ``|r| >= 1`` are clamped."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        warnings.warn("correlation of magnitude 1 clamped before the z-transform",
                      RuntimeWarning, stacklevel=2)
        r = np.clip(r, -_CLAMP, _CLAMP)
    out = np.arctanh(r)
    return out if out.ndim else float(out)


def background_params(Z):
    """Mean and population variance of the strict upper triangle."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1] or Z.shape[0] < 3:
        raise DataError("background needs a square matrix over at least 3 genes")
    vals = Z[np.triu_indices(Z.shape[0], 1)]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise DataError("no finite pair values")
    theta, var = float(vals.mean()), float(vals.var())
    if not var > 0:
        raise DataError("background variance is zero")
    return theta, var


def correlation_z(expr, min_periods=3):
    """Pairwise-complete gene correlations (genes in rows) on the z scale."""
    df = pd.DataFrame(np.asarray(expr, dtype=float).T)
    r = df.corr(min_periods=min_periods).to_numpy()
    np.fill_diagonal(r, 0.0)
    return fisher_z(np.nan_to_num(r, nan=0.0))


@dataclass
class CorrelationStack:
    """Query-gene z matrices ``Z[d]`` with their layer backgrounds."""

    Z: np.ndarray        # (p, n, n)
    theta0: np.ndarray   # (p,)
    var0: np.ndarray     # (p,)
    n_samples: np.ndarray | None = None
    layer_names: list = field(default_factory=list)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Z.ndim != 3 or self.Z.shape[1] != self.Z.shape[2]:
            raise DataError("stack must have shape (layers, n, n)")
        if not np.allclose(self.Z, np.swapaxes(self.Z, 1, 2), equal_nan=True):
            raise DataError("layer matrices must be symmetric")
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.var0 = np.asarray(self.var0, dtype=float)
        if np.any(self.var0 <= 0):
            raise DataError("background variances must be positive")
        if not self.layer_names:
            self.layer_names = [f"layer{d}" for d in range(self.Z.shape[0])]

    @property
    def n_layers(self):
        return self.Z.shape[0]

    @property
    def n_genes(self):
        return self.Z.shape[1]

    @classmethod
    def from_genome(cls, Zfull, query, n_samples=None, min_samples=10, names=None):
        """Backgrounds from each full genome matrix, then restrict to ``query``.

        Layers with fewer than ``min_samples`` samples are dropped entirely.
        """
        Zfull = np.asarray(Zfull, dtype=float)
        keep = np.arange(Zfull.shape[0])
        if n_samples is not None:
            n_samples = np.asarray(n_samples)
            keep = np.flatnonzero(n_samples >= min_samples)
            if keep.size == 0:
                raise DataError(f"every layer has fewer than {min_samples} samples")
        bg = [background_params(Zfull[d]) for d in keep]
        q = np.asarray(query)
        Z = Zfull[keep][:, q][:, :, q].copy()
        for d in range(Z.shape[0]):
            np.fill_diagonal(Z[d], 0.0)
        names = [names[d] for d in keep] if names else []
        return cls(Z, [b[0] for b in bg], [b[1] for b in bg],
                   None if n_samples is None else n_samples[keep], names)

    def pair_view(self):
        """``(n(n-1)/2, p)`` matrix of upper-triangle values and the pair index."""
        iu = np.triu_indices(self.n_genes, 1)
        return self.Z[:, iu[0], iu[1]].T.copy(), np.stack(iu, axis=1)

    @classmethod
    def from_pair_view(cls, pairs, n, theta0, var0):
        iu = np.triu_indices(n, 1)
        Z = np.zeros((pairs.shape[1], n, n))
        Z[:, iu[0], iu[1]] = pairs.T
        Z += np.swapaxes(Z, 1, 2)
        return cls(Z, theta0, var0)


def default_nig_prior(stack: CorrelationStack) -> NIGParams:
    return NIGParams(mu=float(np.mean(stack.theta0)) + 0.5, kappa=1.0, alpha=2.0,
                     beta=0.5 * float(np.median(stack.var0)))


def _bg_logpdf(y, theta0, var0):
    return -0.5 * (LOG_2PI + np.log(var0)) - (y - theta0) ** 2 / (2.0 * var0)


def block_logmarg(stack: CorrelationStack, C, k, d, selected, prior: NIGParams) -> float:
    """Within-cluster pair contribution of layer d for cluster ``k >= 1``."""
    if k < 1:
        raise UsageError("block_logmarg is defined for non-null clusters")
    C = np.asarray(C)
    idx = np.flatnonzero(C == k)
    iu = np.triu_indices(idx.size, 1)
    y = stack.Z[d][np.ix_(idx, idx)][iu]
    if y.size == 0:
        return 0.0
    if selected:
        return nig_logmarg(float(y.sum()), float((y * y).sum()), y.size, prior)
    return float(_bg_logpdf(y, stack.theta0[d], stack.var0[d]).sum())


def logmarg_C_integration(stack: CorrelationStack, C, prior: NIGParams, pi_s: float,
                          K: int | None = None) -> float:
    """``ln P(Y | C, K)`` with rates and support indicators integrated out."""
    C = np.asarray(C)
    K = int(C.max(initial=0)) if K is None else K
    n = stack.n_genes
    iu = np.triu_indices(n, 1)
    total = 0.0
    lp, l1p = math.log(pi_s), math.log1p(-pi_s)
    for d in range(stack.n_layers):
        y = stack.Z[d][iu]
        total += float(_bg_logpdf(y, stack.theta0[d], stack.var0[d]).sum())
        for k in range(1, K + 1):
            bg = block_logmarg(stack, C, k, d, False, prior)
            sel = block_logmarg(stack, C, k, d, True, prior)
            total += float(np.logaddexp(lp + sel, l1p + bg)) - bg
    return total


class IntegrationState:
    """Per-(layer, cluster) pair sums kept in step with ``C``."""

    def __init__(self, stack: CorrelationStack, C, K, prior: NIGParams, pi_s, gamma0):
        self.stack, self.K, self.prior = stack, int(K), prior
        self.C = np.array(C, dtype=np.int64)
        n = stack.n_genes
        if self.C.shape != (n,) or self.C.min() < 0 or self.C.max() > K:
            raise UsageError(f"C must hold one label in 0..{K} per gene")
        if not 0 < pi_s < 1:
            raise DomainError("pi_s must lie in (0, 1)")
        if not 0 <= gamma0 < 1:
            raise DomainError("gamma0 must lie in [0, 1)")
        self.lp, self.l1p = math.log(pi_s), math.log1p(-pi_s)
        Z = stack.Z.copy()
        for d in range(Z.shape[0]):
            np.fill_diagonal(Z[d], 0.0)
        self.Z = Z
        self.Z2 = Z * Z
        B = _bg_logpdf(Z, stack.theta0[:, None, None], stack.var0[:, None, None])
        for d in range(Z.shape[0]):
            np.fill_diagonal(B[d], 0.0)
        self.B = B
        self.log_cprior = np.empty(K + 1)
        self.log_cprior[0] = math.log(gamma0) if gamma0 > 0 else -np.inf
        self.log_cprior[1:] = math.log1p(-gamma0) - math.log(K)
        iu = np.triu_indices(n, 1)
        self.bg_all = float(B[:, iu[0], iu[1]].sum())
        self.refresh()

    def refresh(self):
        H = np.eye(self.K + 1)[self.C]  # (n, K+1)
        # pair sums within each cluster: 0.5 * h_k^T Z h_k (diagonal is zero)
        self.s1 = 0.5 * np.einsum("ik,dij,jk->dk", H, self.Z, H)
        self.s2 = 0.5 * np.einsum("ik,dij,jk->dk", H, self.Z2, H)
        self.sb = 0.5 * np.einsum("ik,dij,jk->dk", H, self.B, H)
        nk = H.sum(axis=0)
        self.m = nk * (nk - 1) / 2.0
        self.nk = nk

    def _terms(self, s1, s2, sb, m):
        sel = nig_logmarg_array(s1, s2, m, self.prior)
        return np.logaddexp(self.lp + sel, self.l1p + sb) - sb

    def log_marginal(self):
        return self.bg_all + float(self._terms(self.s1[:, 1:], self.s2[:, 1:],
                                               self.sb[:, 1:], self.m[1:]).sum())

    def log_prior_C(self):
        return float(self.log_cprior[self.C].sum())

    def selection_posterior(self):
        """``P(S_dk = 1 | Y, C)`` for every layer and non-null cluster."""
        sel = nig_logmarg_array(self.s1[:, 1:], self.s2[:, 1:], self.m[1:], self.prior)
        x = self.lp + sel - self.l1p - self.sb[:, 1:]
        return 1.0 / (1.0 + np.exp(-x))

    def sweep(self, rng):
        n = self.C.size
        u = rng.random(n)
        for i in range(n):
            self._update(i, u[i])

    def _update(self, i, u):
        H = np.eye(self.K + 1)[self.C]
        H[i] = 0.0
        a1 = self.Z[:, i, :] @ H     # (p, K+1) sums of pair values with i
        a2 = self.Z2[:, i, :] @ H
        ab = self.B[:, i, :] @ H
        c = self.C[i]
        cnt = H.sum(axis=0)
        # remove i from c
        self.s1[:, c] -= a1[:, c]
        self.s2[:, c] -= a2[:, c]
        self.sb[:, c] -= ab[:, c]
        self.nk[c] -= 1
        self.m[c] -= cnt[c]
        base = self._terms(self.s1[:, 1:], self.s2[:, 1:], self.sb[:, 1:], self.m[1:])
        plus = self._terms(self.s1[:, 1:] + a1[:, 1:], self.s2[:, 1:] + a2[:, 1:],
                           self.sb[:, 1:] + ab[:, 1:], self.m[1:] + cnt[1:])
        logw = self.log_cprior.copy()
        logw[1:] += (plus - base).sum(axis=0)
        w = np.exp(logw - logw.max())
        k = int(np.searchsorted(np.cumsum(w), u * w.sum(), side="right"))
        k = min(k, self.K)
        self.C[i] = k
        self.s1[:, k] += a1[:, k]
        self.s2[:, k] += a2[:, k]
        self.sb[:, k] += ab[:, k]
        self.nk[k] += 1
        self.m[k] += cnt[k]


def gibbs_update_C_integration(state: IntegrationState, rng) -> IntegrationState:
    state.sweep(rng)
    return state


def selection_posterior(state: IntegrationState) -> np.ndarray:
    return state.selection_posterior()


@dataclass
class IntegrationFit:
    k_hat: int
    labels: np.ndarray
    selection_prob: np.ndarray   # (p, K_hat)
    log_post: float
    per_k: dict


def fit_integration(stack: CorrelationStack, k_values=None, prior: NIGParams | None = None,
                    pi_s=0.1, gamma0=0.5, mcmc: MCMCConfig | None = None) -> IntegrationFit:
    """Run a chain per K and keep the sample with the largest
    ``ln P(Y | C, K) + ln P(C | K)`` across all K (uniform prior on K)."""
    prior = prior or default_nig_prior(stack)
    mcmc = mcmc or MCMCConfig(n_iter=200, burn_in=50)
    ks = as_k_values(k_values if k_values is not None else range(1, 6), stack.n_genes)
    best = None
    per_k = {}
    prev = None
    for K in ks:
        top = (-np.inf, None)
        starts = []
        if prev is not None and prev.max() <= K:
            # warm start: the previous best labels, with the new label empty
            starts.append(prev)
        starts.extend(["null"] * mcmc.n_chains + ["random"])
        for chain, C0 in enumerate(starts):
            rng = rng_stream(mcmc.seed, K, chain)
            if isinstance(C0, str):
                # null start: modules nucleate from supported pairs; random
                # start: modules shrink from an over-full assignment
                C0 = (np.zeros(stack.n_genes, dtype=np.int64) if C0 == "null" and gamma0 > 0
                      else rng.integers(1, K + 1, stack.n_genes))
            st = IntegrationState(stack, C0, K, prior, pi_s, gamma0)
            for it in range(mcmc.n_iter):
                st.sweep(rng)
                if it >= mcmc.burn_in:
                    lp = st.log_marginal() + st.log_prior_C()
                    if lp > top[0]:
                        top = (lp, st.C.copy())
        prev = top[1]
        per_k[K] = top[0]
        if best is None or top[0] > best[0]:
            best = (top[0], K, top[1])
    lp, K, C = best
    st = IntegrationState(stack, C, K, prior, pi_s, gamma0)
    return IntegrationFit(K, C, st.selection_posterior(), lp, per_k)


class IntegrationBiclust(ClusterMixin, BaseEstimator):
    """Cluster query genes into co-expression modules and score which layers
    support each module.

    ``fit`` takes a :class:`CorrelationStack` (or a ``(p, n, n)`` array of
    z matrices, in which case backgrounds are estimated from the same
    matrices).

    Attributes
    ----------
    labels_ : ndarray, ``0`` = null gene, ``1..K`` modules
    selection_prob_ : ndarray ``(n_layers, n_clusters_)``
    n_clusters_ : int
    """

    def __init__(self, n_clusters=None, *, pi_s=0.1, gamma0=0.5, prior=None,
                 n_iter=200, burn_in=50, n_chains=1, random_state=0):
        self.n_clusters = n_clusters
        self.pi_s = pi_s
        self.gamma0 = gamma0
        self.prior = prior
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.n_chains = n_chains
        self.random_state = random_state

    def fit(self, X, y=None):
        if not isinstance(X, CorrelationStack):
            Z = np.asarray(X, dtype=float)
            if Z.ndim != 3:
                raise DataError("expected a (layers, n, n) array")
            bg = [background_params(z) for z in Z]
            X = CorrelationStack(Z, [b[0] for b in bg], [b[1] for b in bg])
        mcmc = MCMCConfig(self.n_iter, self.burn_in, self.n_chains, int(self.random_state or 0))
        res = fit_integration(X, self.n_clusters, self.prior, self.pi_s, self.gamma0, mcmc)
        self.fit_result_ = res
        self.labels_ = res.labels
        self.n_clusters_ = res.k_hat
        self.selection_prob_ = res.selection_prob
        return self

    def supporting_layers(self, threshold=0.5):
        check_is_fitted(self, "labels_")
        return self.selection_prob_ >= threshold
