import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from bayesbiclust import IntegrationBiclust
from bayesbiclust._base import MCMCConfig
from bayesbiclust.exceptions import DataError, DomainError, UsageError
from bayesbiclust.integrate import (CorrelationStack, IntegrationState, background_params,
                                    block_logmarg, correlation_z, default_nig_prior,
                                    fisher_z, fit_integration, logmarg_C_integration)
from bayesbiclust.metrics import ari
from bayesbiclust.simulate import gen_integration
from bayesbiclust.stats import NIGParams, rng_stream


def _nig_oracle(y, prior):
    # written out independently of the package
    m = len(y)
    if m == 0:
        return 0.0
    y = np.asarray(y)
    kn = prior.kappa + m
    mn = (prior.kappa * prior.mu + y.sum()) / kn
    an = prior.alpha + m / 2
    bn = prior.beta + 0.5 * (np.sum((y - y.mean()) ** 2)
                             + prior.kappa * m * (y.mean() - prior.mu) ** 2 / kn)
    return (math.lgamma(an) - math.lgamma(prior.alpha) + prior.alpha * math.log(prior.beta)
            - an * math.log(bn) + 0.5 * math.log(prior.kappa / kn) - m / 2 * math.log(2 * math.pi))


def _tiny_stack(seed=0, n=5, p=2):
    rng = np.random.default_rng(seed)
    Z = rng.normal(0.1, 0.4, size=(p, n, n))
    Z = np.triu(Z, 1)
    Z = Z + np.swapaxes(Z, 1, 2)
    return CorrelationStack(Z, [0.1] * p, [0.16] * p)


def _oracle_logmarg(stack, C, K, prior, pi):
    """Sum over every support matrix S (layers x clusters)."""
    n, p = stack.n_genes, stack.n_layers
    iu = np.triu_indices(n, 1)
    tot = []
    for S in itertools.product((0, 1), repeat=p * K):
        S = np.array(S).reshape(p, K)
        lp = S.sum() * math.log(pi) + (S.size - S.sum()) * math.log(1 - pi)
        for d in range(p):
            for a, b in zip(*iu):
                k = C[a]
                if k > 0 and C[b] == k and S[d, k - 1]:
                    continue
                lp += norm.logpdf(stack.Z[d, a, b], stack.theta0[d], math.sqrt(stack.var0[d]))
            for k in range(1, K + 1):
                if S[d, k - 1]:
                    idx = np.flatnonzero(C == k)
                    y = [stack.Z[d, a, b] for a, b in itertools.combinations(idx, 2)]
                    lp += _nig_oracle(y, prior)
        tot.append(lp)
    return float(logsumexp(tot))


def test_fisher_z():
    assert fisher_z(0.5) == pytest.approx(0.5 * math.log(3.0))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        z = fisher_z(np.array([1.0, -1.0]))
    assert np.all(np.isfinite(z)) and w


def test_background_params():
    Z = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    assert background_params(Z) == pytest.approx((2.0, 2 / 3))
    with pytest.raises(DataError):
        background_params(np.zeros((3, 3)))


def test_correlation_z_pairwise_complete():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 30))
    X[1, :5] = np.nan
    Z = correlation_z(X)
    ok = ~np.isnan(X[1])
    r = np.corrcoef(X[0, ok], X[1, ok])[0, 1]
    assert Z[0, 1] == pytest.approx(np.arctanh(r))
    assert np.all(np.diag(Z) == 0)


@pytest.mark.parametrize("C,K", [([1, 1, 0, 2, 2], 2), ([1, 1, 1, 0, 0], 1), ([0] * 5, 2)])
def test_collapsed_marginal_matches_oracle(C, K):
    stack = _tiny_stack()
    prior = NIGParams(0.5, 1.0, 2.0, 0.1)
    C = np.array(C)
    got = logmarg_C_integration(stack, C, prior, 0.3, K)
    assert got == pytest.approx(_oracle_logmarg(stack, C, K, prior, 0.3), abs=1e-8)
    st_ = IntegrationState(stack, C, K, prior, 0.3, 0.5)
    assert st_.log_marginal() == pytest.approx(got, abs=1e-8)


def test_block_logmarg_matches_oracle():
    stack = _tiny_stack(1)
    prior = NIGParams(0.3, 2.0, 2.5, 0.2)
    C = np.array([1, 1, 1, 2, 0])
    y = [stack.Z[0, a, b] for a, b in itertools.combinations([0, 1, 2], 2)]
    assert block_logmarg(stack, C, 1, 0, True, prior) == pytest.approx(_nig_oracle(y, prior))
    assert block_logmarg(stack, C, 2, 0, True, prior) == 0.0
    with pytest.raises(UsageError):
        block_logmarg(stack, C, 0, 0, True, prior)


@given(st.integers(0, 10_000))
def test_incremental_state_matches_scratch(seed):
    stack = _tiny_stack(seed % 7, n=7, p=3)
    rng = np.random.default_rng(seed)
    prior = default_nig_prior(stack)
    st_ = IntegrationState(stack, rng.integers(0, 3, 7), 2, prior, 0.2, 0.4)
    for _ in range(2):
        st_.sweep(rng)
    inc = (st_.s1.copy(), st_.s2.copy(), st_.sb.copy(), st_.m.copy(), st_.log_marginal())
    st_.refresh()
    assert np.allclose(inc[0], st_.s1) and np.allclose(inc[1], st_.s2)
    assert np.allclose(inc[2], st_.sb) and np.allclose(inc[3], st_.m)
    assert inc[4] == pytest.approx(logmarg_C_integration(stack, st_.C, prior, 0.2, 2), abs=1e-7)


def test_gibbs_matches_exhaustive_label_posterior():
    stack = _tiny_stack(2, n=4, p=2)
    prior = NIGParams(0.4, 1.0, 2.0, 0.1)
    K, pi, g0 = 2, 0.3, 0.4
    exact = {}
    for C in itertools.product(range(K + 1), repeat=4):
        Ca = np.array(C)
        lp = sum(math.log(g0) if c == 0 else math.log((1 - g0) / K) for c in C)
        exact[C] = lp + logmarg_C_integration(stack, Ca, prior, pi, K)
    Z = logsumexp(list(exact.values()))
    exact = {k: v - Z for k, v in exact.items()}
    st_ = IntegrationState(stack, np.zeros(4, dtype=int), K, prior, pi, g0)
    rng = rng_stream(0, 0)
    counts = {}
    N = 30_000
    for _ in range(N):
        st_.sweep(rng)
        key = tuple(int(c) for c in st_.C)
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(math.exp(exact[k]) - counts.get(k, 0) / N) for k in exact)
    assert tv < 0.03


def test_from_genome_drops_small_layers():
    Z, query, C, S = gen_integration(12, 3, 0, modules=((4, 2),), n_extra=10)
    stack = CorrelationStack.from_genome(Z, query, n_samples=[20, 5, 12], names=["a", "b", "c"])
    assert stack.n_layers == 2 and stack.layer_names == ["a", "c"]
    assert stack.Z.shape == (2, 12, 12)
    with pytest.raises(DataError):
        CorrelationStack.from_genome(Z, query, n_samples=[1, 2, 3])


def test_pair_view_round_trip():
    stack = _tiny_stack(3)
    pairs, idx = stack.pair_view()
    back = CorrelationStack.from_pair_view(pairs, stack.n_genes, stack.theta0, stack.var0)
    assert np.allclose(back.Z, stack.Z)


def test_stack_validation():
    with pytest.raises(DataError):
        CorrelationStack(np.zeros((2, 3, 4)), [0, 0], [1, 1])
    with pytest.raises(DataError):
        CorrelationStack(np.zeros((1, 3, 3)), [0], [0.0])
    with pytest.raises(DomainError):
        IntegrationState(_tiny_stack(), np.zeros(5, int), 2, NIGParams(), 1.5, 0.5)


def test_recovers_planted_modules():
    Z, query, C, S = gen_integration(40, 30, 0)
    stack = CorrelationStack.from_genome(Z, query)
    res = fit_integration(stack)
    assert res.k_hat == 2
    assert ari(C, res.labels) == 1.0
    from bayesbiclust.metrics import align_selection
    P = align_selection(res.selection_prob, C, res.labels, 2)
    assert P[S].min() > 0.9 and P[~S].max() < 0.1


def test_estimator_accepts_raw_stack():
    Z, query, C, S = gen_integration(25, 10, 1, modules=((8, 6),), n_extra=0)
    est = IntegrationBiclust(n_clusters=[1, 2], n_iter=80, burn_in=20).fit(Z)
    assert ari(C, est.labels_) > 0.9
    assert est.supporting_layers().shape == (10, est.n_clusters_)
    with pytest.raises(DataError):
        IntegrationBiclust().fit(np.zeros((3, 3)))
