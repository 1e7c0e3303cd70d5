import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp

from bayesbiclust import BBC1
from bayesbiclust._base import MCMCConfig
from bayesbiclust.bbc1 import (Bbc1Hyper, Bbc1State, col_logmarg_bbc1, collapsed_logmarg_bbc1,
                               fit_bbc1, log_PY_given_K_bbc1, logpost_bbc1, run_chain_bbc1,
                               s_posterior_bbc1)
from bayesbiclust.exceptions import DataError, UsageError
from bayesbiclust.metrics import ari
from bayesbiclust.simulate import gen_bbc1
from oracles import bbc1_enumerate, bbc1_joint, tv_distance

Y_SMALL = np.array([[1, 0, 1], [1, 1, 0], [0, 0, 1], [0, 1, 1], [1, 0, 0]], dtype=np.uint8)

binary = arrays(np.uint8, st.tuples(st.integers(2, 6), st.integers(1, 4)),
                elements=st.integers(0, 1))


@given(binary, st.integers(1, 3), st.data())
def test_logpost_matches_oracle(Y, K, data):
    n, p = Y.shape
    C = np.array(data.draw(st.lists(st.integers(1, K), min_size=n, max_size=n)))
    S = np.array(data.draw(st.lists(st.integers(0, 1), min_size=p, max_size=p)))
    hyper = Bbc1Hyper()
    assert logpost_bbc1(C, S, Y, hyper, K) == pytest.approx(bbc1_joint(Y, C, S, K), abs=1e-9)
    # collapsing S is the sum over both states of every column
    per_col = [np.logaddexp(math.log(0.9) + col_logmarg_bbc1(Y[:, j], C, 0, hyper, K),
                            math.log(0.1) + col_logmarg_bbc1(Y[:, j], C, 1, hyper, K))
               for j in range(p)]
    assert collapsed_logmarg_bbc1(Y, C, hyper, K) == pytest.approx(sum(per_col), abs=1e-9)


@given(binary, st.integers(1, 3), st.data())
def test_incremental_state_matches_scratch(Y, K, data):
    n = Y.shape[0]
    C = np.array(data.draw(st.lists(st.integers(1, K), min_size=n, max_size=n)))
    state = Bbc1State(Y, C, K, Bbc1Hyper())
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    for _ in range(3):
        state.sweep_C(rng)
    cached = (state.bg.copy(), state.nullbg.copy(), state.fg.copy(), state.cnt.copy())
    state.refresh()
    for a, b in zip(cached, (state.bg, state.nullbg, state.fg, state.cnt)):
        assert np.allclose(a, b, atol=1e-9)
    collapsed, _ = state.sweep_S(rng)
    ref = collapsed_logmarg_bbc1(Y, state.C, Bbc1Hyper(), K)
    assert collapsed == pytest.approx(ref, abs=1e-8)


def test_s_posterior_matches_enumeration():
    C = np.array([1, 1, 2, 2, 1])
    hyper = Bbc1Hyper(pi_s=0.3)
    prob = s_posterior_bbc1(Y_SMALL, C, hyper, 2)
    for j in range(3):
        l0 = math.log(0.7) + col_logmarg_bbc1(Y_SMALL[:, j], C, 0, hyper, 2)
        l1 = math.log(0.3) + col_logmarg_bbc1(Y_SMALL[:, j], C, 1, hyper, 2)
        assert prob[j] == pytest.approx(math.exp(l1 - np.logaddexp(l0, l1)), abs=1e-12)


def test_gibbs_matches_exhaustive_posterior():
    Y = Y_SMALL[:4, :2]
    table, Z = bbc1_enumerate(Y, 2)
    exact = {k: v - Z for k, v in table.items()}
    s = run_chain_bbc1(Y, 2, Bbc1Hyper(), MCMCConfig(101_000, 1_000, 1, 0))
    counts = {}
    for C, S in zip(s.C, s.S):
        key = (tuple(int(c) for c in C), tuple(int(x) for x in S))
        counts[key] = counts.get(key, 0) + 1
    assert tv_distance(exact, counts, len(s.C)) < 0.02


def test_frequency_estimator_matches_enumeration():
    _, Z = bbc1_enumerate(Y_SMALL, 2)
    s = run_chain_bbc1(Y_SMALL, 2, Bbc1Hyper(), MCMCConfig(20_000, 1_000, 1, 0))
    est, C_star, freq = log_PY_given_K_bbc1(s)
    assert abs(est - Z) / abs(Z) < 0.05
    assert 0 < freq <= 1


def test_single_cluster_marginal_is_exact():
    _, Z = bbc1_enumerate(Y_SMALL, 1)
    s = run_chain_bbc1(Y_SMALL, 1, Bbc1Hyper(), MCMCConfig(5, 1, 1, 0))
    est, _, freq = log_PY_given_K_bbc1(s)
    assert freq == 1.0
    assert est == pytest.approx(Z, abs=1e-8)


def test_null_cluster_prior():
    hyper = Bbc1Hyper(gamma0=0.2)
    lp = hyper.log_cluster_prior(4)
    assert lp[0] == pytest.approx(math.log(0.2))
    assert logsumexp(lp) == pytest.approx(0.0, abs=1e-12)
    assert Bbc1Hyper().log_cluster_prior(3)[0] == -np.inf


def test_hyper_validation():
    with pytest.raises(UsageError):
        Bbc1Hyper(pi_s=1.0)
    with pytest.raises(UsageError):
        Bbc1Hyper(alpha_theta=(0.0, 1.0))


def test_label_zero_rejected_without_null_cluster():
    with pytest.raises(UsageError):
        Bbc1State(Y_SMALL, [0, 1, 1, 2, 2], 2, Bbc1Hyper())


def test_recovers_planted_clusters():
    d = gen_bbc1(120, 300, 3, 40, seed=4)
    res = fit_bbc1(d.Y, [2, 3, 4], mcmc=MCMCConfig(300, 100, 1, 0))
    assert res.k_hat == 3
    assert ari(d.labels, res.labels) > 0.95
    assert np.mean(res.selection == d.S) > 0.97


def test_no_biomarkers_selects_one_cluster():
    d = gen_bbc1(60, 100, 3, 0, seed=1)
    res = fit_bbc1(d.Y, [1, 2, 3], mcmc=MCMCConfig(300, 100, 1, 0))
    assert res.k_hat == 1


def test_estimator_api():
    d = gen_bbc1(80, 150, 2, 30, seed=2)
    est = BBC1(n_clusters=[1, 2, 3], n_iter=200, burn_in=50)
    assert est.get_params()["n_clusters"] == [1, 2, 3]
    est.fit(d.Y)
    assert est.n_clusters_ == 2
    proba = est.predict_log_proba(d.Y)
    assert proba.shape == (80, 3)
    assert np.allclose(np.exp(proba).sum(axis=1), 1.0)
    assert ari(est.predict(d.Y), est.labels_) > 0.95
    with pytest.raises(DataError):
        est.predict(d.Y[:, :10])
    with pytest.raises(DataError):
        BBC1(n_clusters=2).fit(d.Y + 1)
