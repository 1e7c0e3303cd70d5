import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from bayesbiclust.exceptions import UsageError
from bayesbiclust.metrics import (align_labels, align_selection, ari, ari_from_contingency,
                                  clustering_error, confusion_rates, contingency,
                                  feature_recovery)

# Published confusion matrices (true populations in rows, estimated clusters in columns)
BICLUSTERING = [[47, 1, 2, 0], [1, 49, 0, 0], [1, 1, 34, 14], [0, 0, 11, 39]]
PCA_KMEANS = [[36, 3, 4, 7], [1, 43, 0, 6], [1, 1, 27, 21], [2, 0, 27, 21]]
STRUCTURE = [[39, 2, 9, 0], [4, 40, 3, 3], [2, 4, 42, 2], [1, 1, 48, 0]]
# K-means on the toy example, estimated clusters in rows
KMEANS_P400 = [[11, 16, 16, 10], [29, 9, 4, 3], [8, 14, 17, 9], [9, 14, 12, 19]]
KMEANS_P100 = [[10, 14, 17, 2], [29, 11, 4, 1], [18, 26, 15, 0], [0, 2, 13, 38]]


def _expand(table):
    """Label vectors realising a contingency table."""
    a, b = [], []
    for i, row in enumerate(table):
        for j, c in enumerate(row):
            a += [i + 1] * c
            b += [j + 1] * c
    return np.array(a), np.array(b)


@pytest.mark.parametrize("table,expected,published", [
    (BICLUSTERING, 0.6755956791592171, 0.68),
    (STRUCTURE, 0.4131509867684321, 0.41),
    (PCA_KMEANS, 0.3953354022536502, 0.40),
])
def test_ari_golden_tables(table, expected, published):
    t0 = time.perf_counter()
    got = ari_from_contingency(np.array(table))
    assert time.perf_counter() - t0 < 1e-3
    assert got == pytest.approx(expected, abs=1e-12)
    assert abs(got - published) < 0.005


@pytest.mark.parametrize("table,expected", [(KMEANS_P400, 0.595), (KMEANS_P100, 0.45)])
def test_clustering_error_golden(table, expected):
    est, true = _expand(table)
    assert clustering_error(true, est) == pytest.approx(expected, abs=1e-12)


def test_ari_from_labels_matches_table():
    a, b = _expand(BICLUSTERING)
    assert np.array_equal(contingency(a, b), np.array(BICLUSTERING))
    assert ari(a, b) == pytest.approx(ari_from_contingency(np.array(BICLUSTERING)))


labels = st.lists(st.integers(0, 4), min_size=2, max_size=40)


@given(labels, st.data())
def test_ari_matches_sklearn_and_is_symmetric(a, data):
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    a, b = np.array(a), np.array(b)
    ref = adjusted_rand_score(a, b)
    assert ari(a, b) == pytest.approx(ref, abs=1e-10)
    assert ari(a, b) == pytest.approx(ari(b, a), abs=1e-12)


@given(labels, st.permutations(range(5)))
def test_ari_relabel_invariant(a, perm):
    a = np.array(a)
    relabeled = np.array(perm)[a]
    assert ari(a, relabeled) == pytest.approx(1.0)
    assert clustering_error(a, relabeled) == pytest.approx(0.0)


def test_ari_degenerate_partitions():
    assert ari([1, 1, 1], [2, 2, 2]) == 1.0
    assert ari([1, 2, 3], [1, 2, 3]) == 1.0


def test_align_labels_maps_permutation():
    true = np.array([1, 1, 2, 2, 3, 3])
    est = np.array([3, 3, 1, 1, 2, 2])
    assert align_labels(true, est) == {3: 1, 1: 2, 2: 3}


def test_align_selection_reorders_clusters():
    true = np.array([1, 1, 2, 2])
    est = np.array([2, 2, 1, 1])
    S_est = np.array([[1, 0], [0, 1], [1, 1]], dtype=bool)
    out = align_selection(S_est, true, est, 2)
    assert np.array_equal(out, S_est[:, ::-1])


def test_feature_recovery_uses_canonical_form():
    S_true = np.array([[1, 1, 1], [0, 0, 0], [1, 0, 0]], dtype=bool)
    S_est = np.array([[1, 0, 1], [0, 0, 0], [1, 1, 0]], dtype=bool)  # first row is one-zero
    assert feature_recovery(S_true, S_est) == pytest.approx(2 / 3)
    assert feature_recovery(np.array([1, 0, 1]), np.array([1, 0, 0])) == pytest.approx(2 / 3)
    with pytest.raises(UsageError):
        feature_recovery(np.zeros(3), np.zeros(4))


def test_confusion_rates():
    S_true = np.array([1, 1, 0, 0, 0], dtype=bool)
    S_est = np.array([1, 0, 1, 0, 0], dtype=bool)
    fpr, fnr, tnr = confusion_rates(S_true, S_est)
    assert (fpr, fnr, tnr) == pytest.approx((1 / 3, 1 / 2, 2 / 3))
    assert confusion_rates(np.zeros(3, bool), np.zeros(3, bool)) == (0.0, 0.0, 1.0)
