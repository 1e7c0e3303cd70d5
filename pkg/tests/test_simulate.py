import numpy as np
import pytest

from bayesbiclust.bbc2 import is_canonical
from bayesbiclust.exceptions import UsageError
from bayesbiclust.simulate import (gen_bbc1, gen_bbc2, gen_hierarchy, gen_integration,
                                   gen_semisynthetic_noise, shuffle_features)


def test_generators_are_bit_reproducible():
    for gen in (lambda: gen_bbc1(30, 40, 3, 10, 7), lambda: gen_bbc2(30, 40, 3, 3, 0.2, 7),
                lambda: gen_hierarchy(5, 30, 7)):
        a, b = gen(), gen()
        assert np.array_equal(a.Y, b.Y) and np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.S, b.S)
    z1, z2 = gen_integration(20, 5, 3, modules=((5, 2),), n_extra=10), \
        gen_integration(20, 5, 3, modules=((5, 2),), n_extra=10)
    assert all(np.array_equal(x, y) for x, y in zip(z1, z2))


def test_columns_do_not_depend_on_width():
    a = gen_bbc2(25, 10, 2, 3, 0.3, seed=1)
    b = gen_bbc2(25, 30, 2, 3, 0.3, seed=1)
    assert np.array_equal(a.Y, b.Y[:, :10])


def test_bbc1_ground_truth():
    d = gen_bbc1(50, 60, 4, 12, seed=0)
    assert d.Y.shape == (50, 60) and set(np.unique(d.Y)) <= {0, 1}
    assert d.S.sum() == 12
    assert d.labels.min() >= 1 and d.labels.max() <= 4
    assert gen_bbc1(10, 5, 2, 5, 0).S.all()
    with pytest.raises(UsageError):
        gen_bbc1(10, 5, 2, 6, 0)


def test_bbc2_selection_is_canonical():
    d = gen_bbc2(40, 500, 4, 3, 0.6, seed=2)
    assert all(is_canonical(r) for r in d.S.astype(int).tolist())
    assert d.Y.max() <= 2
    zero = gen_bbc2(40, 50, 3, 3, 0.0, seed=2)
    assert not zero.S.any()
    with pytest.raises(UsageError):
        gen_bbc2(10, 5, 2, 1, 0.1, 0)


def test_bbc2_selected_columns_differ_between_clusters():
    d = gen_bbc2(3000, 50, 2, 3, 0.5, seed=4)
    sel = np.flatnonzero(d.S.all(axis=1))
    j = sel[0]
    f = [np.bincount(d.Y[d.labels == k, j], minlength=3) / np.sum(d.labels == k) for k in (1, 2)]
    assert np.abs(f[0] - f[1]).max() > 0.03


def test_noise_columns():
    base = np.zeros((2000, 2), dtype=np.uint8)
    assert np.array_equal(gen_semisynthetic_noise(base, 0, 0), base)
    out = gen_semisynthetic_noise(base, 300, 0)
    assert out.shape == (2000, 302)
    # Dir(1,1,1) rates: each category has expected share 1/3
    share = np.bincount(out[:, 2:].ravel(), minlength=3) / out[:, 2:].size
    assert np.allclose(share, 1 / 3, atol=0.03)


def test_shuffle_preserves_marginals():
    d = gen_bbc2(40, 30, 2, 3, 0.3, seed=0)
    Y2, ids = shuffle_features(d.Y, 0.5, seed=1)
    assert ids.size == 15
    for j in range(30):
        assert np.array_equal(np.sort(Y2[:, j]), np.sort(d.Y[:, j]))
    untouched = np.setdiff1d(np.arange(30), ids)
    assert np.array_equal(Y2[:, untouched], d.Y[:, untouched])
    assert np.array_equal(shuffle_features(d.Y, 0.0, 1)[0], d.Y)
    with pytest.raises(UsageError):
        shuffle_features(d.Y, 1.5, 0)


def test_hierarchy_ground_truth():
    d = gen_hierarchy(10, 40, seed=0)
    assert d.Y.shape == (40, 40)
    assert np.bincount(d.labels)[1:].tolist() == [10] * 4
    sup = np.array(d.params["super"])
    # leaves 1,2 sit under super-group 1 and leaves 3,4 under 2
    assert np.array_equal(sup, (d.labels - 1) // 2 + 1)


def test_integration_truth():
    Z, query, C, S = gen_integration(30, 8, 0, modules=((6, 3), (5, 2)), n_extra=20)
    assert Z.shape == (8, 50, 50)
    assert np.allclose(Z, np.swapaxes(Z, 1, 2))
    assert np.bincount(C).tolist() == [19, 6, 5]
    assert S.sum(axis=0).tolist() == [3, 2]
    Zq = Z[:, query][:, :, query]
    d = np.flatnonzero(S[:, 0])[0]
    m = np.flatnonzero(C == 1)
    within = Zq[d][np.ix_(m, m)][np.triu_indices(m.size, 1)]
    assert within.mean() > 0.5
    with pytest.raises(UsageError):
        gen_integration(5, 3, 0, modules=((6, 1),))
