"""k-means fitting, canonical labels, quality gates."""

import numpy as np
import pytest

from ssls.clustering import FittedClusterer, KMeansSpec, fit_kmeans, gate_grouping
from ssls.data import Dataset
from ssls.errors import GroupTooSmall, OneArmOnly, TooFewSamples
from ssls.rng import Stream


def blobs(n_per, centers, seed=0, sd=1.0):
    s = Stream(seed)
    parts = []
    for c in centers:
        parts.append(s.normal(n_per * len(c)).reshape(n_per, len(c)) * sd + np.asarray(c))
    return np.vstack(parts)


def test_two_points_two_clusters():
    x = np.array([[0.0, 0.0], [10.0, 10.0]])
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=1, standardize=False))
    assert fc.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(map(tuple, fc.centroids)) == [(0.0, 0.0), (10.0, 10.0)]


def test_blob_recovery():
    x = blobs(100, [(-10.0, -10.0), (10.0, 10.0)], seed=2)
    truth = np.array([1] * 100 + [2] * 100)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=3))
    labels = fc.assign(x)
    direct = (labels == truth).mean()
    assert max(direct, 1 - direct) >= 0.99


def test_inertia_path_non_increasing():
    x = blobs(150, [(-2.0, 0.0), (2.0, 0.0), (0.0, 3.0)], seed=4)
    fc = fit_kmeans(x, KMeansSpec(n_groups=3, seed=5))
    path = fc.inertia_path
    assert all(b <= a + 1e-9 for a, b in zip(path, path[1:]))


def test_duplicate_rows_double_inertia():
    x = blobs(80, [(-8.0,), (8.0,)], seed=6)
    spec = KMeansSpec(n_groups=2, seed=7, standardize=False)
    fc1 = fit_kmeans(x, spec)
    fc2 = fit_kmeans(np.vstack([x, x]), spec)
    assert np.allclose(np.sort(fc1.centroids, axis=0),
                       np.sort(fc2.centroids, axis=0), atol=1e-8)
    assert fc2.inertia == pytest.approx(2.0 * fc1.inertia, rel=1e-6)


def test_assign_reproduces_training_labels():
    x = blobs(60, [(-5.0, 1.0), (5.0, -1.0)], seed=8)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=9))
    once = fc.assign(x)
    again = fc.assign(x)
    assert np.array_equal(once, again)
    # assigning the final centroids' own members keeps them in place
    z = (x - fc.col_mean) / fc.col_scale
    for g in (1, 2):
        members = z[once == g]
        d_own = ((members - fc.centroids[g - 1]) ** 2).sum(axis=1)
        d_other = ((members - fc.centroids[2 - g]) ** 2).sum(axis=1)
        assert (d_own <= d_other).all()


def test_determinism():
    x = blobs(50, [(-3.0, 0.0), (3.0, 0.0)], seed=10)
    spec = KMeansSpec(n_groups=2, seed=11)
    a = fit_kmeans(x, spec)
    b = fit_kmeans(x, spec)
    assert np.array_equal(a.centroids, b.centroids)


def test_labels_ordered_by_centroid_norm():
    x = blobs(50, [(9.0, 9.0), (0.5, 0.5)], seed=12, sd=0.3)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=13, standardize=False))
    norms = np.linalg.norm(fc.centroids, axis=1)
    assert norms[0] < norms[1]


def test_too_few_rows():
    with pytest.raises(TooFewSamples):
        fit_kmeans(np.zeros((1, 2)), KMeansSpec(n_groups=2, seed=1))


def test_gate_passes_balanced_blobs():
    x = blobs(100, [(-6.0, 0.0), (6.0, 0.0)], seed=14)
    a = Stream(15).bernoulli(0.5, 200).astype(float)
    d = Dataset(y=np.zeros(200), a=a, x=x)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=16))
    g = gate_grouping(fc, d, KMeansSpec(n_groups=2, seed=16, min_group_size=25))
    assert g.n_groups == 2
    assert g.counts().min() >= 25


def test_gate_group_too_small():
    x = np.vstack([blobs(50, [(-6.0, 0.0)], seed=17), blobs(3, [(6.0, 0.0)], seed=18)])
    a = np.tile([0.0, 1.0], 27)[:53]
    d = Dataset(y=np.zeros(53), a=a, x=x)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=19))
    with pytest.raises(GroupTooSmall) as err:
        gate_grouping(fc, d, KMeansSpec(n_groups=2, seed=19, min_group_size=25))
    assert err.value.size == 3


def test_gate_one_arm():
    x = blobs(40, [(-6.0, 0.0), (6.0, 0.0)], seed=20)
    a = np.concatenate([np.tile([0.0, 1.0], 20), np.ones(40)])
    d = Dataset(y=np.zeros(80), a=a, x=x)
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=21))
    with pytest.raises(OneArmOnly):
        gate_grouping(fc, d, KMeansSpec(n_groups=2, seed=21, min_group_size=5))


def test_min_size_default_from_power_rule():
    spec = KMeansSpec(n_groups=2, seed=0)
    # z_tilde = 0.5 at 5% level and 80% power
    assert spec.resolved_min_size() == 32
    assert KMeansSpec(n_groups=2, seed=0, min_group_size=3).resolved_min_size() == 3


def test_standardization_stored():
    x = blobs(50, [(0.0, 0.0), (100.0, 0.0)], seed=22)
    x[:, 1] *= 1000.0
    fc = fit_kmeans(x, KMeansSpec(n_groups=2, seed=23))
    assert isinstance(fc, FittedClusterer)
    # scaling is undone consistently: assign works on raw coordinates
    labels = fc.assign(x)
    assert set(np.unique(labels)) == {1, 2}
