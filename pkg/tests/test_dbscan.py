"""DBSCAN reference implementations and the density-level formula."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from vdclust import (Dataset, DbscanParams, DbscanStarConfig, build_graph,
                     connected_components, dbscan, dbscan_star,
                     eps_from_density, exact_knn, knn_density,
                     unit_ball_volume)
from vdclust.errors import ConfigError
from vdclust.metrics import ari, contingency
from conftest import varied_density_blobs


def _naive_dbscan(points, eps, min_pts):
    """Second, independently structured DBSCAN (pure python loops).

    Core points are connected by BFS over id order; border points adopt the
    label of their smallest-id core neighbor; everything else is noise.
    """
    n = len(points)
    d = cdist(points, points)
    neigh = [np.flatnonzero(d[i] <= eps) for i in range(n)]  # includes self
    core = np.array([len(neigh[i]) >= min_pts for i in range(n)])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = -1
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        cluster += 1
        queue = [seed]
        labels[seed] = cluster
        while queue:
            u = queue.pop()
            for x in neigh[u]:
                if core[x] and labels[x] == -1:
                    labels[x] = cluster
                    queue.append(int(x))
    for i in range(n):
        if core[i] or labels[i] != -1:
            continue
        cores_near = [int(x) for x in neigh[i] if core[x]]
        if cores_near:
            labels[i] = labels[min(cores_near)]
    return labels


def _two_moons(n, seed, noise=0.06):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, np.pi, n // 2)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    pts = np.vstack([upper, lower]) + noise * rng.normal(size=(2 * (n // 2), 2))
    return Dataset(pts, metric="l2")


class TestDbscan:
    def test_all_isolated_is_noise(self):
        pts = np.array([[0.0], [10.0], [20.0]])
        lab = dbscan(Dataset(pts, metric="l2"), DbscanParams(eps=1.0, min_pts=2))
        assert np.all(lab.labels == -1) and lab.n_clusters == 0

    def test_single_blob_no_noise(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(60, 2)) * 0.2
        lab = dbscan(Dataset(pts, metric="l2"), DbscanParams(eps=1.0, min_pts=3))
        assert lab.n_clusters == 1 and np.all(lab.labels == 0)

    def test_matches_independent_implementation(self):
        ds = _two_moons(600, seed=5)
        params = DbscanParams(eps=0.12, min_pts=6)
        mine = dbscan(ds, params)
        ref = _naive_dbscan(ds.points, params.eps, params.min_pts)
        # identical partitions including the noise set
        np.testing.assert_array_equal(mine.labels == -1, ref == -1)
        scored = mine.labels >= 0
        assert ari(contingency(mine.labels[scored], ref[scored])) == 1.0
        # the declared border rule makes the labelings equal point for point
        # after canonical renumbering
        from vdclust.propagation import compact_labels
        np.testing.assert_array_equal(compact_labels(mine.labels).labels,
                                      compact_labels(ref).labels)

    def test_order_invariance(self):
        ds = _two_moons(300, seed=6)
        params = DbscanParams(eps=0.15, min_pts=5)
        base = dbscan(ds, params)
        rng = np.random.default_rng(7)
        perm = rng.permutation(ds.n)
        shuffled = dbscan(Dataset(ds.points[perm], metric="l2"), params)
        mask = base.labels[perm] >= 0
        np.testing.assert_array_equal(shuffled.labels >= 0, base.labels[perm] >= 0)
        assert ari(contingency(shuffled.labels[mask], base.labels[perm][mask])) == 1.0

    def test_param_validation(self):
        with pytest.raises(ConfigError):
            DbscanParams(eps=0.0, min_pts=1)
        with pytest.raises(ConfigError):
            DbscanParams(eps=1.0, min_pts=0)


class TestDbscanStar:
    def test_single_level_matches_dbscan_on_cores(self):
        ds = _two_moons(400, seed=8)
        eps, k = 0.15, 6
        star = dbscan_star(ds, DbscanStarConfig(k=k, eps_list=(eps,)))
        flat = dbscan(ds, DbscanParams(eps=eps, min_pts=k))
        # the sequential variant keeps only core points; border points of the
        # flat run stay unassigned here
        d = cdist(ds.points, ds.points)
        core = (d <= eps).sum(axis=1) >= k
        np.testing.assert_array_equal(star.labels >= 0, core)
        assert ari(contingency(star.labels[core], flat.labels[core])) == 1.0

    def test_two_densities_recovered_level_by_level(self):
        # Uniform disks with densities 4:1 and levels bracketing each disk.
        rng = np.random.default_rng(9)
        n_a, n_b = 400, 400
        r_a, r_b = 1.0, 2.0  # same counts, 4x density difference
        def disk(n, radius, center):
            t = rng.uniform(0, 2 * np.pi, n)
            r = radius * np.sqrt(rng.uniform(0, 1, n))
            return np.column_stack([r * np.cos(t), r * np.sin(t)]) + center
        pts = np.vstack([disk(n_a, r_a, (0.0, 0.0)), disk(n_b, r_b, (20.0, 0.0))])
        ds = Dataset(pts, metric="l2")
        n = ds.n
        f_a = (n_a / n) / (np.pi * r_a ** 2)
        f_b = (n_b / n) / (np.pi * r_b ** 2)
        k = 20
        cfg = DbscanStarConfig.from_density_levels(
            k, n, 2, levels=[f_b / 2.0, f_a / 2.0])
        lab = dbscan_star(ds, cfg)
        assert lab.n_clusters == 2
        truth = np.repeat([1, 0], [n_a, n_b])  # dense disk found first
        scored = lab.labels >= 0
        assert scored.mean() > 0.9
        assert ari(contingency(lab.labels[scored], truth[scored])) == 1.0
        # dense disk occupies the first discovered cluster
        assert set(np.unique(lab.labels[:n_a])) <= {0, -1}

    def test_level_core_counts_hold(self):
        # Every clustered point had >= k active neighbors within its level's
        # radius at the time its level ran.
        ds = _two_moons(300, seed=10)
        cfg = DbscanStarConfig(k=5, eps_list=(0.08, 0.2))
        lab = dbscan_star(ds, cfg)
        d = cdist(ds.points, ds.points)
        active = np.ones(ds.n, dtype=bool)
        next_label = 0
        for eps in cfg.eps_list:
            counts = (d[np.ix_(active, active)] <= eps).sum(axis=1)
            level_core = np.zeros(ds.n, dtype=bool)
            level_core[np.flatnonzero(active)[counts >= cfg.k]] = True
            level_labels = np.unique(lab.labels[level_core])
            for point in np.flatnonzero(level_core):
                assert lab.labels[point] >= 0
            active &= ~level_core
        assert np.all(lab.labels[active] == -1)

    def test_empty_eps_list(self):
        with pytest.raises(ConfigError, match="empty"):
            DbscanStarConfig(k=3, eps_list=())

    def test_unordered_eps_list(self):
        with pytest.raises(ConfigError, match="increasing"):
            DbscanStarConfig(k=3, eps_list=(0.5, 0.2))

    def test_theorem_equivalence_one_seed(self):
        # Mutual-graph components of core points reproduce the sequential
        # multi-threshold clustering on a known-density mixture.
        ds, truth, levels = varied_density_blobs(seed=0)
        n = ds.n
        k = int(np.ceil(8 * np.log(n)))
        cfg = DbscanStarConfig.from_density_levels(k, n, 2, levels)
        star = dbscan_star(ds, cfg)
        core = star.labels >= 0
        g = build_graph(exact_knn(ds, k=k), "mutual", metric="l2")
        comp = connected_components(g, mask=core)
        score = ari(contingency(comp[core], star.labels[core]))
        assert score >= 0.95


class TestEpsFromDensity:
    def test_pinned_2d(self):
        # V_2 = pi and f = 1/pi cancel: eps = sqrt(k/n)
        assert eps_from_density(10, 1000, 2, 1.0 / np.pi) == pytest.approx(0.1)

    def test_pinned_1d(self):
        # V_1 = 2: eps = 2/(4*2*0.25) = 1
        assert eps_from_density(2, 4, 1, 0.25) == pytest.approx(1.0)

    def test_monotonicity(self):
        dense = eps_from_density(10, 1000, 3, 1e6)
        sparse = eps_from_density(10, 1000, 3, 1.0)
        assert dense < sparse
        ks = [eps_from_density(k, 1000, 3, 1.0) for k in (1, 5, 20, 100)]
        assert all(a < b for a, b in zip(ks, ks[1:]))

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            eps_from_density(0, 10, 2, 1.0)
        with pytest.raises(ValueError):
            eps_from_density(5, 10, 2, -1.0)

    def test_unit_ball_volumes(self):
        assert unit_ball_volume(1) == pytest.approx(2.0)
        assert unit_ball_volume(2) == pytest.approx(np.pi)
        assert unit_ball_volume(3) == pytest.approx(4.0 * np.pi / 3.0)


class TestKnnDensity:
    def test_jittered_grid_uniformity(self):
        rng = np.random.default_rng(11)
        side = 20
        xs, ys = np.meshgrid(np.arange(side, dtype=float),
                             np.arange(side, dtype=float))
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        pts += rng.uniform(-0.02, 0.02, pts.shape)
        ds = Dataset(pts, metric="l2")
        g = build_graph(exact_knn(ds, k=8), "symmetric", metric="l2")
        est = knn_density(g).values
        interior = ((pts[:, 0] > 2) & (pts[:, 0] < side - 3)
                    & (pts[:, 1] > 2) & (pts[:, 1] < side - 3))
        vals = est[interior]
        assert vals.max() / vals.min() <= 1.2

    def test_duplicate_point_is_infinite(self):
        pts = np.vstack([np.zeros((2, 2)), [[1.0, 0.0]], [[2.0, 0.0]]])
        ds = Dataset(pts, metric="l2")
        g = build_graph(exact_knn(ds, k=1), "symmetric", metric="l2")
        est = knn_density(g).values
        assert np.isinf(est[0]) and np.isinf(est[1])

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(100, 3))
        k = 5
        g1 = build_graph(exact_knn(Dataset(pts, metric="l2"), k=k),
                         "symmetric", metric="l2")
        g2 = build_graph(exact_knn(Dataset(2.0 * pts, metric="l2"), k=k),
                         "symmetric", metric="l2")
        e1 = knn_density(g1).values
        e2 = knn_density(g2).values
        np.testing.assert_allclose(e2, e1 / 2 ** 3, rtol=1e-9)

    def test_requires_dimensionality(self):
        from vdclust.graph import KnnGraph
        g = KnnGraph(n=2, k=1, kind="symmetric",
                     indptr=np.array([0, 1, 2]), nbr=np.array([1, 0]),
                     w=np.array([1.0, 1.0]), dk=np.array([1.0, 1.0]),
                     short=np.array([False, False]))
        with pytest.raises(ValueError, match="dimensionality"):
            knn_density(g)
