"""Exact kNN lists, graph construction, and component labeling."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from vdclust import (Dataset, NeighborLists, build_graph, connected_components,
                     exact_knn, write_graph_text)
from conftest import gaussian_blobs


def _naive_knn(points, k, metric="euclidean"):
    """Independent quadratic scan with (distance, id) ordering."""
    d = cdist(points, points, metric)
    np.fill_diagonal(d, np.inf)
    n = len(points)
    ids = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k))
    for q in range(n):
        order = sorted(range(n), key=lambda j: (d[q, j], j))[:k]
        ids[q] = order
        dists[q] = d[q, order]
    return ids, dists


def _lists_from_arrays(ids, dists, k, dim=None):
    n = len(ids)
    indptr = np.arange(0, (n + 1) * k, k, dtype=np.int64)
    return NeighborLists(indptr=indptr, ids=np.asarray(ids).ravel(),
                         dists=np.asarray(dists, dtype=np.float64).ravel(),
                         k=k, dim=dim)


class TestExactKnn:
    def test_collinear_hand_case(self):
        ds = Dataset(np.array([[0.0], [1.0], [3.0]]), metric="l2")
        lists = exact_knn(ds, k=1)
        assert lists.ids_of(0).tolist() == [1]
        assert lists.ids_of(1).tolist() == [0]
        assert lists.ids_of(2).tolist() == [1]

    def test_identical_points_tie_break(self):
        ds = Dataset(np.ones((5, 3)), metric="l2")
        lists = exact_knn(ds, k=3)
        assert lists.ids_of(0).tolist() == [1, 2, 3]
        assert lists.ids_of(2).tolist() == [0, 1, 3]
        assert np.all(lists.dists == 0.0)

    def test_matches_independent_scan(self):
        rng = np.random.default_rng(17)
        pts = rng.normal(size=(500, 16))
        lists = exact_knn(Dataset(pts, metric="l2"), k=10)
        ref_ids, ref_d = _naive_knn(pts, k=10)
        np.testing.assert_array_equal(lists.ids.reshape(500, 10), ref_ids)
        np.testing.assert_allclose(lists.dists.reshape(500, 10), ref_d)

    def test_k_out_of_range(self):
        ds = Dataset(np.zeros((3, 2)), metric="l2")
        with pytest.raises(ValueError):
            exact_knn(ds, k=3)

    @pytest.mark.parametrize("metric", ["l1", "cosine"])
    def test_other_metrics(self, metric):
        rng = np.random.default_rng(18)
        pts = rng.normal(size=(60, 5))
        lists = exact_knn(Dataset(pts), k=4, metric=metric)
        name = {"l1": "cityblock", "cosine": "cosine"}[metric]
        ref_ids, _ = _naive_knn(pts, k=4, metric=name)
        np.testing.assert_array_equal(lists.ids.reshape(60, 4), ref_ids)


class TestBuildGraph:
    def test_mutual_pair(self):
        ids = [[1], [0], [1]]
        dists = [[1.0], [1.0], [2.0]]
        lists = _lists_from_arrays(ids, dists, k=1)
        for kind in ("mutual", "symmetric"):
            g = build_graph(lists, kind)
            nbrs, w = g.neighbors(0)
            assert 1 in nbrs
        g = build_graph(lists, "mutual")
        assert g.neighbors(2)[0].size == 0  # 2 lists 1 but not vice versa

    def test_chain_asymmetry(self):
        # A's NN is B but B's NN is C: edge (A, B) in the symmetric graph only.
        pts = np.array([[0.0], [2.0], [3.0]])
        lists = exact_knn(Dataset(pts, metric="l2"), k=1)
        sym = build_graph(lists, "symmetric")
        mut = build_graph(lists, "mutual")
        assert 1 in sym.neighbors(0)[0]
        assert 1 not in mut.neighbors(0)[0]
        assert 2 in mut.neighbors(1)[0]

    def test_mutual_matches_naive_double_loop(self):
        rng = np.random.default_rng(19)
        pts = rng.normal(size=(300, 8))
        lists = exact_knn(Dataset(pts, metric="l2"), k=6)
        g = build_graph(lists, "mutual")
        member = [set(lists.ids_of(q).tolist()) for q in range(300)]
        expected = set()
        for u in range(300):
            for x in member[u]:
                if u in member[x]:
                    expected.add((min(u, x), max(u, x)))
        got = set(zip(*[arr.tolist() for arr in g.edge_arrays()[:2]]))
        assert got == expected

    def test_symmetric_is_superset_of_mutual(self):
        rng = np.random.default_rng(20)
        pts = rng.normal(size=(200, 4))
        lists = exact_knn(Dataset(pts, metric="l2"), k=5)
        sym = build_graph(lists, "symmetric")
        mut = build_graph(lists, "mutual")
        sym_edges = set(zip(*[a.tolist() for a in sym.edge_arrays()[:2]]))
        mut_edges = set(zip(*[a.tolist() for a in mut.edge_arrays()[:2]]))
        assert mut_edges <= sym_edges

    def test_storage_symmetry_audit(self):
        rng = np.random.default_rng(21)
        pts = rng.normal(size=(150, 3))
        lists = exact_knn(Dataset(pts, metric="l2"), k=4)
        for kind in ("mutual", "symmetric"):
            g = build_graph(lists, kind)
            for u in range(g.n):
                nbrs, w = g.neighbors(u)
                for x, wx in zip(nbrs.tolist(), w.tolist()):
                    back_n, back_w = g.neighbors(x)
                    pos = np.flatnonzero(back_n == u)
                    assert pos.size == 1
                    assert back_w[pos[0]] == wx

    def test_adjacency_sorted_by_distance_then_id(self):
        rng = np.random.default_rng(22)
        pts = rng.normal(size=(100, 3))
        lists = exact_knn(Dataset(pts, metric="l2"), k=5)
        g = build_graph(lists, "symmetric")
        for u in range(g.n):
            _, w = g.neighbors(u)
            assert np.all(np.diff(w) >= 0)

    def test_dk_consistency(self):
        rng = np.random.default_rng(23)
        pts = rng.normal(size=(80, 4))
        k = 6
        lists = exact_knn(Dataset(pts, metric="l2"), k=k)
        g = build_graph(lists, "symmetric")
        for q in range(80):
            assert g.dk[q] == lists.dists_of(q)[k - 1]
        assert not g.short.any()

    def test_short_lists_flagged(self):
        ids = [[1, 2], [0], [0, 1]]
        dists = [[1.0, 2.0], [1.0], [2.0, 2.5]]
        indptr = np.array([0, 2, 3, 5])
        lists = NeighborLists(indptr=indptr, ids=np.concatenate(ids),
                              dists=np.concatenate(dists), k=2)
        g = build_graph(lists, "symmetric")
        assert g.short.tolist() == [False, True, False]
        assert g.dk[1] == 1.0  # largest available

    def test_duplicate_id_rejected(self):
        lists = _lists_from_arrays([[1, 1], [0, 2], [0, 1]],
                                   [[1.0, 1.0], [1.0, 2.0], [1.0, 2.0]], k=2)
        with pytest.raises(ValueError, match="duplicate"):
            build_graph(lists, "symmetric")

    def test_self_entry_rejected(self):
        lists = _lists_from_arrays([[0], [0]], [[0.0], [1.0]], k=1)
        with pytest.raises(ValueError, match="self"):
            build_graph(lists, "symmetric")


class TestComponents:
    def test_edgeless(self):
        lists = _lists_from_arrays([[1], [0], [3], [2]],
                                   [[1.0]] * 4, k=1)
        g = build_graph(lists, "mutual")
        # drop all edges by masking everything separately: use an edgeless graph
        empty = NeighborLists(indptr=np.zeros(5, dtype=np.int64),
                              ids=np.empty(0, dtype=np.int64),
                              dists=np.empty(0), k=1)
        g0 = build_graph(empty, "symmetric")
        comp = connected_components(g0)
        assert sorted(comp.tolist()) == list(range(4))

    def test_complete_graph(self):
        n = 6
        ids = [[j for j in range(n) if j != i] for i in range(n)]
        dists = [[1.0] * (n - 1)] * n
        g = build_graph(_lists_from_arrays(ids, dists, k=n - 1), "mutual")
        comp = connected_components(g)
        assert np.all(comp == 0)

    def test_mask(self):
        pts = np.array([[0.0], [1.0], [10.0], [11.0]])
        lists = exact_knn(Dataset(pts, metric="l2"), k=1)
        g = build_graph(lists, "symmetric")
        comp = connected_components(g, mask=np.array([True, True, False, True]))
        assert comp[2] == -1
        assert comp[0] == comp[1] == 0
        assert comp[3] == 1

    def test_two_blobs_two_components(self, two_blob_instance):
        ds, truth = two_blob_instance
        g = build_graph(exact_knn(ds, k=10), "symmetric")
        comp = connected_components(g)
        assert len(np.unique(comp)) == 2
        assert np.all(comp == comp[0]) == False  # noqa: E712
        assert np.all((comp == truth) | (comp == 1 - truth))


def _truncated_blob(rng, n, trunc=3.0):
    out, need = [], n
    while need > 0:
        cand = rng.normal(size=(4 * need + 8, 2))
        keep = np.linalg.norm(cand, axis=1) <= trunc
        out.append(cand[keep][:need])
        need = n - sum(len(a) for a in out)
    return np.vstack(out)


def test_connectivity_probability_grows_with_k():
    # One 2-D Gaussian blob (compact support, truncated at 3 sigma):
    # mutual-graph connectivity over 20 seeds is non-decreasing in k and
    # certain by k = ceil(8 ln n).
    n = 2000
    k_max = int(np.ceil(8 * np.log(n)))
    ks = [2, 8, k_max]
    connected = {k: 0 for k in ks}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        ds = Dataset(_truncated_blob(rng, n), metric="l2")
        lists = exact_knn(ds, k=k_max)
        ids = lists.ids.reshape(n, k_max)
        dists = lists.dists.reshape(n, k_max)
        for k in ks:
            sub = NeighborLists(
                indptr=np.arange(0, (n + 1) * k, k, dtype=np.int64),
                ids=ids[:, :k].ravel().copy(),
                dists=dists[:, :k].ravel().copy(), k=k)
            g = build_graph(sub, "mutual")
            comp = connected_components(g)
            connected[k] += int(comp.max() == 0)
    fractions = [connected[k] / 20 for k in ks]
    assert all(a <= b + 1e-12 for a, b in zip(fractions, fractions[1:]))
    assert fractions[-1] == 1.0


def test_graph_dump_format(tmp_path):
    pts = np.array([[0.0], [1.0], [5.0]])
    lists = exact_knn(Dataset(pts, metric="l2"), k=1)
    g = build_graph(lists, "symmetric")
    path = tmp_path / "graph.txt"
    write_graph_text(g, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "3 1 symmetric"
    for line in lines[1:]:
        u, v, w = line.split()
        assert int(u) < int(v)
        float(w)
