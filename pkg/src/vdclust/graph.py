"""Exact kNN search and weighted kNN graph construction.

Graphs come in two kinds: `symmetric` keeps an edge when either endpoint
lists the other among its k nearest neighbors, `mutual` only when both do,
so the mutual edge set is always a subset of the symmetric one.  Edges are
weighted by distance and adjacency is stored symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial.distance import cdist

_CDIST_NAME = {"l2": "euclidean", "l1": "cityblock", "cosine": "cosine"}

# Row-chunk budget for brute-force distance matrices.
_CDIST_CHUNK_ELEMS = 20_000_000


@dataclass
class NeighborLists:
    """Directed per-point candidate lists, each sorted by ascending distance."""

    indptr: np.ndarray
    ids: np.ndarray
    dists: np.ndarray
    k: int
    dim: int | None = None

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def ids_of(self, q: int) -> np.ndarray:
        return self.ids[self.indptr[q]:self.indptr[q + 1]]

    def dists_of(self, q: int) -> np.ndarray:
        return self.dists[self.indptr[q]:self.indptr[q + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)


def exact_knn(ds, k: int, metric: str | None = None) -> NeighborLists:
    """Brute-force k nearest neighbors of every point, ties broken by smaller id.

    O(n^2 d) time; this is the oracle the approximate index is tested against.
    """
    n = ds.n
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    metric = metric or ds.metric or "l2"
    name = _CDIST_NAME[metric]
    pts = ds.points
    ids = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k), dtype=np.float64)
    chunk = max(1, _CDIST_CHUNK_ELEMS // n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        dmat = cdist(pts[start:stop], pts, name)
        dmat[np.arange(stop - start), np.arange(start, stop)] = np.inf
        sel_ids, sel_d = _smallest_k(dmat, k)
        ids[start:stop] = sel_ids
        dists[start:stop] = sel_d
    indptr = np.arange(0, (n + 1) * k, k, dtype=np.int64)
    return NeighborLists(indptr=indptr, ids=ids.ravel(), dists=dists.ravel(),
                         k=k, dim=ds.d)


def _smallest_k(dmat: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row: the k smallest entries under (value, column) order.

    Fast path partitions a small candidate set; rows whose k-th distance ties
    with excluded entries fall back to a full stable sort so the id
    tie-break stays exact even with duplicate points.
    """
    rows, n = dmat.shape
    kth = min(k + 8, n - 1)
    cand = np.argpartition(dmat, kth, axis=1)[:, :kth + 1]
    cand_d = np.take_along_axis(dmat, cand, axis=1)
    width = cand.shape[1]
    row_idx = np.repeat(np.arange(rows, dtype=np.int64), width)
    order = np.lexsort((cand.ravel(), cand_d.ravel(), row_idx)).reshape(rows, width)
    srt = order % width  # positions within each row's candidate slice
    top = np.take_along_axis(cand, srt[:, :k], axis=1)
    top_d = np.take_along_axis(cand_d, srt[:, :k], axis=1)
    # A row is safe when exactly k entries are <= its k-th selected distance.
    thresh = top_d[:, k - 1]
    unsafe = np.flatnonzero((dmat <= thresh[:, None]).sum(axis=1) != k)
    for r in unsafe.tolist():
        full = np.lexsort((np.arange(n), dmat[r]))[:k]
        top[r] = full
        top_d[r] = dmat[r, full]
    return top, top_d


@dataclass
class KnnGraph:
    """Weighted undirected kNN graph with per-node k-th-neighbor distances."""

    n: int
    k: int
    kind: str
    indptr: np.ndarray
    nbr: np.ndarray
    w: np.ndarray
    dk: np.ndarray
    short: np.ndarray
    metric: str | None = None
    dim: int | None = None

    @property
    def n_edges(self) -> int:
        return len(self.nbr) // 2

    def neighbors(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[q], self.indptr[q + 1]
        return self.nbr[lo:hi], self.w[lo:hi]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique undirected edges as (u, v, weight) with u < v."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        keep = src < self.nbr
        return src[keep], self.nbr[keep], self.w[keep]

    def to_csr(self) -> csr_matrix:
        return csr_matrix((self.w, self.nbr, self.indptr), shape=(self.n, self.n))


def _validate_lists(lists: NeighborLists):
    sizes = lists.sizes()
    src = np.repeat(np.arange(lists.n, dtype=np.int64), sizes)
    if np.any(src == lists.ids):
        bad = int(src[np.flatnonzero(src == lists.ids)[0]])
        raise ValueError(f"candidate list of node {bad} contains a self entry")
    key = src * np.int64(lists.n) + lists.ids
    uniq = np.unique(key)
    if len(uniq) != len(key):
        order = np.sort(key)
        dup = order[np.flatnonzero(order[1:] == order[:-1])[0]]
        raise ValueError(f"candidate list of node {int(dup // lists.n)} "
                         f"contains duplicate id {int(dup % lists.n)}")


def build_graph(lists: NeighborLists, kind: str, metric: str | None = None) -> KnnGraph:
    """Symmetrize directed kNN lists into a weighted undirected graph."""
    if kind not in ("mutual", "symmetric"):
        raise ValueError(f"kind must be 'mutual' or 'symmetric', got {kind!r}")
    _validate_lists(lists)
    n = lists.n
    k = lists.k
    sizes = lists.sizes()
    src = np.repeat(np.arange(n, dtype=np.int64), sizes)
    dst = lists.ids.astype(np.int64)
    wgt = lists.dists

    dir_key = src * np.int64(n) + dst
    if kind == "mutual" and len(dir_key):
        sorted_keys = np.sort(dir_key)
        rev_key = dst * np.int64(n) + src
        pos = np.searchsorted(sorted_keys, rev_key)
        pos = np.minimum(pos, len(sorted_keys) - 1)
        keep = sorted_keys[pos] == rev_key
        src, dst, wgt = src[keep], dst[keep], wgt[keep]

    ukey = np.minimum(src, dst) * np.int64(n) + np.maximum(src, dst)
    uniq, first = np.unique(ukey, return_index=True)
    u = (uniq // n).astype(np.int64)
    v = (uniq % n).astype(np.int64)
    ew = wgt[first]

    owner = np.concatenate([u, v])
    nbr = np.concatenate([v, u])
    wval = np.concatenate([ew, ew])
    order = np.lexsort((nbr, wval, owner))
    nbr = nbr[order]
    wval = wval[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=n), out=indptr[1:])

    dk = np.full(n, np.inf, dtype=np.float64)
    short = sizes < k
    nonempty = sizes > 0
    last = lists.indptr[1:] - 1
    kth = lists.indptr[:-1] + k - 1
    take = np.where(sizes >= k, kth, last)
    dk[nonempty] = lists.dists[take[nonempty]]
    return KnnGraph(n=n, k=k, kind=kind, indptr=indptr, nbr=nbr, w=wval,
                    dk=dk, short=short, metric=metric, dim=lists.dim)


def connected_components(g: KnnGraph, mask: np.ndarray | None = None) -> np.ndarray:
    """Component id per node; nodes outside `mask` get -1.

    Components are numbered 0..C-1 in order of their smallest node id.
    """
    labels = np.full(g.n, -1, dtype=np.int64)
    if mask is None:
        idx = np.arange(g.n)
        sub = g.to_csr()
    else:
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return labels
        sub = g.to_csr()[idx][:, idx]
    _, comp = _cc(sub, directed=False)
    # Renumber by first appearance so labeling is reproducible.
    first_seen = {}
    out = np.empty(len(comp), dtype=np.int64)
    for pos, c in enumerate(comp):
        if c not in first_seen:
            first_seen[c] = len(first_seen)
        out[pos] = first_seen[c]
    labels[idx] = out
    return labels


def write_graph_text(g: KnnGraph, path) -> None:
    """Dump edges as 'u v weight' lines (u < v) under a 'n k kind' header."""
    u, v, w = g.edge_arrays()
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.k} {g.kind}\n")
        for a, b, x in zip(u.tolist(), v.tolist(), w.tolist()):
            fh.write(f"{a} {b} {x:.17g}\n")
