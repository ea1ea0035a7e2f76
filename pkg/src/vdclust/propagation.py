"""Cluster extraction from neighborhood graphs.

Three propagators share the Labeling output type:

* `dnp`   -- deterministic density-aware propagation: clusters grow from
             density peaks through a min-priority queue keyed by
             d(pred, node) + d_k'(node), gated by a best-so-far
             reachability distance.
* `lpa`   -- asynchronous label propagation (most frequent neighbor label).
* `louvain` -- two-phase weighted modularity optimization.

`ping` composes neighbor search, graph construction, and a propagator into
a one-call pipeline.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .ceos import CeosParams, Neighborhoods, build_index, knn_lists, query_all
from .data_io import Dataset, normalize_unit
from .errors import ConfigError
from .graph import KnnGraph, NeighborLists, build_graph, exact_knn


@dataclass
class Labeling:
    """Cluster id per point; -1 marks unassigned/noise."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


def compact_labels(labels: np.ndarray) -> Labeling:
    """Renumber labels to 0..C-1 by first appearance; -1 passes through."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(len(labels), -1, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels.tolist()):
        if lab < 0:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return Labeling(labels=out, n_clusters=len(mapping))


@dataclass(frozen=True)
class DnpParams:
    """Neighborhood budget k and density divisor c (k' = max(1, floor(k/c)))."""

    k: int
    c: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.c < 1:
            raise ConfigError(f"c must be >= 1, got {self.c}")

    @property
    def k_prime(self) -> int:
        return max(1, int(self.k // self.c))


def _candidate_csr(source):
    """Per-node candidate lists as (indptr, ids, dists ascending)."""
    if isinstance(source, KnnGraph):
        return source.indptr, source.nbr, source.w
    if isinstance(source, Neighborhoods):
        return source.indptr, source.ids, 1.0 - source.dots
    if isinstance(source, NeighborLists):
        return source.indptr, source.ids, source.dists
    raise TypeError(f"unsupported candidate source {type(source).__name__}")


def _kth_distance(indptr, dists, kth: int) -> np.ndarray:
    """Distance to each node's kth candidate (last when short, inf when empty)."""
    n = len(indptr) - 1
    sizes = np.diff(indptr)
    out = np.full(n, np.inf, dtype=np.float64)
    nonempty = sizes > 0
    take = np.where(sizes >= kth, indptr[:-1] + kth - 1, indptr[1:] - 1)
    out[nonempty] = dists[take[nonempty]]
    return out


def dnp(source, params: DnpParams, label_check: str = "stored",
        trace=None) -> Labeling:
    """Density-aware neighborhood propagation.

    Nodes are visited in descending density (ascending d_k'); an unlabeled
    node seeds a new cluster and expansion proceeds through a min-priority
    queue.  A neighbor enters the queue only while unlabeled and closer than
    its best-so-far reachability distance; a popped node adopts its
    predecessor's label when one of its own candidates already carries it,
    and otherwise starts a new cluster.

    `source` may be a KnnGraph, a Neighborhoods collection (the full per-point
    candidate lists are then used for pushes), or raw directed NeighborLists.
    `label_check` picks the candidate set scanned by the adoption test:
    "stored" uses the whole list, "knn" only the k nearest entries.
    Deterministic: ties fall back to (priority, node id, predecessor id).
    """
    if label_check not in ("stored", "knn"):
        raise ValueError(f"label_check must be 'stored' or 'knn', got {label_check!r}")
    indptr, ids, dists = _candidate_csr(source)
    n = len(indptr) - 1
    if n == 0:
        return Labeling(labels=np.empty(0, dtype=np.int64), n_clusters=0)
    dkp = _kth_distance(indptr, dists, params.k_prime)

    labels = np.full(n, -1, dtype=np.int64)
    reach = np.full(n, np.inf, dtype=np.float64)
    order = np.lexsort((np.arange(n), dkp))
    check_cap = params.k if label_check == "knn" else None
    heap: list[tuple[float, int, int]] = []
    push = heapq.heappush
    pop = heapq.heappop
    n_clusters = 0

    def expand(u: int):
        lo, hi = indptr[u], indptr[u + 1]
        cand = ids[lo:hi]
        cd = dists[lo:hi]
        sel = (labels[cand] == -1) & (cd < reach[cand])
        if not sel.any():
            return
        cand = cand[sel]
        cd = cd[sel]
        if trace is not None:
            for node, val in zip(cand.tolist(), cd.tolist()):
                trace("reach_update", node, val)
        reach[cand] = cd
        prios = cd + dkp[cand]
        for prio, node in zip(prios.tolist(), cand.tolist()):
            push(heap, (prio, node, u))

    for q in order.tolist():
        if labels[q] != -1:
            continue
        labels[q] = n_clusters
        if trace is not None:
            trace("seed", q, float(dkp[q]))
        n_clusters += 1
        expand(q)
        while heap:
            prio, x, pred = pop(heap)
            if labels[x] != -1:
                if trace is not None:
                    trace("stale", x, prio)
                continue
            lo = indptr[x]
            hi = indptr[x + 1] if check_cap is None else min(indptr[x + 1], lo + check_cap)
            target = labels[pred]
            if np.any(labels[ids[lo:hi]] == target):
                labels[x] = target
            else:
                labels[x] = n_clusters
                if trace is not None:
                    trace("new_cluster", x, float(dkp[x]))
                n_clusters += 1
            expand(x)

    return Labeling(labels=labels, n_clusters=n_clusters)


def lpa(g: KnnGraph, max_iters: int = 100, seed: int = 0) -> Labeling:
    """Asynchronous label propagation over a seeded random node order.

    Each node adopts the most frequent label among its neighbors (ties go to
    the smallest label id); iteration stops at a fixpoint or after max_iters
    sweeps.  Labels are compacted to 0..C-1.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    n = g.n
    labels = np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    indptr, nbr = g.indptr, g.nbr
    for _ in range(max_iters):
        changed = False
        for u in rng.permutation(n).tolist():
            lo, hi = indptr[u], indptr[u + 1]
            if lo == hi:
                continue
            vals, counts = np.unique(labels[nbr[lo:hi]], return_counts=True)
            best = int(vals[np.argmax(counts)])
            if labels[u] != best:
                labels[u] = best
                changed = True
        if not changed:
            break
    return compact_labels(labels)


def _edge_similarities(g: KnnGraph) -> np.ndarray:
    """Convert edge distances to non-negative similarities for modularity."""
    if g.metric == "cosine":
        w = np.clip(1.0 - g.w, 0.0, None)
    else:
        mean_d = float(g.w.mean()) if len(g.w) else 1.0
        if mean_d <= 0:
            mean_d = 1.0
        w = np.exp(-g.w / mean_d)
    if np.any(w < 0):
        raise RuntimeError("negative similarity after conversion")
    return w


def _modularity(indptr, nbr, w, selfloop, comm) -> float:
    deg = np.zeros(len(indptr) - 1, dtype=np.float64)
    np.add.at(deg, np.repeat(np.arange(len(indptr) - 1), np.diff(indptr)), w)
    deg += 2.0 * selfloop
    total = w.sum() / 2.0 + selfloop.sum()
    if total <= 0:
        return 0.0
    src = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    intra = np.zeros(int(comm.max()) + 1, dtype=np.float64)
    same = comm[src] == comm[nbr]
    np.add.at(intra, comm[src[same]], w[same] / 2.0)
    np.add.at(intra, comm, selfloop)
    ctot = np.zeros(int(comm.max()) + 1, dtype=np.float64)
    np.add.at(ctot, comm, deg)
    return float((intra / total - (ctot / (2.0 * total)) ** 2).sum())


def _local_move(indptr, nbr, w, selfloop, rng):
    """One Louvain level: greedy node moves until no positive gain remains."""
    n = len(indptr) - 1
    deg = np.zeros(n, dtype=np.float64)
    np.add.at(deg, np.repeat(np.arange(n), np.diff(indptr)), w)
    deg += 2.0 * selfloop
    total2 = deg.sum()  # = 2 * total edge weight
    comm = np.arange(n, dtype=np.int64)
    comm_tot = deg.copy()
    if total2 <= 0:
        return comm, False
    moved_any = False
    while True:
        moved = False
        for u in rng.permutation(n).tolist():
            lo, hi = indptr[u], indptr[u + 1]
            cu = int(comm[u])
            comm_tot[cu] -= deg[u]
            links: dict[int, float] = {cu: 0.0}
            for v, wv in zip(nbr[lo:hi].tolist(), w[lo:hi].tolist()):
                c = int(comm[v])
                links[c] = links.get(c, 0.0) + wv
            best_c, best_gain = cu, links[cu] - deg[u] * comm_tot[cu] / total2
            for c in sorted(links):
                if c == cu:
                    continue
                gain = links[c] - deg[u] * comm_tot[c] / total2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            comm[u] = best_c
            comm_tot[best_c] += deg[u]
            if best_c != cu:
                moved = True
                moved_any = True
        if not moved:
            break
    return comm, moved_any


def _aggregate(indptr, nbr, w, selfloop, comm):
    """Collapse communities into supernodes, summing parallel edge weights."""
    n = len(indptr) - 1
    uniq, dense = np.unique(comm, return_inverse=True)
    nn = len(uniq)
    src = dense[np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))]
    dst = dense[nbr]
    intra = src == dst
    new_self = np.zeros(nn, dtype=np.float64)
    np.add.at(new_self, src[intra], w[intra] / 2.0)
    np.add.at(new_self, dense, selfloop)
    es, ed, ew = src[~intra], dst[~intra], w[~intra]
    key = es * np.int64(nn) + ed
    order = np.argsort(key, kind="stable")
    key, ew = key[order], ew[order]
    if len(key):
        starts = np.empty(len(key), dtype=bool)
        starts[0] = True
        np.not_equal(key[1:], key[:-1], out=starts[1:])
        group = np.cumsum(starts) - 1
        sums = np.zeros(int(group[-1]) + 1, dtype=np.float64)
        np.add.at(sums, group, ew)
        ukey = key[starts]
        new_src = (ukey // nn).astype(np.int64)
        new_dst = (ukey % nn).astype(np.int64)
    else:
        sums = np.empty(0, dtype=np.float64)
        new_src = np.empty(0, dtype=np.int64)
        new_dst = np.empty(0, dtype=np.int64)
    new_indptr = np.zeros(nn + 1, dtype=np.int64)
    np.cumsum(np.bincount(new_src, minlength=nn), out=new_indptr[1:])
    return new_indptr, new_dst, sums, new_self, dense


def louvain(g: KnnGraph, weighting: str = "similarity", seed: int = 0,
            phase_modularities: list | None = None) -> Labeling:
    """Two-phase weighted Louvain on distance-derived similarities.

    Cosine distances d in [0, 2] become weights 1 - d (clipped at 0); for
    other metrics weights are exp(-d / mean edge distance).  Local moving
    maximizes weighted modularity gain (ties to the smallest community id),
    then communities collapse into supernodes and the process repeats until
    no move improves modularity.  `phase_modularities`, when given, collects
    the modularity after every level for auditing.
    """
    if weighting != "similarity":
        raise ValueError(f"unsupported weighting {weighting!r}")
    n = g.n
    w = _edge_similarities(g)
    indptr, nbr = g.indptr.copy(), g.nbr.astype(np.int64)
    selfloop = np.zeros(n, dtype=np.float64)
    rng = np.random.default_rng(seed)
    assignment = np.arange(n, dtype=np.int64)
    wl = w.astype(np.float64)
    while True:
        comm, moved = _local_move(indptr, nbr, wl, selfloop, rng)
        if phase_modularities is not None:
            phase_modularities.append(_modularity(indptr, nbr, wl, selfloop, comm))
        if not moved:
            break
        indptr, nbr, wl, selfloop, dense = _aggregate(indptr, nbr, wl, selfloop, comm)
        assignment = dense[comm[assignment]]
        if len(indptr) - 1 == 1:
            break
    return compact_labels(assignment)


def ping(ds: Dataset, k: int, backend: str = "exact", propagator: str = "louvain",
         metric: str | None = None, ceos_params: CeosParams | None = None,
         dnp_params: DnpParams | None = None, lpa_iters: int = 100,
         seed: int = 0, graph_kind: str = "symmetric") -> Labeling:
    """One-call pipeline: neighbor search -> weighted kNN graph -> propagator.

    With the ceos backend the dataset must be (or is) unit-normalized; dnp
    then propagates over the full approximate neighborhoods instead of the
    truncated kNN lists.
    """
    if backend not in ("exact", "ceos"):
        raise ConfigError(f"backend must be 'exact' or 'ceos', got {backend!r}")
    if propagator not in ("dnp", "lpa", "louvain"):
        raise ConfigError(f"unknown propagator {propagator!r}")
    metric = metric or ds.metric or "l2"
    if ds.n == 1:
        return Labeling(labels=np.zeros(1, dtype=np.int64), n_clusters=1)
    label_check = "stored"
    if backend == "exact":
        lists = exact_knn(ds, k=k, metric=metric)
        g = build_graph(lists, kind=graph_kind, metric=metric)
        source = g
    else:
        work = ds if (ds.metric == "cosine" and ds.normalized) else normalize_unit(ds)
        params = ceos_params or CeosParams(
            n_projections=max(16, int(round(np.sqrt(ds.n)))),
            n_top=10, bucket_cap=max(50, 2 * k), seed_r=seed, seed_s=seed + 1)
        idx = build_index(work, params)
        neigh = query_all(work, idx)
        if propagator == "dnp":
            # Pushes cover the whole approximate neighborhood, but label
            # adoption still consults only the k nearest candidates; the
            # full symmetric lists would collapse propagation into plain
            # connected components.
            source = neigh
            label_check = "knn"
            g = None
        else:
            lists = knn_lists(neigh, k=k)
            g = build_graph(lists, kind=graph_kind, metric="cosine")
            source = g
    if propagator == "dnp":
        return dnp(source, dnp_params or DnpParams(k=k), label_check=label_check)
    if propagator == "lpa":
        return lpa(g, max_iters=lpa_iters, seed=seed)
    return louvain(g, seed=seed)
