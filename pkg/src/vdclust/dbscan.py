"""Exact DBSCAN and its sequential multi-threshold variant.

These are deliberately brute-force O(n^2) reference implementations: they
serve as ground-truth oracles for the graph-connectivity route to
varied-density clustering and as standalone baselines at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from .errors import ConfigError
from .graph import KnnGraph, _CDIST_NAME
from .propagation import Labeling


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_pts: int

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ConfigError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass(frozen=True)
class DbscanStarConfig:
    """Neighbor count k (= minPts) plus radii stored densest-first.

    eps_list must be strictly increasing: the first (smallest) radius is the
    densest threshold and runs first; later, larger radii rerun on the
    non-core leftovers of earlier levels.
    """

    k: int
    eps_list: tuple

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        eps = tuple(float(e) for e in self.eps_list)
        if len(eps) == 0:
            raise ConfigError("eps_list must not be empty")
        if any(e <= 0 for e in eps):
            raise ConfigError("all radii must be positive")
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps_list must be strictly increasing, got {eps}")
        object.__setattr__(self, "eps_list", eps)

    @classmethod
    def from_density_levels(cls, k: int, n: int, dim: int, levels) -> "DbscanStarConfig":
        """Radii derived from density thresholds f_1 < ... < f_L.

        Denser levels map to smaller radii, so the resulting eps_list is
        already in densest-first storage order.
        """
        levels = sorted(float(f) for f in levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("density levels must be strictly increasing")
        eps = tuple(eps_from_density(k, n, dim, f) for f in reversed(levels))
        return cls(k=k, eps_list=eps)


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return float(np.exp(0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)))


def eps_from_density(k: int, n: int, d: int, f: float) -> float:
    """Radius at which a density-f region yields k expected neighbors."""
    if k <= 0 or n <= 0 or d <= 0 or f <= 0:
        raise ValueError("k, n, d, f must all be positive")
    return float((k / (n * unit_ball_volume(d) * f)) ** (1.0 / d))


def _within_eps_pairs(pts: np.ndarray, active: np.ndarray, eps: float,
                      metric_name: str, chunk_elems: int = 20_000_000):
    """Counts (self included) and i<j pair arrays among the active subset."""
    sub = pts[active]
    m = len(sub)
    counts = np.zeros(m, dtype=np.int64)
    pairs_i = []
    pairs_j = []
    chunk = max(1, chunk_elems // max(1, m))
    for start in range(0, m, chunk):
        stop = min(m, start + chunk)
        dmat = cdist(sub[start:stop], sub, metric_name)
        close = dmat <= eps
        counts[start:stop] = close.sum(axis=1)
        ii, jj = np.nonzero(close)
        ii = ii + start
        keep = ii < jj
        pairs_i.append(ii[keep])
        pairs_j.append(jj[keep])
    pi = np.concatenate(pairs_i) if pairs_i else np.empty(0, dtype=np.int64)
    pj = np.concatenate(pairs_j) if pairs_j else np.empty(0, dtype=np.int64)
    return counts, pi, pj


def _core_components(m: int, core: np.ndarray, pi: np.ndarray, pj: np.ndarray):
    """Connected components over core-core pairs, labeled by smallest member id."""
    cc_mask = core[pi] & core[pj]
    ci, cj = pi[cc_mask], pj[cc_mask]
    core_idx = np.flatnonzero(core)
    remap = np.full(m, -1, dtype=np.int64)
    remap[core_idx] = np.arange(len(core_idx))
    sub = csr_matrix((np.ones(len(ci)), (remap[ci], remap[cj])),
                     shape=(len(core_idx), len(core_idx)))
    _, comp = _cc(sub, directed=False)
    seen: dict[int, int] = {}
    out = np.empty(len(comp), dtype=np.int64)
    for pos, c in enumerate(comp):
        if c not in seen:
            seen[c] = len(seen)
        out[pos] = seen[c]
    return core_idx, out, len(seen)


def dbscan(ds, params: DbscanParams, metric: str | None = None) -> Labeling:
    """Textbook DBSCAN with brute-force range queries.

    Core points (at least min_pts neighbors within eps, self included) are
    connected transitively; a border point adopts the label of its
    smallest-id core neighbor; everything else is noise (-1).
    """
    metric = metric or ds.metric or "l2"
    name = _CDIST_NAME[metric]
    n = ds.n
    active = np.arange(n)
    counts, pi, pj = _within_eps_pairs(ds.points, active, params.eps, name)
    core = counts >= params.min_pts
    labels = np.full(n, -1, dtype=np.int64)
    if not core.any():
        return Labeling(labels=labels, n_clusters=0)
    core_idx, comp, n_comp = _core_components(n, core, pi, pj)
    labels[core_idx] = comp
    # Border points: smallest core neighbor id wins.
    src = np.concatenate([pi, pj])
    dst = np.concatenate([pj, pi])
    border_edge = ~core[src] & core[dst]
    bsrc, bdst = src[border_edge], dst[border_edge]
    if len(bsrc):
        order = np.lexsort((bdst, bsrc))
        bsrc, bdst = bsrc[order], bdst[order]
        first = np.empty(len(bsrc), dtype=bool)
        first[0] = True
        np.not_equal(bsrc[1:], bsrc[:-1], out=first[1:])
        labels[bsrc[first]] = labels[bdst[first]]
    return Labeling(labels=labels, n_clusters=n_comp)


def dbscan_star(ds, cfg: DbscanStarConfig, metric: str | None = None) -> Labeling:
    """Sequential DBSCAN over decreasing density thresholds with minPts = k.

    The densest level runs on all points; each later level reruns only on
    the non-core leftovers of the previous one.  Clusters consist of core
    points, ids are allocated level-major then by smallest member id, and
    points never core at any level stay noise (-1).
    """
    metric = metric or ds.metric or "l2"
    name = _CDIST_NAME[metric]
    n = ds.n
    labels = np.full(n, -1, dtype=np.int64)
    active = np.arange(n)
    next_label = 0
    for eps in cfg.eps_list:
        if len(active) == 0:
            break
        counts, pi, pj = _within_eps_pairs(ds.points, active, eps, name)
        core = counts >= cfg.k
        if core.any():
            core_idx, comp, n_comp = _core_components(len(active), core, pi, pj)
            labels[active[core_idx]] = comp + next_label
            next_label += n_comp
        active = active[~core]
    return Labeling(labels=labels, n_clusters=next_label)


@dataclass
class KnnDensityEstimate:
    """Per-point kNN density estimates; +inf marks duplicate points (d_k = 0)."""

    values: np.ndarray
    k: int


def knn_density(g: KnnGraph, dim: int | None = None) -> KnnDensityEstimate:
    """Density estimate k / (n * V_d * d_k^d) from a graph's kNN distances."""
    d = dim if dim is not None else g.dim
    if d is None:
        raise ValueError("graph carries no dimensionality; pass dim explicitly")
    with np.errstate(divide="ignore"):
        vals = g.k / (g.n * unit_ball_volume(d) * g.dk ** d)
    return KnnDensityEstimate(values=vals, k=g.k)
