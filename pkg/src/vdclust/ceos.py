"""Approximate neighborhoods via concomitants of extreme order statistics.

Every point is hashed into the composite buckets formed by its top-s
projection directions from each of two random banks; buckets keep the m
points best aligned with their composite direction.  Querying scans a
point's top-s composite buckets and scores candidates by exact dot
product, inserting each pair symmetrically, so the returned neighborhoods
satisfy x in N(q) iff q in N(x).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    njit = None

from .data_io import Dataset
from .errors import ConfigError, FormatError
from .spinner import StructuredSpinner

if njit is not None:
    @njit(cache=True)
    def _stable_scatter(owner, starts):  # pragma: no cover - compiled
        fill = starts.copy()
        pos = np.empty(owner.size, np.int64)
        for i in range(owner.size):
            o = owner[i]
            pos[i] = fill[o]
            fill[o] += 1
        return pos
else:
    _stable_scatter = None

_MAGIC = b"CEOS"
_VERSION = 1

# Pair-dot chunking keeps fancy-indexed copies of the point matrix bounded.
_DOT_CHUNK_ELEMS = 40_000_000


@dataclass(frozen=True)
class CeosParams:
    """Index parameters: bank size, per-bank fan-out, and bucket capacity."""

    n_projections: int  # directions per bank (D)
    n_top: int          # top directions kept per bank (s); s^2 buckets per point
    bucket_cap: int     # max points stored per bucket (m)
    seed_r: int = 0
    seed_s: int = 1

    def __post_init__(self):
        if self.n_projections < 1:
            raise ConfigError(f"n_projections must be >= 1, got {self.n_projections}")
        if not 1 <= self.n_top <= self.n_projections:
            raise ConfigError(
                f"n_top must satisfy 1 <= s <= D, got s={self.n_top} D={self.n_projections}"
            )
        if self.bucket_cap < 1:
            raise ConfigError(f"bucket_cap must be >= 1, got {self.bucket_cap}")


class NeighborList:
    """Scored candidate set of one point: ids sorted by descending dot product."""

    __slots__ = ("owner", "ids", "dots")

    def __init__(self, owner: int, ids: np.ndarray, dots: np.ndarray):
        self.owner = owner
        self.ids = ids
        self.dots = dots

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self):  # pragma: no cover
        return f"NeighborList(owner={self.owner}, size={len(self.ids)})"


class Neighborhoods:
    """All per-point neighbor lists in one CSR structure."""

    def __init__(self, indptr: np.ndarray, ids: np.ndarray, dots: np.ndarray):
        self.indptr = indptr
        self.ids = ids
        self.dots = dots

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, q: int) -> NeighborList:
        lo, hi = self.indptr[q], self.indptr[q + 1]
        return NeighborList(q, self.ids[lo:hi], self.dots[lo:hi])

    def __iter__(self):
        for q in range(self.n):
            yield self[q]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)


class CeosIndex:
    """Trimmed bucket table over two projection banks.

    Buckets are keyed by i * D + j for direction pair (i, j) and stored as a
    CSR table sorted by key; members of each bucket are sorted by descending
    score x.r_i + x.s_j with ties broken by smaller point id.  The index is
    immutable once built.
    """

    def __init__(self, params: CeosParams, n: int, d: int,
                 bucket_keys: np.ndarray, bucket_indptr: np.ndarray,
                 member_ids: np.ndarray, member_scores: np.ndarray):
        self.params = params
        self.n = n
        self.d = d
        self.bucket_keys = bucket_keys
        self.bucket_indptr = bucket_indptr
        self.member_ids = member_ids
        self.member_scores = member_scores
        self._spinners: tuple[StructuredSpinner, StructuredSpinner] | None = None

    @property
    def n_buckets(self) -> int:
        return len(self.bucket_keys)

    @property
    def n_entries(self) -> int:
        return len(self.member_ids)

    def bucket(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Members and scores of bucket (i, j); empty arrays if untouched."""
        key = np.int64(i) * self.params.n_projections + j
        pos = np.searchsorted(self.bucket_keys, key)
        if pos >= len(self.bucket_keys) or self.bucket_keys[pos] != key:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        lo, hi = self.bucket_indptr[pos], self.bucket_indptr[pos + 1]
        return self.member_ids[lo:hi], self.member_scores[lo:hi]

    def occupancy(self) -> np.ndarray:
        return np.diff(self.bucket_indptr)

    def spinners(self) -> tuple[StructuredSpinner, StructuredSpinner]:
        if self._spinners is None:
            block_r = StructuredSpinner.for_dims(self.d, self.params.n_projections,
                                                 self.params.seed_r)
            block_s = StructuredSpinner.for_dims(self.d, self.params.n_projections,
                                                 self.params.seed_s)
            self._spinners = (block_r, block_s)
        return self._spinners


def _bank_projections(points: np.ndarray, idx_or_params, d: int):
    """Project all points onto both banks, scaled to unit-variance marginals."""
    if isinstance(idx_or_params, CeosIndex):
        spin_r, spin_s = idx_or_params.spinners()
        n_proj = idx_or_params.params.n_projections
    else:
        params: CeosParams = idx_or_params
        spin_r = StructuredSpinner.for_dims(d, params.n_projections, params.seed_r)
        spin_s = StructuredSpinner.for_dims(d, params.n_projections, params.seed_s)
        n_proj = params.n_projections
    scale_r = np.sqrt(spin_r.block)
    scale_s = np.sqrt(spin_s.block)
    proj_r = spin_r.project_rows(points)[:, :n_proj] * scale_r
    proj_s = spin_s.project_rows(points)[:, :n_proj] * scale_s
    return proj_r, proj_s


def _top_per_bank(proj: np.ndarray, s: int):
    """Per row: indices and values of the s largest entries, ties to smaller index."""
    order = np.argsort(-proj, axis=1, kind="stable")[:, :s]
    vals = np.take_along_axis(proj, order, axis=1)
    return order.astype(np.int64), vals


def _pair_keys_scores(ds: Dataset, ref) -> tuple[np.ndarray, np.ndarray]:
    """(n, s^2) composite bucket keys and scores for every point."""
    params = ref.params if isinstance(ref, CeosIndex) else ref
    proj_r, proj_s = _bank_projections(ds.points, ref, ds.d)
    top_r, val_r = _top_per_bank(proj_r, params.n_top)
    top_s, val_s = _top_per_bank(proj_s, params.n_top)
    n = ds.n
    s = params.n_top
    keys = (top_r[:, :, None] * params.n_projections + top_s[:, None, :]).reshape(n, s * s)
    scores = (val_r[:, :, None] + val_s[:, None, :]).reshape(n, s * s)
    return keys, scores


def _require_normalized(ds: Dataset):
    if ds.metric != "cosine" or not ds.normalized:
        raise ValueError("CEOs requires a unit-normalized cosine dataset; "
                         "call normalize_unit or kernel_map first")


def build_index(ds: Dataset, params: CeosParams) -> CeosIndex:
    """Hash every point into its s^2 composite buckets, then trim each to m.

    Trimming happens once, after all insertions: each bucket keeps its
    bucket_cap highest-scoring members (ties to smaller point id).
    """
    _require_normalized(ds)
    keys, scores = _pair_keys_scores(ds, params)
    n, ss = keys.shape
    flat_keys = keys.ravel()
    flat_scores = scores.ravel()
    flat_ids = np.repeat(np.arange(n, dtype=np.int64), ss)
    # Stable two-pass grouping: score order first (stability makes ties fall
    # back to ascending point id), then bucket key, preserving score order
    # within each bucket.
    order = np.argsort(-flat_scores, kind="stable")
    order = order[np.argsort(flat_keys[order], kind="stable")]
    flat_keys = flat_keys[order]
    flat_scores = flat_scores[order]
    flat_ids = flat_ids[order]
    # Rank within each bucket, then keep the top bucket_cap entries.
    is_start = np.empty(len(flat_keys), dtype=bool)
    is_start[0] = True
    np.not_equal(flat_keys[1:], flat_keys[:-1], out=is_start[1:])
    starts = np.flatnonzero(is_start)
    group = np.cumsum(is_start) - 1
    rank = np.arange(len(flat_keys)) - starts[group]
    keep = rank < params.bucket_cap
    kept_keys = flat_keys[keep]
    member_ids = flat_ids[keep]
    member_scores = flat_scores[keep]
    bucket_keys, counts = np.unique(kept_keys, return_counts=True)
    bucket_indptr = np.zeros(len(bucket_keys) + 1, dtype=np.int64)
    np.cumsum(counts, out=bucket_indptr[1:])
    return CeosIndex(params, n, ds.d, bucket_keys, bucket_indptr,
                     member_ids, member_scores)


def query_all(ds: Dataset, idx: CeosIndex) -> Neighborhoods:
    """Scan each point's top-s composite buckets and collect scored neighbors.

    Every bucket member x found for query q contributes (x, x.q) to N(q) and
    (q, x.q) to N(x).  Lists are deduplicated by id, self-pairs dropped, and
    sorted by descending dot product with ties broken by smaller id.
    """
    _require_normalized(ds)
    if ds.n != idx.n or ds.d != idx.d:
        raise ValueError(
            f"dataset (n={ds.n}, d={ds.d}) does not match index (n={idx.n}, d={idx.d})"
        )
    n = ds.n
    s = idx.params.n_top
    keys, scores = _pair_keys_scores(ds, idx)
    # Top-s composite directions per query, ties broken by smaller bucket key.
    order2d = np.argsort(-scores, axis=1, kind="stable")
    srt = np.take_along_axis(scores, order2d, axis=1)
    tied = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
    for r in tied.tolist():
        order2d[r] = np.lexsort((keys[r], -scores[r]))
    query_buckets = np.take_along_axis(keys, order2d[:, :s], axis=1)

    pos = np.searchsorted(idx.bucket_keys, query_buckets.ravel())
    # Every queried bucket was touched at build time, so lookups always hit.
    counts = idx.bucket_indptr[pos + 1] - idx.bucket_indptr[pos]
    offsets = idx.bucket_indptr[pos]
    total = int(counts.sum())
    ends = np.cumsum(counts)
    gather = np.arange(total, dtype=np.int64) + np.repeat(offsets - (ends - counts), counts)
    xids = idx.member_ids[gather]
    qids = np.repeat(np.repeat(np.arange(n, dtype=np.int64), s), counts)

    mask = qids != xids
    qids = qids[mask]
    xids = xids[mask]
    lo = np.minimum(qids, xids)
    hi = np.maximum(qids, xids)
    upair = np.unique(lo * np.int64(n) + hi)
    a = (upair // n).astype(np.int64)
    b = (upair % n).astype(np.int64)

    dots = np.empty(len(a), dtype=np.float64)
    chunk = max(1, _DOT_CHUNK_ELEMS // max(1, ds.d))
    pts = ds.points
    for start in range(0, len(a), chunk):
        sl = slice(start, start + chunk)
        dots[sl] = np.einsum("ij,ij->i", pts[a[sl]], pts[b[sl]])

    # Per-owner ordering by (descending dot, ascending id) without a global
    # three-key sort: order the unique pairs once, interleave both directions
    # preserving that order, then stable-sort by owner alone.  Ties in the
    # dots keep ascending pair keys (upair is sorted), which yields ascending
    # neighbor ids within each owner.
    order = np.argsort(-dots, kind="stable")
    a, b, dots = a[order], b[order], dots[order]
    owner = np.empty(2 * len(a), dtype=np.int64)
    nbr = np.empty_like(owner)
    dval = np.empty(2 * len(a), dtype=np.float64)
    owner[0::2], owner[1::2] = a, b
    nbr[0::2], nbr[1::2] = b, a
    dval[0::2] = dots
    dval[1::2] = dots
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=n), out=indptr[1:])
    if _stable_scatter is not None:
        pos = _stable_scatter(owner, indptr[:-1])
        out_nbr = np.empty_like(nbr)
        out_dval = np.empty_like(dval)
        out_nbr[pos] = nbr
        out_dval[pos] = dval
        return Neighborhoods(indptr, out_nbr, out_dval)
    order = np.argsort(owner, kind="stable")
    return Neighborhoods(indptr, nbr[order], dval[order])


@dataclass
class KnnResult:
    """Top-k extract of one neighbor list; `short` marks fewer than k entries."""

    ids: np.ndarray
    dists: np.ndarray
    short: bool


def knn_from_neighborhood(nl: NeighborList, k: int) -> KnnResult:
    """First min(k, |list|) neighbors as cosine distances 1 - dot."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    take = min(k, len(nl))
    return KnnResult(ids=nl.ids[:take].copy(),
                     dists=1.0 - nl.dots[:take],
                     short=take < k)


def knn_lists(neigh: Neighborhoods, k: int):
    """Convert neighborhoods to per-point kNN candidate lists (see graph module)."""
    from .graph import NeighborLists

    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sizes = np.minimum(neigh.sizes(), k)
    indptr = np.zeros(neigh.n + 1, dtype=np.int64)
    np.cumsum(sizes, out=indptr[1:])
    total = int(indptr[-1])
    gather = np.arange(total, dtype=np.int64) + np.repeat(
        neigh.indptr[:-1] - indptr[:-1], sizes)
    ids = neigh.ids[gather]
    dists = 1.0 - neigh.dots[gather]
    return NeighborLists(indptr=indptr, ids=ids, dists=dists, k=k)


def save_index(idx: CeosIndex, path) -> None:
    """Persist the bucket table as little-endian (i, j, count, entries) records."""
    D = idx.params.n_projections
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQIIIIQQQ", _VERSION, idx.n, idx.d, D,
                             idx.params.n_top, idx.params.bucket_cap,
                             idx.params.seed_r, idx.params.seed_s,
                             idx.n_buckets))
        entry_t = np.dtype([("id", "<u4"), ("score", "<f8")])
        for b in range(idx.n_buckets):
            key = int(idx.bucket_keys[b])
            lo, hi = int(idx.bucket_indptr[b]), int(idx.bucket_indptr[b + 1])
            fh.write(struct.pack("<III", key // D, key % D, hi - lo))
            rec = np.empty(hi - lo, dtype=entry_t)
            rec["id"] = idx.member_ids[lo:hi]
            rec["score"] = idx.member_scores[lo:hi]
            fh.write(rec.tobytes())


def load_index(path) -> CeosIndex:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise FormatError(f"{path}: not a CEOS index file")
    header = struct.Struct("<IQIIIIQQQ")
    version, n, d, D, s, m, seed_r, seed_s, n_buckets = header.unpack_from(buf, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported index version {version}")
    params = CeosParams(n_projections=D, n_top=s, bucket_cap=m,
                        seed_r=seed_r, seed_s=seed_s)
    entry_t = np.dtype([("id", "<u4"), ("score", "<f8")])
    keys = np.empty(n_buckets, dtype=np.int64)
    counts = np.empty(n_buckets, dtype=np.int64)
    ids = []
    scores = []
    off = 4 + header.size
    rec_head = struct.Struct("<III")
    for b in range(n_buckets):
        if off + rec_head.size > len(buf):
            raise FormatError(f"{path}: truncated bucket record {b}")
        i, j, cnt = rec_head.unpack_from(buf, off)
        off += rec_head.size
        nbytes = cnt * entry_t.itemsize
        if off + nbytes > len(buf):
            raise FormatError(f"{path}: truncated bucket record {b}")
        rec = np.frombuffer(buf, dtype=entry_t, count=cnt, offset=off)
        off += nbytes
        keys[b] = np.int64(i) * D + j
        counts[b] = cnt
        ids.append(rec["id"].astype(np.int64))
        scores.append(rec["score"].astype(np.float64))
    indptr = np.zeros(n_buckets + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    member_ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
    member_scores = np.concatenate(scores) if scores else np.empty(0, dtype=np.float64)
    return CeosIndex(params, n, d, keys, indptr, member_ids, member_scores)
