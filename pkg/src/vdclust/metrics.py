"""Clustering agreement scores: contingency table, NMI, AMI, ARI.

All information quantities use natural logarithms.  The expected mutual
information inside AMI is the exact hypergeometric expectation, evaluated
in log space so it stays finite for totals around 10^6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass
class ContingencyTable:
    """Co-occurrence counts between two partitions of the same points."""

    table: np.ndarray      # (r, c) int64
    row_sums: np.ndarray   # predicted-cluster sizes
    col_sums: np.ndarray   # true-cluster sizes
    total: int


def contingency(pred, truth, noise_policy: str = "own-cluster") -> ContingencyTable:
    """Cross-tabulate predicted vs true labels.

    Noise entries (-1 in `pred`) either become one extra predicted cluster
    ("own-cluster", the default) or are dropped from both partitions
    ("exclude").  True labels must be non-negative.
    """
    pred = np.asarray(getattr(pred, "labels", pred), dtype=np.int64)
    truth = np.asarray(getattr(truth, "labels", truth), dtype=np.int64)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: pred has {len(pred)}, truth has {len(truth)}")
    if np.any(truth < 0):
        raise ValueError("ground-truth labels must be non-negative")
    if noise_policy not in ("own-cluster", "exclude"):
        raise ValueError(f"unknown noise policy {noise_policy!r}")
    if noise_policy == "exclude":
        keep = pred >= 0
        pred, truth = pred[keep], truth[keep]
    else:
        pred = pred.copy()
        if np.any(pred < 0):
            pred[pred < 0] = pred.max() + 1 if pred.max() >= 0 else 0
    n = len(pred)
    if n == 0:
        return ContingencyTable(table=np.zeros((0, 0), dtype=np.int64),
                                row_sums=np.zeros(0, dtype=np.int64),
                                col_sums=np.zeros(0, dtype=np.int64), total=0)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    r = int(pi.max()) + 1
    c = int(ti.max()) + 1
    table = np.bincount(pi * c + ti, minlength=r * c).reshape(r, c)
    return ContingencyTable(table=table, row_sums=table.sum(axis=1),
                            col_sums=table.sum(axis=0), total=n)


def _entropy(sizes: np.ndarray, n: int) -> float:
    p = sizes[sizes > 0] / n
    return float(-(p * np.log(p)).sum())


def mutual_info(t: ContingencyTable) -> float:
    """Mutual information of the two partitions, in nats."""
    if t.total == 0:
        return 0.0
    nz = t.table > 0
    nij = t.table[nz].astype(np.float64)
    outer = np.outer(t.row_sums, t.col_sums)[nz].astype(np.float64)
    return float((nij / t.total * (np.log(nij * t.total) - np.log(outer))).sum())


def nmi(t: ContingencyTable) -> float:
    """MI normalized by the mean of the two entropies, in [0, 1]."""
    if t.total == 0:
        return 0.0
    hp = _entropy(t.row_sums, t.total)
    ht = _entropy(t.col_sums, t.total)
    denom = 0.5 * (hp + ht)
    if denom == 0.0:
        # Both partitions are single-cluster, hence identical.
        return 1.0
    return mutual_info(t) / denom


def expected_mutual_info(t: ContingencyTable) -> float:
    """Exact E[MI] under the hypergeometric (permutation) null model."""
    n = t.total
    if n == 0:
        return 0.0
    a = t.row_sums[t.row_sums > 0].astype(np.int64)
    b = t.col_sums[t.col_sums > 0].astype(np.int64)
    lg = gammaln(np.arange(n + 2, dtype=np.float64) + 1.0)  # lg[x] = log(x!)
    emi = 0.0
    for ai in a.tolist():
        start_all = np.maximum(1, ai + b - n)
        stop_all = np.minimum(ai, b)
        base = lg[ai] + lg[n - ai] - lg[n]
        for bj, start, stop in zip(b.tolist(), start_all.tolist(), stop_all.tolist()):
            if start > stop:
                continue
            nij = np.arange(start, stop + 1, dtype=np.float64)
            log_pmf = (base + lg[bj] + lg[n - bj]
                       - lg[nij.astype(np.int64)]
                       - lg[ai - nij.astype(np.int64)]
                       - lg[bj - nij.astype(np.int64)]
                       - lg[(n - ai - bj + nij).astype(np.int64)])
            terms = nij / n * (np.log(nij * n) - np.log(float(ai) * bj))
            emi += float((terms * np.exp(log_pmf)).sum())
    return emi


def ami(t: ContingencyTable, average: str = "arithmetic") -> float:
    """Adjusted mutual information: (MI - E[MI]) / (norm - E[MI]).

    `average` picks the normalizer: the arithmetic mean of the two entropies
    (default) or their max.  A vanishing denominator yields 0 by convention.
    """
    if average not in ("arithmetic", "max"):
        raise ValueError(f"average must be 'arithmetic' or 'max', got {average!r}")
    if t.total == 0:
        return 0.0
    hp = _entropy(t.row_sums, t.total)
    ht = _entropy(t.col_sums, t.total)
    norm = 0.5 * (hp + ht) if average == "arithmetic" else max(hp, ht)
    mi = mutual_info(t)
    emi = expected_mutual_info(t)
    denom = norm - emi
    if abs(denom) < 1e-15 * max(1.0, abs(norm)):
        return 0.0
    return (mi - emi) / denom


def ari(t: ContingencyTable) -> float:
    """Adjusted Rand index by pair counting.

    With a vanishing denominator the score is 1 when the partitions are
    identical and 0 otherwise.
    """
    if t.total == 0:
        return 0.0
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = comb(t.table.astype(np.float64)).sum()
    sum_a = comb(t.row_sums.astype(np.float64)).sum()
    sum_b = comb(t.col_sums.astype(np.float64)).sum()
    pairs = comb(float(t.total))
    if pairs == 0:
        return 1.0
    expected = sum_a * sum_b / pairs
    denom = 0.5 * (sum_a + sum_b) - expected
    if abs(denom) < 1e-12 * max(1.0, sum_a + sum_b):
        return 1.0 if _identical(t) else 0.0
    return (sum_ij - expected) / denom


def _identical(t: ContingencyTable) -> bool:
    """True when the table encodes the same partition twice (a permutation)."""
    nz_per_row = (t.table > 0).sum(axis=1)
    nz_per_col = (t.table > 0).sum(axis=0)
    return bool(np.all(nz_per_row == 1) and np.all(nz_per_col == 1))


def evaluate(pred, truth, noise_policy: str = "own-cluster") -> dict:
    """Score dictionary matching the CLI `eval` output schema."""
    pred_arr = np.asarray(getattr(pred, "labels", pred), dtype=np.int64)
    truth_arr = np.asarray(getattr(truth, "labels", truth), dtype=np.int64)
    t = contingency(pred_arr, truth_arr, noise_policy)
    return {
        "ami": ami(t),
        "nmi": nmi(t),
        "ari": ari(t),
        "clusters_pred": int(len(np.unique(pred_arr[pred_arr >= 0]))),
        "clusters_true": int(len(np.unique(truth_arr))),
        "noise": int((pred_arr < 0).sum()),
    }
