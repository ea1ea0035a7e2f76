"""Structured random projections via the fast Walsh-Hadamard transform.

A spinner applies three rounds of (random sign flip, orthonormal WHT) to a
zero-padded input, which mimics projecting onto a dense Gaussian matrix at
O(D log D) cost per point instead of O(dD).
"""

from __future__ import annotations

import numpy as np


def _is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def next_pow2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


def fht_inplace(v: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform over the last axis, in place.

    Uses the 1/sqrt(D) scaling, so the transform preserves norms and is its
    own inverse.  The last-axis length must be a power of two.
    """
    d = v.shape[-1]
    if not _is_pow2(d):
        raise ValueError(f"length {d} is not a power of two")
    flat = v.reshape(-1, d)
    h = 1
    while h < d:
        m = flat.reshape(flat.shape[0], d // (2 * h), 2, h)
        a = m[:, :, 0, :] + m[:, :, 1, :]
        b = m[:, :, 0, :] - m[:, :, 1, :]
        m[:, :, 0, :] = a
        m[:, :, 1, :] = b
        h *= 2
    flat *= 1.0 / np.sqrt(d)
    return v


class StructuredSpinner:
    """Three-block HD sign-flip/Hadamard cascade.

    `block` is the (power-of-two) transform size; inputs of dimension up to
    `block` are zero-padded.  Projections are linear, norm-preserving, and
    deterministic for a fixed seed, so a spinner can be shared read-only by
    any number of workers.
    """

    def __init__(self, block: int, seed: int):
        if not _is_pow2(block):
            raise ValueError(f"block size {block} is not a power of two")
        self.block = block
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.signs = (rng.integers(0, 2, size=(3, block)) * 2 - 1).astype(np.float64)

    @classmethod
    def for_dims(cls, d: int, n_projections: int, seed: int) -> "StructuredSpinner":
        """Spinner whose block covers both the input dim and the projection count."""
        return cls(next_pow2(max(d, n_projections, 2)), seed)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project a single length-d vector (d <= block) onto `block` directions."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("project expects a 1-D vector")
        return self.project_rows(x[None, :])[0]

    def project_rows(self, rows: np.ndarray) -> np.ndarray:
        """Project each row of an (n, d) array; returns (n, block)."""
        rows = np.asarray(rows, dtype=np.float64)
        n, d = rows.shape
        if d > self.block:
            raise ValueError(f"input dim {d} exceeds block size {self.block}")
        out = np.zeros((n, self.block), dtype=np.float64)
        out[:, :d] = rows
        for flips in self.signs:
            out *= flips
            fht_inplace(out)
        return out
