"""Dataset loading, unit-sphere normalization, and random kernel feature maps.

File formats:
    fvecs  -- repeated records of [int32 dim][float32 x dim], little-endian
    csv    -- comma-separated numeric rows, no quoting
    labels -- one decimal integer per line
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

METRICS = ("cosine", "l2", "l1")


@dataclass
class Dataset:
    """A dense row-major point matrix with an optional distance-metric tag."""

    points: np.ndarray
    metric: str | None = None
    normalized: bool = False

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"dataset needs n >= 1 and d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ValueError(f"non-finite value in row {bad}")
        if self.metric is not None and self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class KernelFeatureConfig:
    """Configuration for a random Fourier feature map.

    The output dimension is 2 * d_prime (an interleaved sin/cos pair per
    random direction).  `sigma` is the kernel bandwidth in the same units
    as the input distances.  Identical (seed, config) pairs produce
    bit-identical feature matrices.
    """

    target_metric: str
    d_prime: int = 1024
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.target_metric not in ("l2", "l1"):
            raise ConfigError(f"target_metric must be 'l2' or 'l1', got {self.target_metric!r}")
        if self.d_prime < 1:
            raise ConfigError(f"d_prime must be >= 1, got {self.d_prime}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")


def load_fvecs(path) -> Dataset:
    """Read an fvecs file into a Dataset (metric left unset)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    size = len(buf)
    if size == 0:
        raise FormatError(f"{path}: no records")
    if size < 4:
        raise FormatError(f"{path}: truncated record at byte offset 0")
    dim = int(np.frombuffer(buf[:4], dtype="<i4")[0])
    if dim < 1:
        raise FormatError(f"{path}: invalid dim {dim} in first record")
    rec_bytes = 4 * (dim + 1)
    n, rem = divmod(size, rec_bytes)
    if rem == 0:
        words = np.frombuffer(buf, dtype="<i4").reshape(n, dim + 1)
        dims = words[:, 0]
        if np.all(dims == dim):
            pts = np.frombuffer(buf, dtype="<f4").reshape(n, dim + 1)[:, 1:]
            return Dataset(points=np.array(pts, dtype=np.float64))
    # Misaligned or inconsistent: scan to report the precise failure.
    offset = 0
    rec = 0
    while offset < size:
        if size - offset < 4:
            raise FormatError(f"{path}: truncated record {rec} at byte offset {offset}")
        d_rec = int(np.frombuffer(buf[offset : offset + 4], dtype="<i4")[0])
        if d_rec != dim:
            raise FormatError(
                f"{path}: record {rec} has dim {d_rec}, record 0 has dim {dim}"
            )
        if size - offset < rec_bytes:
            raise FormatError(f"{path}: truncated record {rec} at byte offset {offset}")
        offset += rec_bytes
        rec += 1
    raise FormatError(f"{path}: malformed fvecs file")  # pragma: no cover


def save_fvecs(ds: Dataset, path) -> None:
    """Write points as float32 fvecs records."""
    n, d = ds.n, ds.d
    rec = np.empty((n, d + 1), dtype="<f4")
    rec[:, 1:] = ds.points.astype("<f4")
    rec.view("<i4")[:, 0] = d
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a numeric CSV file into a Dataset (metric left unset)."""
    rows = []
    width = None
    with open(path, "r", newline="") as fh:
        reader = _csv.reader(fh)
        for lineno, fields in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not fields:
                continue
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise FormatError(
                    f"{path}: line {lineno} has {len(fields)} fields, expected {width}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                col = next(i for i, v in enumerate(fields) if not _is_float(v)) + 1
                raise FormatError(
                    f"{path}: non-numeric field at line {lineno}, column {col}"
                ) from None
    if not rows:
        raise FormatError(f"{path}: no records")
    return Dataset(points=np.asarray(rows, dtype=np.float64))


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_csv(ds: Dataset, path) -> None:
    """Write points as CSV with 9 significant digits (round-trips float32)."""
    np.savetxt(path, ds.points, fmt="%.9g", delimiter=",")


def load_labels(path) -> np.ndarray:
    """Read one integer label per line."""
    labels = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return labels


def save_labels(labels: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")


def normalize_unit(ds: Dataset) -> Dataset:
    """Scale every row to unit Euclidean norm; tags the result as cosine."""
    norms = np.linalg.norm(ds.points, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"zero-norm row {int(zero[0])} cannot be normalized")
    return Dataset(points=ds.points / norms[:, None], metric="cosine", normalized=True)


def estimate_sigma(ds: Dataset, metric: str | None = None, sample: int = 1000,
                   seed: int = 0) -> float:
    """Mean pairwise distance over a uniform sample, used as a bandwidth default."""
    from scipy.spatial.distance import pdist

    metric = metric or ds.metric or "l2"
    rng = np.random.default_rng(seed)
    if ds.n > sample:
        idx = rng.choice(ds.n, size=sample, replace=False)
        pts = ds.points[np.sort(idx)]
    else:
        pts = ds.points
    name = {"l2": "euclidean", "l1": "cityblock", "cosine": "cosine"}[metric]
    return float(np.mean(pdist(pts, name)))


def kernel_map(ds: Dataset, cfg: KernelFeatureConfig) -> Dataset:
    """Map points onto the unit sphere so that dot products approximate a kernel.

    Output row t is 1/sqrt(d') * (sin(w_1.x_t), cos(w_1.x_t), ..., sin(w_d'.x_t),
    cos(w_d'.x_t)).  For target_metric 'l2' the directions w_i have i.i.d.
    Gaussian coordinates with std 1/sigma, so E[f(x).f(y)] = exp(-|x-y|^2/2sigma^2);
    for 'l1' they are i.i.d. Cauchy with scale 1/sigma, giving the Laplacian
    kernel exp(-|x-y|_1/sigma).  Every output row has exactly unit norm.
    """
    if ds.metric is not None and ds.metric != cfg.target_metric:
        raise ConfigError(
            f"dataset metric {ds.metric!r} does not match target {cfg.target_metric!r}"
        )
    rng = np.random.default_rng(cfg.seed)
    if cfg.target_metric == "l2":
        w = rng.standard_normal((ds.d, cfg.d_prime)) / cfg.sigma
    else:
        w = rng.standard_cauchy((ds.d, cfg.d_prime)) / cfg.sigma
    phase = ds.points @ w
    out = np.empty((ds.n, 2 * cfg.d_prime), dtype=np.float64)
    out[:, 0::2] = np.sin(phase)
    out[:, 1::2] = np.cos(phase)
    out /= np.sqrt(cfg.d_prime)
    return Dataset(points=out, metric="cosine", normalized=True)
