"""Shared synthetic instances for the test suite."""

import numpy as np
import pytest

from vdclust import Dataset, normalize_unit


def gaussian_blobs(n_blobs, per_blob, sep, seed, sigma=1.0, dim=2):
    """Well-separated isotropic Gaussian blobs with ground-truth labels."""
    rng = np.random.default_rng(seed)
    pts, labels = [], []
    for b in range(n_blobs):
        center = np.zeros(dim)
        center[0] = sep * b
        pts.append(rng.normal(center, sigma, (per_blob, dim)))
        labels.append(np.full(per_blob, b))
    return Dataset(np.vstack(pts), metric="l2"), np.concatenate(labels)


def truncated_gaussian_blob(rng, center, sigma, n, trunc=0.5):
    """2-D Gaussian samples rejected outside radius trunc * sigma."""
    out = []
    need = n
    while need > 0:
        cand = rng.normal(0.0, sigma, (max(8, 4 * need), 2))
        keep = np.linalg.norm(cand, axis=1) <= trunc * sigma
        out.append(cand[keep][:need])
        need = n - sum(len(a) for a in out)
    return np.vstack(out) + center


def varied_density_blobs(seed, per_blob=1000, trunc=0.5):
    """Three truncated 2-D Gaussian blobs with peak-density ratios 1:4:16.

    Returns (dataset, labels, density_levels) where the levels bracket each
    blob's known density range from below, so a multi-threshold density
    oracle captures one blob per level.
    """
    rng = np.random.default_rng(seed)
    sigmas = (1.0, 0.5, 0.25)
    centers = ((0.0, 0.0), (10.0, 0.0), (20.0, 0.0))
    pts, labels = [], []
    for b, (sig, ctr) in enumerate(zip(sigmas, centers)):
        pts.append(truncated_gaussian_blob(rng, np.array(ctr), sig, per_blob, trunc))
        labels.append(np.full(per_blob, b))
    n = 3 * per_blob
    # Density of each truncated blob: mass 1/3 within radius trunc*sigma.
    mass = 1.0 - np.exp(-trunc ** 2 / 2.0)
    mins = []
    for sig in sigmas:
        peak = (1.0 / 3.0) / mass * 1.0 / (2 * np.pi * sig ** 2) * np.exp(0)
        mins.append(peak * np.exp(-trunc ** 2 / 2.0))
    levels = tuple(m / 2.0 for m in mins)  # half the in-blob minimum density
    return Dataset(np.vstack(pts), metric="l2"), np.concatenate(labels), levels


def sphere_clusters(n, dim, n_clusters, seed, noise=0.25):
    """Unit vectors drawn around random cluster directions."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    reps = np.repeat(centers, n // n_clusters, axis=0)
    if len(reps) < n:
        reps = np.vstack([reps, centers[: n - len(reps)]])
    pts = reps + noise * rng.normal(size=(n, dim))
    labels = np.repeat(np.arange(n_clusters), n // n_clusters)
    if len(labels) < n:
        labels = np.concatenate([labels, np.arange(n - len(labels))])
    return normalize_unit(Dataset(pts)), labels


@pytest.fixture(scope="session")
def two_blob_instance():
    """The standard two-blob instance: n=400, separation 10 sigma."""
    return gaussian_blobs(2, 200, 10.0, seed=7)
