"""Principal component analysis with a deterministic sign convention."""

from __future__ import annotations

import numpy as np


def pca(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centered ``points`` onto their top-``k`` principal axes.

    Returns ``(coords, ratios)`` where ``coords`` has shape ``(N, k)`` and
    ``ratios[i]`` is the fraction of total variance explained by component
    ``i`` (components sorted by decreasing variance).  Each component's sign
    is fixed so that its largest-magnitude entry is positive.  Rank-deficient
    inputs yield zero-variance trailing components rather than an error.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n, d = x.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points for {k} components")
    k = min(k, d)
    centered = x - x.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    variances = singular**2 / max(n - 1, 1)
    total = variances.sum()
    components = vt[:k]
    for i in range(k):
        pivot = np.argmax(np.abs(components[i]))
        if components[i, pivot] < 0:
            components[i] = -components[i]
    coords = centered @ components.T
    ratios = variances[:k] / total if total > 0 else np.zeros(k)
    return coords, ratios


def explained_spectrum(points: np.ndarray) -> np.ndarray:
    """Full explained-variance ratio spectrum, sorted descending."""
    x = np.asarray(points, dtype=np.float64)
    centered = x - x.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    variances = singular**2
    total = variances.sum()
    return variances / total if total > 0 else variances
