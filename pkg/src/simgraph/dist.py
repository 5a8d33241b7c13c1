"""Distance primitive shared by search, graph construction, and ground truth."""

from __future__ import annotations

import numpy as np


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ``query`` to each row of ``points``.

    Vectors are stored float32; the subtraction and the accumulation run in
    float64 so evaluating the same pair twice is bit-identical no matter how
    the rows are batched.
    """
    pts = np.atleast_2d(np.asarray(points)).astype(np.float64, copy=False)
    q = np.asarray(query, dtype=np.float64)
    diff = pts - q
    return np.einsum("ij,ij->i", diff, diff)


def squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two single vectors."""
    return float(squared_distances(np.asarray(a)[None, :], b)[0])
