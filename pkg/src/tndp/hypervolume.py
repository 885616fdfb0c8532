"""Two-objective hypervolume for minimisation fronts."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

REFERENCE_EPS = 1e-5


def hypervolume(points: Iterable[Sequence[float]], reference: Sequence[float]) -> float:
    """Area dominated by ``points`` and bounded by ``reference``.

    Every point must be strictly below the reference in both coordinates.
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    ref = np.asarray(reference, dtype=float)
    if len(pts) == 0:
        return 0.0
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    if np.any(pts >= ref):
        raise ValueError(f"every point must dominate the reference {tuple(ref)}")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    area, y_prev = 0.0, ref[1]
    for x, y in pts:
        if y < y_prev:
            area += (ref[0] - x) * (y_prev - y)
            y_prev = y
    return float(area)


def reference_point(point_sets: Iterable[Iterable[Sequence[float]]], eps: float = REFERENCE_EPS) -> tuple[float, float]:
    """Componentwise maximum over all sets, pushed out by ``eps``."""
    allp = np.concatenate([np.asarray(list(s), dtype=float).reshape(-1, 2) for s in point_sets])
    m = allp.max(axis=0)
    return float(m[0] + eps), float(m[1] + eps)


def pareto_front(points: Iterable[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    keep = [k for k, p in enumerate(pts)
            if not np.any(np.all(pts <= p, axis=1) & np.any(pts < p, axis=1))]
    return pts[keep]
