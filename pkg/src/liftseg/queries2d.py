"""2D object queries: confident detections lifted to 3D medoid centers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import backproject_pixels

DEFAULT_TAU_CONF = 0.4
DEFAULT_MAX_SAMPLES = 1024
DEFAULT_NUM_QUERIES = 2048
DEFAULT_DROP_RATE = 0.7


class NoGeometryError(ValueError):
    """A detection mask contains no pixel with a valid depth."""


@dataclass
class Query2D:
    content: np.ndarray  # C
    center: np.ndarray  # 3, world meters
    source_view: int
    confidence: float
    class_id: int = -1


def filter_detections(views, tau_conf=DEFAULT_TAU_CONF):
    """All ``(view_index, detection)`` pairs with confidence >= ``tau_conf``."""
    return [(vi, det) for vi, view in enumerate(views) for det in view.detections if det.confidence >= tau_conf]


def masked_points(det, view):
    """Back-project every mask pixel that carries a positive depth."""
    depth = np.asarray(view.depth_map, dtype=np.float64)
    rows, cols = np.nonzero(det.mask & (depth > 0))
    if rows.size == 0:
        return np.zeros((0, 3))
    return backproject_pixels(cols, rows, depth[rows, cols], view.intrinsics, view.extrinsics)


def medoid_index(points):
    """Index of the point with the smallest summed Euclidean distance to all others."""
    points = np.asarray(points, dtype=np.float64)
    diff = points[:, None, :] - points[None, :, :]
    total = np.sqrt((diff**2).sum(axis=-1)).sum(axis=1)
    return int(np.argmin(total))


def medoid_center(det, view, max_samples=DEFAULT_MAX_SAMPLES, seed=0):
    pts = masked_points(det, view)
    if len(pts) == 0:
        raise NoGeometryError("no valid depth inside detection mask")
    if len(pts) > max_samples:
        keep = np.random.default_rng(seed).choice(len(pts), size=max_samples, replace=False)
        pts = pts[np.sort(keep)]
    return pts[medoid_index(pts)]


def fps_downsample(centers, num_samples=DEFAULT_NUM_QUERIES):
    """Greedy farthest point sampling seeded at index 0.

    Returns all indices when there are no more than ``num_samples`` inputs.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    n = len(centers)
    if n <= num_samples:
        return np.arange(n)
    chosen = np.empty(num_samples, dtype=np.int64)
    chosen[0] = 0
    min_d = np.linalg.norm(centers - centers[0], axis=1)
    for i in range(1, num_samples):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        min_d = np.minimum(min_d, np.linalg.norm(centers - centers[nxt], axis=1))
    return chosen


def dropout_queries(queries, rate=DEFAULT_DROP_RATE, seed=0):
    """Drop exactly ``floor(rate * n)`` queries uniformly at random, keeping survivor order."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    n = len(queries)
    n_drop = math.floor(rate * n)
    if n_drop == 0:
        return list(queries)
    dropped = set(np.random.default_rng(seed).choice(n, size=n_drop, replace=False).tolist())
    return [q for i, q in enumerate(queries) if i not in dropped]


def build_queries(
    views,
    tau_conf=DEFAULT_TAU_CONF,
    num_queries=DEFAULT_NUM_QUERIES,
    max_samples=DEFAULT_MAX_SAMPLES,
    drop_rate=0.0,
    seed=0,
):
    """Confidence filter, medoid lifting, FPS, and optional dropout (training only)."""
    queries = []
    for i, (vi, det) in enumerate(filter_detections(views, tau_conf)):
        try:
            center = medoid_center(det, views[vi], max_samples, seed=seed + i)
        except NoGeometryError:
            continue
        queries.append(
            Query2D(np.asarray(det.query_feature, dtype=np.float64), center, vi, det.confidence, det.class_id)
        )
    if queries:
        keep = fps_downsample(np.stack([q.center for q in queries]), num_queries)
        queries = [queries[i] for i in keep]
    if drop_rate > 0:
        queries = dropout_queries(queries, drop_rate, seed)
    return queries
