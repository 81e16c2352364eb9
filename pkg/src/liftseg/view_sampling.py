"""Nearest-view sampling: lift 2D feature maps onto 3D points.

Each point is projected into every view, depth-tested, and the k visible
views whose camera centers are closest contribute a bilinear feature sample.
The samples are averaged over however many views were actually selected.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_DEPTH_TOLERANCE, camera_distance, project_points, visible_mask
from .numerics import bilinear_sample

DEFAULT_K = 3


@dataclass
class PointDecoration:
    features_2d: np.ndarray  # N x C
    visible_view_count: np.ndarray  # N, number of views actually averaged


def nearest_views(distances, visible, k=DEFAULT_K):
    """Indices of at most ``k`` visible views, nearest first, ties to the lower index."""
    if k < 1:
        raise ValueError("k must be at least 1")
    distances = np.asarray(distances, dtype=np.float64)
    idx = np.flatnonzero(np.asarray(visible, dtype=bool))
    order = np.lexsort((idx, distances[idx]))
    return idx[order[:k]]


def select_views(distances, visible, k=DEFAULT_K):
    """Vectorised :func:`nearest_views` over points.

    ``distances`` and ``visible`` are N x V. Returns an N x k index array
    padded with -1 where fewer than ``k`` views are visible.
    """
    distances = np.asarray(distances, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    N, V = distances.shape
    keyed = np.where(visible, distances, np.inf)
    # stable argsort keeps lower view index first among equal distances
    order = np.argsort(keyed, axis=1, kind="stable")[:, :k]
    chosen_ok = np.take_along_axis(visible, order, axis=1)
    return np.where(chosen_ok, order, -1)


def project_all(points, views, tolerance=DEFAULT_DEPTH_TOLERANCE):
    """Per-view projections, distances and visibility, each N x V."""
    N, V = len(points), len(views)
    U = np.full((N, V), np.nan)
    Vv = np.full((N, V), np.nan)
    dist = np.empty((N, V))
    vis = np.zeros((N, V), dtype=bool)
    for j, view in enumerate(views):
        u, v, d, _ = project_points(points, view.intrinsics, view.extrinsics)
        U[:, j], Vv[:, j] = u, v
        dist[:, j] = camera_distance(points, view.extrinsics)
        vis[:, j] = visible_mask(u, v, d, view.depth_map, tolerance)
    return U, Vv, dist, vis


def feature_coords(u, v, view):
    """Map depth-image pixel coordinates onto the view's feature grid."""
    K = view.intrinsics
    h, w = view.feature_map.shape[:2]
    return u * w / K.width, v * h / K.height


def _decorate_range(points, views, k, tolerance, C):
    U, Vv, dist, vis = project_all(points, views, tolerance)
    chosen = select_views(dist, vis, k)
    acc = np.zeros((len(points), C))
    count = (chosen >= 0).sum(axis=1)
    for j, view in enumerate(views):
        rows = np.flatnonzero((chosen == j).any(axis=1))
        if rows.size == 0:
            continue
        fu, fv = feature_coords(U[rows, j], Vv[rows, j], view)
        acc[rows] += bilinear_sample(view.feature_map, fu, fv)
    nz = count > 0
    acc[nz] /= count[nz, None]
    return acc, count


def decorate_points(bundle, k=DEFAULT_K, tolerance=DEFAULT_DEPTH_TOLERANCE, workers=1, chunk=4096):
    """Average bilinear feature samples over each point's nearest visible views.

    Points are independent, so the cloud is split into fixed-size chunks that
    may be processed on ``workers`` threads; the result does not depend on
    the worker count.
    """
    points = np.asarray(bundle.points, dtype=np.float64)
    C = bundle.feature_dim
    N = len(points)
    if not bundle.views:
        return PointDecoration(np.zeros((N, C)), np.zeros(N, dtype=np.int64))
    bounds = [(s, min(s + chunk, N)) for s in range(0, N, chunk)]

    def run(b):
        return _decorate_range(points[b[0] : b[1]], bundle.views, k, tolerance, C)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    feats = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts]).astype(np.int64)
    return PointDecoration(feats, counts)
