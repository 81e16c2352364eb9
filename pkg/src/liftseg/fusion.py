"""Point-level context fusion and superpoint average pooling.

The fusion step is a lightweight stand-in for a sparse-convolution backbone:
project ``[F2D | xyz | rgb]`` to C channels, then run a few rounds of
radius-neighbourhood mean mixing. Any backbone with the same
``(points, features) -> features`` signature can replace it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class FusionConfig:
    rounds: int = 2
    neighbor_radius: float = 0.3
    feature_dim: int = 32
    seed: int = 0
    identity: bool = False  # pass F2D straight through the input projection

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.neighbor_radius <= 0:
            raise ValueError("neighbor_radius must be positive")


@dataclass
class SuperpointFeatures:
    features: np.ndarray  # S x C
    centers: np.ndarray  # S x 3
    sizes: np.ndarray  # S


@dataclass
class FusionWeights:
    projection: np.ndarray  # D_in x C
    mixers: list  # rounds x (2C x C)

    @classmethod
    def build(cls, input_dim, cfg: FusionConfig):
        C = cfg.feature_dim
        rng = np.random.default_rng(cfg.seed)
        if cfg.identity:
            proj = np.zeros((input_dim, C))
            proj[:C, :C] = np.eye(C)
            mixers = [np.vstack([np.eye(C), np.zeros((C, C))]) for _ in range(cfg.rounds)]
            return cls(proj, mixers)
        lim = 1.0 / np.sqrt(input_dim)
        proj = rng.uniform(-lim, lim, (input_dim, C))
        lim = 1.0 / np.sqrt(2 * C)
        mixers = [rng.uniform(-lim, lim, (2 * C, C)) for _ in range(cfg.rounds)]
        return cls(proj, mixers)


def normalize_xyz(points):
    """Per-axis min-max scaling to [0, 1]; a flat axis maps to 0."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    return (points - lo) / np.where(span > 0, span, 1.0)


def neighbor_mean_operator(points, radius):
    """Row-stochastic sparse matrix averaging each point's radius neighbourhood (self included)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return sparse.diags(1.0 / deg) @ adj


def fusion_input(points, features_2d, colors=None):
    blocks = [np.asarray(features_2d, dtype=np.float64), normalize_xyz(points)]
    if colors is not None:
        blocks.append(np.asarray(colors, dtype=np.float64))
    return np.concatenate(blocks, axis=1)


def fuse_context(points, decorated, colors=None, cfg: FusionConfig = FusionConfig(), weights=None):
    """Return N x C fused point features."""
    f2d = decorated.features_2d if hasattr(decorated, "features_2d") else decorated
    if len(f2d) != len(points):
        raise ValueError(f"{len(f2d)} decorated rows for {len(points)} points")
    x = fusion_input(points, f2d, colors)
    if weights is None:
        weights = FusionWeights.build(x.shape[1], cfg)
    f = x @ weights.projection
    if weights.mixers:
        avg = neighbor_mean_operator(points, cfg.neighbor_radius)
        for mix in weights.mixers:
            f = np.concatenate([f, avg @ f], axis=1) @ mix
    return f


def pool_superpoints(f3d, points, labels):
    """Average point features and coordinates per superpoint."""
    labels = np.asarray(labels)
    f3d = np.asarray(f3d, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("no points to pool")
    if labels.min() < 0:
        raise ValueError("superpoint labels must be non-negative")
    sizes = np.bincount(labels)
    if np.any(sizes == 0):
        raise ValueError(f"superpoint id {int(np.flatnonzero(sizes == 0)[0])} has no points")
    S = len(sizes)
    feats = np.zeros((S, f3d.shape[1]))
    centers = np.zeros((S, 3))
    np.add.at(feats, labels, f3d)
    np.add.at(centers, labels, points)
    return SuperpointFeatures(feats / sizes[:, None], centers / sizes[:, None], sizes)
