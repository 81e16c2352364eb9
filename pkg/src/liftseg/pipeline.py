"""End-to-end inference and the predictions file format."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .decoder import (
    DecoderConfig,
    box_filter_masks,
    class_probabilities,
    daca_mask,
    run_decoder,
    scene_extent_from_points,
    stack_queries,
)
from .fusion import FusionConfig, fuse_context, pool_superpoints
from .numerics import PEConfig
from .queries2d import build_queries
from .scene import FORMAT_VERSION, BundleError, read_manifest_dir, write_manifest_dir
from .view_sampling import decorate_points

log = logging.getLogger(__name__)

PREDICTIONS_FORMAT = "liftseg-predictions"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass
class Predictions:
    sp_masks: np.ndarray  # P x S bool
    class_probs: np.ndarray  # P x (num_classes + 1)
    boxes: np.ndarray  # P x 6
    scores: np.ndarray  # P
    query_index: np.ndarray  # P, originating query (= superpoint in eval mode)
    num_classes: int

    @property
    def classes(self):
        return self.class_probs[:, : self.num_classes].argmax(axis=1) if len(self.scores) else np.zeros(0, int)

    def __len__(self):
        return len(self.scores)

    def point_masks(self, labels):
        return self.sp_masks[:, np.asarray(labels)]

    def save(self, path):
        write_manifest_dir(
            path,
            {
                "format": PREDICTIONS_FORMAT,
                "version": FORMAT_VERSION,
                "num_classes": int(self.num_classes),
                "num_predictions": len(self),
                "num_superpoints": int(self.sp_masks.shape[1]),
            },
            {
                "sp_masks": (self.sp_masks, "uint8"),
                "class_probs": (self.class_probs, "float32"),
                "boxes": (self.boxes, "float32"),
                "scores": (self.scores, "float32"),
                "query_index": (self.query_index, "int32"),
            },
        )

    @classmethod
    def load(cls, path):
        manifest, load = read_manifest_dir(path, PREDICTIONS_FORMAT)
        try:
            nc = int(manifest["num_classes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"manifest: bad num_classes ({exc})") from exc
        p = cls(
            sp_masks=load("sp_masks").astype(bool),
            class_probs=_renormalize(load("class_probs").astype(np.float64)),
            boxes=load("boxes").astype(np.float64),
            scores=load("scores").astype(np.float64),
            query_index=load("query_index").astype(np.int64),
            num_classes=nc,
        )
        P = len(p.scores)
        if not (p.sp_masks.shape[0] == P and p.class_probs.shape == (P, nc + 1) and p.boxes.shape == (P, 6)):
            raise BundleError("predictions: array shapes disagree on the prediction count")
        return p


def _renormalize(p):
    # float32 storage perturbs row sums by ~1e-7
    return p / p.sum(axis=1, keepdims=True) if p.size else p


def mask_nms(masks, scores, weights, iou_threshold):
    """Greedy mask NMS; returns kept indices in descending score order."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    if iou_threshold is None:
        return order
    m = np.asarray(masks, dtype=np.float64) * np.asarray(weights, dtype=np.float64)
    b = np.asarray(masks, dtype=np.float64)
    area = m.sum(axis=1)
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        if suppressed[rank]:
            continue
        keep.append(i)
        rest = order[rank + 1 :]
        inter = b[rest] @ m[i]
        union = area[rest] + area[i] - inter
        iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        suppressed[rank + 1 :] |= iou > iou_threshold
    return np.array(keep, dtype=np.int64)


def decoder_config(cfg: RunConfig, feature_dim, points):
    d = cfg.decoder
    return DecoderConfig(
        num_layers=d.num_layers,
        feature_dim=feature_dim,
        pe=PEConfig(d.pe_dims, d.pe_temperature),
        tau_sim=d.tau_sim,
        tau_dist=d.tau_dist,
        size_init=tuple(d.size_init),
        scene_extent=scene_extent_from_points(points),
        modulated=d.modulated,
        weights=d.weights,
        seed=d.seed,
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # re-raised with the stage attached
        raise StageError(name, exc) from exc


def infer(bundle, cfg: RunConfig = None):
    """decorate -> fuse -> pool -> 2D queries -> decoder -> post-processing."""
    cfg = RunConfig() if cfg is None else cfg
    points = np.asarray(bundle.points, dtype=np.float64)
    C = bundle.feature_dim
    s = cfg.sampling
    dec = _stage("decorate", decorate_points, bundle, s.k, s.depth_tolerance, s.workers)
    fcfg = FusionConfig(cfg.fusion.rounds, cfg.fusion.neighbor_radius, C, cfg.fusion.seed, cfg.fusion.identity)
    f3d = _stage("fuse", fuse_context, points, dec, bundle.point_colors, fcfg)
    sp = _stage("pool", pool_superpoints, f3d, points, bundle.superpoint_labels)
    q = cfg.queries
    q2d = _stage("queries2d", build_queries, bundle.views, q.tau_conf, q.num_queries, q.max_samples, 0.0, cfg.seed)
    log.info("points=%d superpoints=%d 2d-queries=%d", len(points), len(sp.features), len(q2d))

    dcfg = _stage("decoder", decoder_config, cfg, C, points)
    state = _stage("decoder", run_decoder, sp, q2d, dcfg, "eval")
    return _stage("post", postprocess, state, sp, q2d, dcfg, cfg, bundle.num_classes)


def postprocess(state, sp, q2d, dcfg, cfg, num_classes):
    mask = box_filter_masks(state.mask, state.boxes, sp.centers, cfg.post.box_margin)
    R, centers = stack_queries(q2d, dcfg.feature_dim)
    allowed, _ = daca_mask(mask, sp.centers, centers, dcfg.tau_dist)
    classes = np.array([q.class_id for q in q2d], dtype=np.int64)
    probs = class_probabilities(state.content, R, classes, allowed, num_classes, dcfg.tau_sim)

    bits = mask.sum(axis=1)
    mask_score = np.divide((state.mask_probs * mask).sum(axis=1), bits, out=np.zeros(len(mask)), where=bits > 0)
    scores = probs[:, :num_classes].max(axis=1) * mask_score
    valid = (bits > 0) & (probs.argmax(axis=1) < num_classes) & (scores > cfg.post.min_score)
    idx = np.flatnonzero(valid)
    keep = idx[mask_nms(mask[idx], scores[idx], sp.sizes, cfg.post.nms_iou)]
    return Predictions(
        sp_masks=mask[keep],
        class_probs=probs[keep],
        boxes=state.boxes[keep],
        scores=scores[keep],
        query_index=state.query_superpoints[keep],
        num_classes=num_classes,
    )
