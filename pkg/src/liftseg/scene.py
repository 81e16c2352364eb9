"""Scene data model and the on-disk scene-bundle format.

A bundle is a directory holding ``manifest.json`` plus one raw
little-endian, row-major binary blob per array. See README for the
field-by-field layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraExtrinsics, CameraIntrinsics

FORMAT_NAME = "liftseg-scene"
FORMAT_VERSION = "1"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "int32": np.dtype("<i4"),
    "uint8": np.dtype("u1"),
}


class BundleError(ValueError):
    """Raised for malformed, inconsistent or unsupported bundle data."""


@dataclass
class Detection2D:
    confidence: float
    mask: np.ndarray  # H x W bool
    query_feature: np.ndarray  # C
    class_id: int


@dataclass
class PosedView:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    depth_map: np.ndarray  # H x W, 0 = no return
    feature_map: np.ndarray  # h x w x C
    detections: list = field(default_factory=list)


@dataclass
class GtInstance:
    point_mask: np.ndarray  # N bool
    class_id: int


@dataclass
class SceneBundle:
    points: np.ndarray
    superpoint_labels: np.ndarray
    views: list
    gt_instances: list
    feature_dim: int
    num_classes: int
    point_colors: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_points(self):
        return int(self.points.shape[0])

    @property
    def num_superpoints(self):
        return int(self.superpoint_labels.max()) + 1 if self.superpoint_labels.size else 0

    def validate(self):
        """Check every structural invariant; raise :class:`BundleError` on the first failure."""
        N = self.points.shape[0]
        if self.points.ndim != 2 or self.points.shape[1] != 3 or N == 0:
            raise BundleError(f"points: expected non-empty N x 3, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise BundleError("points: non-finite coordinates")
        if self.point_colors is not None and self.point_colors.shape != (N, 3):
            raise BundleError(f"point_colors: expected ({N}, 3), got {self.point_colors.shape}")
        labels = self.superpoint_labels
        if labels.shape != (N,):
            raise BundleError(f"superpoint_labels: expected ({N},), got {labels.shape}")
        if labels.min() < 0:
            raise BundleError("superpoint_labels: negative id")
        counts = np.bincount(labels)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise BundleError(f"superpoint_labels: id {missing} owns no points")
        C = self.feature_dim
        for vi, view in enumerate(self.views):
            K = view.intrinsics
            if view.depth_map.shape != (K.height, K.width):
                raise BundleError(
                    f"view {vi} depth: shape {view.depth_map.shape} != intrinsics ({K.height}, {K.width})"
                )
            if np.any(view.depth_map < 0):
                raise BundleError(f"view {vi} depth: negative values")
            if view.feature_map.ndim != 3 or view.feature_map.shape[2] != C:
                raise BundleError(f"view {vi} features: expected h x w x {C}, got {view.feature_map.shape}")
            for di, det in enumerate(view.detections):
                where = f"view {vi} detection {di}"
                if det.mask.shape != (K.height, K.width):
                    raise BundleError(f"{where} mask: shape {det.mask.shape}")
                if not det.mask.any():
                    raise BundleError(f"{where} mask: empty")
                if not 0.0 <= det.confidence <= 1.0:
                    raise BundleError(f"{where} confidence: {det.confidence} outside [0, 1]")
                if det.query_feature.shape != (C,):
                    raise BundleError(f"{where} query_feature: shape {det.query_feature.shape}")
        for gi, gt in enumerate(self.gt_instances):
            if gt.point_mask.shape != (N,) or not gt.point_mask.any():
                raise BundleError(f"gt instance {gi} point_mask: empty or wrong shape")
            if not 0 <= gt.class_id < self.num_classes:
                raise BundleError(f"gt instance {gi} class_id: {gt.class_id} outside [0, {self.num_classes})")
        return self


def grid_superpoints(points, cell_size, origin=None):
    """Voxel-grid superpoints: points sharing an occupied cell share a dense label."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    points = np.asarray(points, dtype=np.float64)
    origin = points.min(axis=0) if origin is None else np.asarray(origin, dtype=np.float64)
    cells = np.floor((points - origin) / cell_size).astype(np.int64)
    _, labels = np.unique(cells, axis=0, return_inverse=True)
    return labels.reshape(-1).astype(np.int32)


# --------------------------------------------------------------------------- IO


def _write_array(root: Path, name, arr, dtype, arrays):
    arr = np.ascontiguousarray(np.asarray(arr).astype(_DTYPES[dtype], copy=False))
    fname = f"{name}.bin"
    (root / fname).write_bytes(arr.tobytes(order="C"))
    arrays[name] = {"file": fname, "dtype": dtype, "shape": list(arr.shape)}


def write_manifest_dir(path, manifest, layout):
    """Write ``manifest.json`` + blobs. ``layout`` maps name -> (array, dtype)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, (arr, dtype) in layout.items():
        _write_array(root, name, arr, dtype, arrays)
    manifest = dict(manifest, arrays=arrays)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (root / "manifest.json").write_text(text)


def read_manifest_dir(path, expected_format):
    """Read and check a manifest directory; returns ``(manifest, loader)``."""
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise BundleError(f"manifest: {mpath} not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"manifest: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise BundleError("manifest: top level must be an object")
    if manifest.get("format") != expected_format:
        raise BundleError(f"format: expected {expected_format!r}, got {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise BundleError(
            f"version: unsupported format version {manifest.get('version')!r} (supported: {FORMAT_VERSION!r})"
        )
    arrays = manifest.get("arrays")
    if not isinstance(arrays, dict):
        raise BundleError("arrays: missing or not an object")

    def load(name):
        entry = arrays.get(name)
        if entry is None:
            raise BundleError(f"arrays.{name}: missing")
        try:
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            fname = entry["file"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"arrays.{name}: malformed entry ({exc})") from exc
        if any(s < 0 for s in shape):
            raise BundleError(f"arrays.{name}.shape: negative extent {shape}")
        if os.path.basename(fname) != fname:
            raise BundleError(f"arrays.{name}.file: must be a plain file name, got {fname!r}")
        fpath = root / fname
        if not fpath.is_file():
            raise BundleError(f"arrays.{name}: blob {fname} not found")
        raw = fpath.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(raw) != expected:
            raise BundleError(
                f"arrays.{name}: blob {fname} has {len(raw)} bytes, expected {expected} for shape {shape}"
            )
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    return manifest, load


def save_bundle(bundle: SceneBundle, path):
    layout = {
        "points": (bundle.points, "float32"),
        "superpoint_labels": (bundle.superpoint_labels, "int32"),
    }
    if bundle.point_colors is not None:
        layout["point_colors"] = (bundle.point_colors, "float32")
    N = bundle.num_points
    gt_masks = np.stack([g.point_mask for g in bundle.gt_instances]) if bundle.gt_instances else np.zeros((0, N))
    layout["gt_masks"] = (gt_masks, "uint8")
    layout["gt_classes"] = (np.array([g.class_id for g in bundle.gt_instances]), "int32")

    views = []
    for vi, view in enumerate(bundle.views):
        K = view.intrinsics
        p = f"view{vi}_"
        ext = np.concatenate([view.extrinsics.R, view.extrinsics.t[:, None]], axis=1)
        layout[p + "intrinsics"] = (K.as_array(), "float32")
        layout[p + "extrinsics"] = (ext, "float32")
        layout[p + "depth"] = (view.depth_map, "float32")
        layout[p + "features"] = (view.feature_map, "float32")
        dets = view.detections
        layout[p + "det_masks"] = (
            np.stack([d.mask for d in dets]) if dets else np.zeros((0, K.height, K.width)),
            "uint8",
        )
        layout[p + "det_confidence"] = (np.array([d.confidence for d in dets]), "float32")
        layout[p + "det_features"] = (
            np.stack([d.query_feature for d in dets]) if dets else np.zeros((0, bundle.feature_dim)),
            "float32",
        )
        layout[p + "det_classes"] = (np.array([d.class_id for d in dets]), "int32")
        views.append(p)

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "feature_dim": int(bundle.feature_dim),
        "num_classes": int(bundle.num_classes),
        "num_views": len(bundle.views),
        "meta": bundle.meta,
    }
    write_manifest_dir(path, manifest, layout)


def load_bundle(path, validate=True) -> SceneBundle:
    manifest, load = read_manifest_dir(path, FORMAT_NAME)
    try:
        feature_dim = int(manifest["feature_dim"])
        num_classes = int(manifest["num_classes"])
        num_views = int(manifest["num_views"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"manifest: missing or malformed header field {exc}") from exc

    points = load("points")
    labels = load("superpoint_labels")
    colors = load("point_colors") if "point_colors" in manifest["arrays"] else None
    gt_masks = load("gt_masks")
    gt_classes = load("gt_classes")
    if gt_masks.ndim != 2 or gt_masks.shape[0] != gt_classes.shape[0]:
        raise BundleError(f"gt_masks: shape {gt_masks.shape} inconsistent with gt_classes {gt_classes.shape}")
    if gt_masks.shape[0] and gt_masks.shape[1] != points.shape[0]:
        raise BundleError(f"gt_masks: {gt_masks.shape[1]} columns, expected {points.shape[0]} points")
    gts = [GtInstance(m.astype(bool), int(c)) for m, c in zip(gt_masks, gt_classes)]

    views = []
    for vi in range(num_views):
        p = f"view{vi}_"
        intr = load(p + "intrinsics")
        ext = load(p + "extrinsics")
        if intr.shape != (6,) or ext.shape != (3, 4):
            raise BundleError(f"view {vi}: camera arrays have shapes {intr.shape}, {ext.shape}")
        try:
            K = CameraIntrinsics.from_array(intr)
            E = CameraExtrinsics(ext[:, :3].astype(np.float64), ext[:, 3].astype(np.float64))
        except ValueError as exc:
            raise BundleError(f"view {vi} camera: {exc}") from exc
        masks = load(p + "det_masks")
        conf = load(p + "det_confidence")
        feats = load(p + "det_features")
        classes = load(p + "det_classes")
        n = masks.shape[0]
        if not (conf.shape == (n,) and classes.shape == (n,) and feats.shape[0] == n):
            raise BundleError(f"view {vi} detections: inconsistent counts")
        dets = [
            Detection2D(float(conf[i]), masks[i].astype(bool), feats[i], int(classes[i])) for i in range(n)
        ]
        views.append(PosedView(K, E, load(p + "depth"), load(p + "features"), dets))

    bundle = SceneBundle(
        points=points,
        superpoint_labels=labels,
        views=views,
        gt_instances=gts,
        feature_dim=feature_dim,
        num_classes=num_classes,
        point_colors=colors,
        meta=manifest.get("meta", {}),
    )
    return bundle.validate() if validate else bundle
