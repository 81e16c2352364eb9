"""Synthetic cuboid scenes with analytically rendered depth and feature maps.

Instances are axis-aligned boxes resting on the floor of an empty room.
Each view's depth map is the exact ray/box (or ray/floor) intersection depth
along the optical axis (0 where the ray hits nothing) and each feature map paints the
visible instance's unit code, which makes the correct segmentation
recoverable without any learned weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CameraExtrinsics, CameraIntrinsics, look_at, project_points, visible_mask
from .scene import Detection2D, GtInstance, PosedView, SceneBundle, grid_superpoints

CODE_ORTHOGONALITY = 0.1


class GenerationError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    room_size: tuple = (4.0, 4.0)
    instances_per_class: tuple = (2, 2, 1)
    size_range: tuple = (0.4, 1.0)
    height_range: tuple = (0.4, 1.2)
    min_gap: float = 0.3
    wall_margin: float = 0.2
    num_cameras: int = 12
    camera_height: float = 2.4
    camera_radius_scale: float = 1.2
    fov_deg: float = 70.0
    image_size: tuple = (96, 128)  # H, W
    feature_size: tuple = (48, 64)  # h, w
    feature_dim: int = 32
    feature_noise: float = 0.0
    depth_noise: float = 0.0
    point_density: float = 600.0  # points per square meter of surface
    superpoint_cell: float = 0.25
    depth_tolerance: float = 0.05
    with_colors: bool = True
    render_floor: bool = True
    max_retries: int = 200

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Cuboid:
    lo: np.ndarray
    hi: np.ndarray
    class_id: int

    @property
    def center(self):
        return (self.lo + self.hi) / 2

    @property
    def size(self):
        return self.hi - self.lo


def ray_box_depth(origin, dirs, lo, hi):
    """Slab test for rays ``origin + t * dirs`` against one box.

    Returns the entry parameter ``t`` (``inf`` where the ray misses). When
    ``dirs`` have unit camera-z component, ``t`` is the depth along the
    optical axis.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    parallel = dirs == 0
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def pixel_rays(K: CameraIntrinsics, ext: CameraExtrinsics, u, v):
    """World-frame ray directions through pixel coordinates, scaled to camera z = 1."""
    cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u, dtype=np.float64)], axis=-1)
    return cam @ ext.R_inv.T


def ray_floor_depth(origin, dirs, extent):
    """Ray parameter at the z = 0 plane inside the rectangle [0, ex] x [0, ey]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dirs[..., 2]
    x = origin[0] + t * dirs[..., 0]
    y = origin[1] + t * dirs[..., 1]
    hit = (t > 0) & (x >= 0) & (x <= extent[0]) & (y >= 0) & (y <= extent[1])
    return np.where(hit, t, np.inf)


def render(cuboids, K, ext, u, v, floor=None):
    """Depth (0 = no return) and hit instance index (-1 = none) at pixel coords.

    ``floor`` is an optional (x, y) room extent; the floor returns depth but
    owns no instance.
    """
    dirs = pixel_rays(K, ext, np.asarray(u, np.float64), np.asarray(v, np.float64))
    origin = ext.center
    depth = np.full(dirs.shape[:-1], np.inf)
    owner = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    if floor is not None:
        depth = ray_floor_depth(origin, dirs, floor)
    for k, box in enumerate(cuboids):
        t = ray_box_depth(origin, dirs, box.lo, box.hi)
        closer = t < depth
        depth[closer] = t[closer]
        owner[closer] = k
    depth[~np.isfinite(depth)] = 0.0
    return depth, owner


def render_depth(cuboids, K, ext, floor=None):
    vv, uu = np.mgrid[0 : K.height, 0 : K.width].astype(np.float64)
    return render(cuboids, K, ext, uu, vv, floor)


def instance_codes(n, dim, rng, target_dot=-0.09):
    """``n`` unit vectors in ``dim`` dimensions with pairwise |dot| < 0.1.

    When ``n <= dim`` the codes are an orthonormal set pulled slightly away
    from their common mean so every pairwise dot product equals
    ``target_dot`` (clipped to what a simplex allows). Slightly negative
    cross-code similarity keeps small bilinear bleed between neighbouring
    instances from turning into a positive match.
    """
    if n == 0:
        return np.zeros((0, dim))
    if n <= dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        codes = q[:, :n].T
        if n > 1 and target_dot < 0:
            c = min(-target_dot, 0.99 / (n - 1))
            beta = 1.0 - np.sqrt(1.0 - c * n / (1.0 + c))
            codes = codes - beta * codes.mean(axis=0)
            codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    else:
        codes = rng.normal(size=(n, dim))
        codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    codes = codes.astype(np.float32).astype(np.float64)
    gram = codes @ codes.T
    off = np.abs(gram - np.diag(np.diag(gram)))
    if off.max(initial=0.0) >= CODE_ORTHOGONALITY:
        raise GenerationError(f"cannot draw {n} near-orthogonal codes in {dim} dimensions")
    return codes


def _place_cuboids(cfg: GeneratorConfig, rng):
    classes = [c for c, count in enumerate(cfg.instances_per_class) for _ in range(count)]
    rx, ry = cfg.room_size
    boxes = []
    for class_id in classes:
        for _ in range(cfg.max_retries):
            sx, sy = rng.uniform(*cfg.size_range, size=2)
            sz = rng.uniform(*cfg.height_range)
            x_lo = cfg.wall_margin
            x_hi = rx - cfg.wall_margin - sx
            y_hi = ry - cfg.wall_margin - sy
            if x_hi <= x_lo or y_hi <= x_lo:
                continue
            lo = np.array([rng.uniform(x_lo, x_hi), rng.uniform(x_lo, y_hi), 0.0])
            hi = lo + np.array([sx, sy, sz])
            g = cfg.min_gap
            clash = any(
                np.all(lo[:2] - g < b.hi[:2]) and np.all(hi[:2] + g > b.lo[:2]) for b in boxes
            )
            if not clash:
                boxes.append(Cuboid(_f32(lo), _f32(hi), class_id))
                break
        else:
            raise GenerationError(
                f"could not place instance {len(boxes)} without overlap after {cfg.max_retries} retries"
            )
    return boxes


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _make_cameras(cfg: GeneratorConfig):
    H, W = cfg.image_size
    f = 0.5 * W / np.tan(np.radians(cfg.fov_deg) / 2)
    K = CameraIntrinsics(*(float(np.float32(x)) for x in (f, f, (W - 1) / 2, (H - 1) / 2)), W, H)
    rx, ry = cfg.room_size
    center = np.array([rx / 2, ry / 2, 0.0])
    radius = cfg.camera_radius_scale * np.hypot(rx, ry) / 2
    cams = []
    for i in range(cfg.num_cameras):
        a = 2 * np.pi * (i + 0.5) / cfg.num_cameras
        height = cfg.camera_height if i % 2 == 0 else 0.6 * cfg.camera_height
        eye = center + np.array([radius * np.cos(a), radius * np.sin(a), height])
        e = look_at(eye, center + np.array([0.0, 0.0, 0.3]))
        cams.append((K, CameraExtrinsics(_f32(e.R), _f32(e.t))))
    return cams


def _sample_surface(box: Cuboid, density, rng):
    """Uniform samples on the five faces that are not resting on the floor."""
    sx, sy, sz = box.size
    faces = [  # (fixed axis, fixed value, area)
        (2, box.hi[2], sx * sy),
        (0, box.lo[0], sy * sz),
        (0, box.hi[0], sy * sz),
        (1, box.lo[1], sx * sz),
        (1, box.hi[1], sx * sz),
    ]
    chunks = []
    for axis, value, area in faces:
        n = max(1, int(round(area * density)))
        p = box.lo + rng.uniform(size=(n, 3)) * box.size
        p[:, axis] = value
        chunks.append(p)
    return np.concatenate(chunks)


def generate_synthetic(cfg: GeneratorConfig = GeneratorConfig(), seed=0) -> SceneBundle:
    rng = np.random.default_rng(seed)
    C = cfg.feature_dim
    boxes = _place_cuboids(cfg, rng)
    codes = instance_codes(len(boxes), C, rng)
    cameras = _make_cameras(cfg)

    pts, inst, labels = [], [], []
    next_label = 0
    for k, box in enumerate(boxes):
        p = _f32(_sample_surface(box, cfg.point_density, rng))
        offset = rng.uniform(0, cfg.superpoint_cell, size=3)
        lab = grid_superpoints(p, cfg.superpoint_cell, origin=box.lo - offset)
        pts.append(p)
        inst.append(np.full(len(p), k))
        labels.append(lab + next_label)
        next_label += int(lab.max()) + 1
    if pts:
        points = np.concatenate(pts)
        owner = np.concatenate(inst)
        sp_labels = np.concatenate(labels).astype(np.int32)
    else:
        # an empty room still needs a non-empty cloud: scatter floor samples
        rx, ry = cfg.room_size
        n = 64
        points = _f32(np.column_stack([rng.uniform(0, rx, n), rng.uniform(0, ry, n), np.zeros(n)]))
        owner = np.full(n, -1)
        sp_labels = grid_superpoints(points, cfg.superpoint_cell)

    colors = None
    if cfg.with_colors:
        palette = rng.uniform(0.2, 0.9, size=(max(len(boxes), 1), 3))
        colors = np.where(owner[:, None] >= 0, palette[np.maximum(owner, 0)], 0.5)
        colors = np.clip(colors + rng.normal(0, 0.02, colors.shape), 0, 1).astype(np.float32)

    views = []
    h, w = cfg.feature_size
    floor = tuple(cfg.room_size) if cfg.render_floor else None
    for K, ext in cameras:
        depth, hit = render_depth(boxes, K, ext, floor)
        if cfg.depth_noise > 0:
            depth = np.where(depth > 0, depth + rng.normal(0, cfg.depth_noise, depth.shape), 0.0)
            depth = np.maximum(depth, 0.0)
        depth = depth.astype(np.float32)

        fy, fx = np.mgrid[0:h, 0:w].astype(np.float64)
        _, fhit = render(boxes, K, ext, fx * K.width / w, fy * K.height / h)
        feats = np.zeros((h, w, C))
        if len(boxes):
            painted = fhit >= 0
            feats[painted] = codes[fhit[painted]]
            if cfg.feature_noise > 0:
                feats[painted] += rng.normal(0, cfg.feature_noise, (int(painted.sum()), C))

        u, v, d, _ = project_points(points, K, ext)
        seen = visible_mask(u, v, d, depth, cfg.depth_tolerance)
        dets = []
        for k, box in enumerate(boxes):
            mask = hit == k
            if not mask.any():
                continue
            members = owner == k
            conf = float(np.float32(seen[members].mean()))
            dets.append(Detection2D(conf, mask, codes[k].astype(np.float32), box.class_id))
        views.append(PosedView(K, ext, depth, feats.astype(np.float32), dets))

    gts = [GtInstance(owner == k, box.class_id) for k, box in enumerate(boxes)]
    meta = {
        "generator": cfg.to_dict(),
        "seed": int(seed),
        "boxes": [[*map(float, b.lo), *map(float, b.hi)] for b in boxes],
    }
    bundle = SceneBundle(
        points=points.astype(np.float32),
        superpoint_labels=sp_labels,
        views=views,
        gt_instances=gts,
        feature_dim=C,
        num_classes=len(cfg.instances_per_class),
        point_colors=colors,
        meta=meta,
    )
    return bundle.validate()
