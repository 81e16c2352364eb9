"""Pinhole camera model: world/camera transforms, projection, depth tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import bilinear_sample

MIN_DEPTH = 1e-9
DEFAULT_DEPTH_TOLERANCE = 0.05


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy, self.width, self.height], dtype=np.float64)

    @classmethod
    def from_array(cls, a):
        fx, fy, cx, cy, w, h = (float(x) for x in a)
        return cls(fx, fy, cx, cy, int(w), int(h))


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rigid transform ``x_cam = R @ x_world + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation is not orthonormal with det +1")

    @property
    def R(self):
        return np.asarray(self.rotation, dtype=np.float64)

    @property
    def t(self):
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def R_inv(self):
        # stored rotations may be float32-rounded, so R.T is only ~1e-7 from the inverse
        return np.linalg.inv(self.R)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R_inv @ self.t

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def to_world(self, points_cam):
        return (np.asarray(points_cam, dtype=np.float64) - self.t) @ self.R_inv.T


@dataclass(frozen=True)
class Projection:
    u: float
    v: float
    d: float


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Extrinsics of a camera at ``eye`` looking at ``target``.

    Camera axes follow the usual vision convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return CameraExtrinsics(R, -R @ eye)


def camera_distance(point_world, ext: CameraExtrinsics):
    """Distance from a point (or N x 3 points) to the camera center."""
    return np.linalg.norm(ext.to_camera(point_world), axis=-1)


def project_points(points, K: CameraIntrinsics, ext: CameraExtrinsics):
    """Vectorised projection.

    Returns ``(u, v, d, in_front)``; ``u`` and ``v`` are NaN where the point
    is not in front of the camera.
    """
    cam = np.atleast_2d(ext.to_camera(points))
    d = cam[:, 2]
    in_front = d > MIN_DEPTH
    safe = np.where(in_front, d, 1.0)
    u = np.where(in_front, K.fx * cam[:, 0] / safe + K.cx, np.nan)
    v = np.where(in_front, K.fy * cam[:, 1] / safe + K.cy, np.nan)
    return u, v, d, in_front


def project(point_world, K: CameraIntrinsics, ext: CameraExtrinsics):
    """Project one world point; returns ``None`` when it lies behind the camera."""
    u, v, d, ok = project_points(np.asarray(point_world, dtype=np.float64)[None], K, ext)
    if not ok[0]:
        return None
    return Projection(float(u[0]), float(v[0]), float(d[0]))


def visible_mask(u, v, d, depth_map, tolerance=DEFAULT_DEPTH_TOLERANCE):
    """Depth-tested visibility for arrays of projections (NaN u/v -> False)."""
    depth_map = np.asarray(depth_map)
    H, W = depth_map.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    inside = (u > 0) & (u < W) & (v > 0) & (v < H)
    out = np.zeros(u.shape, dtype=bool)
    if inside.any():
        sampled = bilinear_sample(depth_map, u[inside], v[inside])
        out[inside] = d[inside] <= sampled + tolerance
    return out


def visible(proj, depth_map, tolerance=DEFAULT_DEPTH_TOLERANCE):
    if proj is None:
        return False
    return bool(visible_mask([proj.u], [proj.v], [proj.d], depth_map, tolerance)[0])


def backproject_pixels(u, v, depth, K: CameraIntrinsics, ext: CameraExtrinsics):
    """Lift pixels with known depth back to world coordinates (N x 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("back-projection needs strictly positive depth")
    cam = np.stack([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth], axis=-1)
    return ext.to_world(cam)


def backproject(u, v, depth, K: CameraIntrinsics, ext: CameraExtrinsics):
    return backproject_pixels(np.float64(u), np.float64(v), np.float64(depth), K, ext)
