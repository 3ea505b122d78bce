"""Pinhole cameras, rigid motions and the depth-to-HD pixel mapping.

Conventions: lengths are millimetres, integer pixel coordinates refer to
pixel centres, camera space is x right / y down / z forward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidDepthError

ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape as (rows, cols)."""
        return (self.height, self.width)

    def scaled(self, factor: int) -> "CameraIntrinsics":
        """Same field of view sampled ``factor`` times more densely per axis."""
        # pixel-centre convention: x' = factor * (x + 0.5) - 0.5
        off = 0.5 * (factor - 1)
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor,
            self.cx * factor + off, self.cy * factor + off,
            self.width * factor, self.height * factor,
        )

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height)


def _check_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> None:
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(r @ r.T - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation is not orthonormal with determinant +1")


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest in Frobenius norm)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


class RigidTransform:
    """Rotation followed by translation: ``p -> R p + t``."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=None, translation=None):
        r = np.eye(3) if rotation is None else np.array(rotation, dtype=np.float64).reshape(3, 3)
        t = np.zeros(3) if translation is None else np.array(translation, dtype=np.float64).reshape(3)
        _check_rotation(r)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=None) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        r = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        return cls(r, translation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"

    def to_list(self) -> list[float]:
        """Twelve numbers: row-major rotation then translation."""
        return [float(x) for x in self.rotation.ravel()] + [float(x) for x in self.translation]

    @classmethod
    def from_list(cls, values) -> "RigidTransform":
        values = [float(v) for v in values]
        if len(values) != 12:
            raise ValueError(f"expected 12 numbers, got {len(values)}")
        return cls(np.reshape(values[:9], (3, 3)), values[9:])


@dataclass(frozen=True)
class RgbdCalibration:
    depth_intrinsics: CameraIntrinsics
    hd_intrinsics: CameraIntrinsics
    depth_to_hd: RigidTransform


def project(intr: CameraIntrinsics, point) -> np.ndarray:
    """Camera-space point to continuous pixel coordinates."""
    p = np.asarray(point, dtype=np.float64)
    if not p[2] > 0:
        raise BehindCameraError(f"point has non-positive depth z={p[2]}")
    return np.array([intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy])


def unproject(intr: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, float(depth)])


def project_points(intr: CameraIntrinsics, points: np.ndarray):
    """Vectorised ``project``; returns (pixels, in_front mask) without raising."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    px = np.stack([intr.fx * p[..., 0] / safe + intr.cx, intr.fy * p[..., 1] / safe + intr.cy], axis=-1)
    return px, front


def unproject_pixels(intr: CameraIntrinsics, u, v, depth) -> np.ndarray:
    """Vectorised ``unproject`` for arrays of pixel coordinates and depths."""
    d = np.asarray(depth, dtype=np.float64)
    return np.stack([(np.asarray(u) - intr.cx) * d / intr.fx, (np.asarray(v) - intr.cy) * d / intr.fy, d], axis=-1)


def transform_point(t: RigidTransform, point) -> np.ndarray:
    return t.rotation @ np.asarray(point, dtype=np.float64) + t.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
        r = nearest_rotation(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def depth_pixel_to_hd_pixel(calib: RgbdCalibration, pixel, depth: float):
    """Map a depth-image pixel with known depth into the HD colour image.

    Returns ``(hd_pixel, in_bounds)``; ``hd_pixel`` is continuous and may
    fall outside the HD raster, in which case ``in_bounds`` is False.
    """
    p_depth = unproject(calib.depth_intrinsics, pixel, depth)
    p_hd = transform_point(calib.depth_to_hd, p_depth)
    if not p_hd[2] > 0:
        raise BehindCameraError("point lies behind the HD camera")
    hd = project(calib.hd_intrinsics, p_hd)
    return hd, _in_bounds(calib.hd_intrinsics, hd[0], hd[1])


def depth_pixels_to_hd_pixels(calib: RgbdCalibration, u, v, depth):
    """Vectorised mapping; returns (hd_pixels (N, 2), ok mask).

    ``ok`` is False where the point lands behind the HD camera or outside
    the range usable for bilinear sampling.
    """
    pts = unproject_pixels(calib.depth_intrinsics, u, v, depth)
    pts = calib.depth_to_hd.apply(pts)
    hd, front = project_points(calib.hd_intrinsics, pts)
    intr = calib.hd_intrinsics
    ok = front & (hd[..., 0] >= 0) & (hd[..., 0] <= intr.width - 1) & (hd[..., 1] >= 0) & (hd[..., 1] <= intr.height - 1)
    return hd, ok


def _in_bounds(intr: CameraIntrinsics, x: float, y: float) -> bool:
    return bool(-0.5 <= x < intr.width - 0.5 and -0.5 <= y < intr.height - 0.5)


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    ``down`` is the world direction that should appear downward in the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise ValueError("viewing direction is parallel to the down vector")
    x /= n
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return RigidTransform(r, -r @ eye)


def bilinear_sample(image: np.ndarray, x, y) -> np.ndarray:
    """Sample an (H, W, C) raster at continuous pixel coordinates.

    Coordinates are clamped to the pixel-centre range [0, W-1] x [0, H-1].
    """
    h, w = image.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    img = image.astype(np.float64, copy=False)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy
