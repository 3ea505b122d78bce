"""Analytic scenes and sphere-traced RGB-D frames with exact poses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import CameraIntrinsics, RgbdCalibration, RigidTransform, compose, look_at
from .volumes import Frame

TRACE_EPS = 1e-3
TRACE_STEPS = 256
TRACE_FAR = 1e5


# ----------------------------------------------------------------------------
# signed distance primitives (vectorised over (N, 3) arrays)

@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def sdf(self, p):
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box:
    center: tuple
    half_size: tuple

    def sdf(self, p):
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half_size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def bounds(self):
        c, h = np.asarray(self.center, dtype=np.float64), np.asarray(self.half_size, dtype=np.float64)
        return c - h, c + h


@dataclass(frozen=True)
class Plane:
    """Half-space ``normal . p <= offset`` (normal points out of the solid)."""

    normal: tuple
    offset: float

    def sdf(self, p):
        n = np.asarray(self.normal, dtype=np.float64)
        return p @ (n / np.linalg.norm(n)) - self.offset

    def bounds(self):
        return None


# ----------------------------------------------------------------------------
# albedo patterns (vectorised, return float RGB in [0, 255])

@dataclass(frozen=True)
class Solid:
    color: tuple = (200, 200, 200)

    def __call__(self, p):
        return np.broadcast_to(np.asarray(self.color, dtype=np.float64), p.shape).copy()


@dataclass(frozen=True)
class Checker:
    cell_mm: float
    color_a: tuple = (240, 240, 240)
    color_b: tuple = (20, 20, 20)

    def __call__(self, p):
        k = np.floor(p / self.cell_mm).astype(np.int64).sum(axis=-1) & 1
        return np.where(k[..., None] == 0, np.asarray(self.color_a, float), np.asarray(self.color_b, float))


DEFAULT_LOGO = (
    "#####.#####.#...#",
    "..#...#......#.#.",
    "..#...####....#..",
    "..#...#......#.#.",
    "..#...#####.#...#",
)


@dataclass(frozen=True)
class Decal:
    """Flat pattern printed on the axis-aligned face ``axis``/``sign`` of a box.

    ``center``/``size`` are given in the face's two remaining axes (in
    increasing axis order).  ``pattern`` is ``"checker"`` or ``"bitmap"``.
    """

    face_axis: int
    face_sign: int
    face_offset: float
    center: tuple
    size: tuple
    pattern: str = "checker"
    cell_mm: float = 5.0
    bitmap: Sequence[str] = DEFAULT_LOGO
    fg: tuple = (20, 20, 20)
    bg: tuple = (240, 240, 240)
    depth_tol: float = 2.0

    def mask_and_color(self, p):
        a = self.face_axis
        b, c = [k for k in range(3) if k != a]
        on_face = np.abs(p[..., a] - self.face_offset) <= self.depth_tol
        s = p[..., b] - (self.center[0] - self.size[0] / 2)
        t = p[..., c] - (self.center[1] - self.size[1] / 2)
        inside = on_face & (s >= 0) & (s < self.size[0]) & (t >= 0) & (t < self.size[1])
        si = np.floor(s / self.cell_mm).astype(np.int64)
        ti = np.floor(t / self.cell_mm).astype(np.int64)
        if self.pattern == "checker":
            fg = ((si + ti) & 1) == 1
        elif self.pattern == "bitmap":
            bm = np.array([[ch == "#" for ch in row] for row in self.bitmap], dtype=bool)
            rows, cols = bm.shape
            # bitmap spans the full decal; image rows run against +t
            r = np.clip((rows - 1) - np.floor(t / self.size[1] * rows).astype(np.int64), 0, rows - 1)
            q = np.clip(np.floor(s / self.size[0] * cols).astype(np.int64), 0, cols - 1)
            fg = bm[r, q]
        else:
            raise ValueError(f"unknown decal pattern {self.pattern!r}")
        col = np.where(fg[..., None], np.asarray(self.fg, float), np.asarray(self.bg, float))
        return inside, col


@dataclass
class AnalyticScene:
    sdf: Callable[[np.ndarray], np.ndarray]
    albedo: Callable[[np.ndarray], np.ndarray]
    bounds: Optional[tuple] = None  # (lo, hi) box enclosing every surface, if finite

    @classmethod
    def from_parts(cls, primitives: Sequence, base=None, decals: Sequence[Decal] = ()) -> "AnalyticScene":
        prims = list(primitives)
        base = base or Solid()

        def sdf(p):
            p = np.asarray(p, dtype=np.float64)
            out = prims[0].sdf(p)
            for pr in prims[1:]:
                out = np.minimum(out, pr.sdf(p))
            return out

        def albedo(p):
            p = np.asarray(p, dtype=np.float64)
            col = base(p)
            for d in decals:
                m, c = d.mask_and_color(p)
                col = np.where(m[..., None], c, col)
            return col

        boxes = [pr.bounds() for pr in prims]
        bounds = None
        if all(b is not None for b in boxes):
            bounds = (np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0))
        return cls(sdf, albedo, bounds)


# ----------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """World-to-camera poses plus optional noise settings."""

    poses: list
    depth_noise_mm: float = 0.0
    jitter_deg: float = 0.0
    jitter_mm: float = 0.0

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("trajectory needs at least one pose")

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def jittered(self, rng: np.random.Generator) -> list:
        """Poses perturbed by small random motions (stand-in for tracking error)."""
        if self.jitter_deg <= 0 and self.jitter_mm <= 0:
            return list(self.poses)
        out = []
        for p in self.poses:
            axis = rng.normal(size=3)
            ang = math.radians(rng.normal(scale=self.jitter_deg)) if self.jitter_deg > 0 else 0.0
            d = RigidTransform.from_axis_angle(axis, ang, rng.normal(scale=self.jitter_mm, size=3) if self.jitter_mm > 0 else None)
            out.append(compose(d, p))
        return out


def orbit_trajectory(center, radius: float, n_frames: int, elevation_deg: float = 0.0,
                     start_deg: float = 0.0, sweep_deg: float = 360.0) -> Trajectory:
    """Cameras on a horizontal circle around ``center``, all looking at it.

    World +y is image-down; azimuth 0 sits at ``-z`` of the centre so the
    first camera of a level orbit has identity rotation.
    """
    if not radius > 0 or n_frames < 1:
        raise ValueError("radius must be positive and n_frames >= 1")
    if abs(elevation_deg) >= 89.9:
        raise ValueError("elevation must stay below 90 degrees")
    c = np.asarray(center, dtype=np.float64)
    el = math.radians(elevation_deg)
    step = math.radians(sweep_deg) / n_frames if sweep_deg >= 360.0 else (
        math.radians(sweep_deg) / max(n_frames - 1, 1))
    poses = []
    for k in range(n_frames):
        az = math.radians(start_deg) + k * step
        eye = c + radius * np.array([math.sin(az) * math.cos(el), -math.sin(el), -math.cos(az) * math.cos(el)])
        poses.append(look_at(eye, c))
    return Trajectory(poses)


# ----------------------------------------------------------------------------
# rendering

def camera_rays(intr: CameraIntrinsics, pose: RigidTransform):
    """Unit world-space ray directions for every pixel, plus per-ray z scale."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    dc = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1).reshape(-1, 3)
    n = np.linalg.norm(dc, axis=1)
    inv = pose.inverse()
    return inv.translation, (dc / n[:, None]) @ inv.rotation.T, 1.0 / n


def _clip_to_box(origin, dirs, bounds, pad: float = 1.0):
    lo, hi = bounds[0] - pad, bounds[1] + pad
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    near = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2)).max(axis=1)
    far = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2)).min(axis=1)
    return np.maximum(near, 0.0), far


def sphere_trace(sdf, origin, dirs, eps: float = TRACE_EPS, max_steps: int = TRACE_STEPS,
                 far: float = TRACE_FAR, bounds=None) -> np.ndarray:
    """Ray distances to the first surface; NaN for misses or non-convergence."""
    n = len(dirs)
    t = np.zeros(n)
    t_far = np.full(n, float(far))
    if bounds is not None:
        t, t_far = _clip_to_box(origin, dirs, bounds)
        t_far = np.minimum(t_far, far)
    out = np.full(n, np.nan)
    active = np.nonzero(t <= t_far)[0]
    for _ in range(max_steps):
        if not active.size:
            break
        d = sdf(origin + t[active, None] * dirs[active])
        hit = np.abs(d) < eps
        out[active[hit]] = t[active[hit]]
        t[active] += d
        keep = ~hit & (t[active] <= t_far[active])
        active = active[keep]
    return out


def render_frame(scene: AnalyticScene, pose: RigidTransform, calib: RgbdCalibration,
                 depth_noise_mm: float = 0.0, rng: Optional[np.random.Generator] = None,
                 frame_pose: Optional[RigidTransform] = None) -> Frame:
    """Render depth (uint16 mm) from the depth camera and albedo from the HD camera."""
    dintr = calib.depth_intrinsics
    origin, dirs, zscale = camera_rays(dintr, pose)
    t = sphere_trace(scene.sdf, origin, dirs, bounds=scene.bounds)
    z = t * zscale
    if depth_noise_mm > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        z = z + rng.normal(scale=depth_noise_mm, size=z.shape)
    hitd = np.isfinite(z) & (z > 0)
    depth = np.zeros(len(z), dtype=np.uint16)
    depth[hitd] = np.clip(np.rint(z[hitd]), 0, 65535).astype(np.uint16)
    depth = depth.reshape(dintr.shape)

    hintr = calib.hd_intrinsics
    hd_pose = compose(calib.depth_to_hd, pose)
    origin, dirs, _ = camera_rays(hintr, hd_pose)
    t = sphere_trace(scene.sdf, origin, dirs, bounds=scene.bounds)
    hit = np.isfinite(t)
    rgb = np.zeros((len(t), 3), dtype=np.uint8)
    if hit.any():
        col = scene.albedo(origin + t[hit, None] * dirs[hit])
        rgb[hit] = np.clip(np.rint(col), 0, 255).astype(np.uint8)
    return Frame(depth, rgb.reshape(hintr.height, hintr.width, 3), frame_pose or pose)


def render_sequence(scene: AnalyticScene, traj: Trajectory, calib: RgbdCalibration, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    supplied = traj.jittered(rng)
    return [render_frame(scene, p, calib, traj.depth_noise_mm, rng, frame_pose=s)
            for p, s in zip(traj.poses, supplied)]


def default_calibration(hd_factor: int = 4, baseline_mm: float = 25.0,
                        hd_size: Optional[tuple] = (2048, 1536)) -> RgbdCalibration:
    """Kinect-like VGA depth camera plus a rigidly attached 4:3 HD camera.

    With ``hd_size`` the HD intrinsics keep the depth camera's field of view
    at that resolution; otherwise the depth intrinsics are scaled by ``hd_factor``.
    """
    d = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
    if hd_size is None:
        hd = d.scaled(hd_factor)
    else:
        s = hd_size[0] / d.width
        hd = CameraIntrinsics(d.fx * s, d.fy * s, (d.cx + 0.5) * s - 0.5, (d.cy + 0.5) * s - 0.5, hd_size[0], hd_size[1])
    return RgbdCalibration(d, hd, RigidTransform(np.eye(3), (-baseline_mm, 0.0, 0.0)))
