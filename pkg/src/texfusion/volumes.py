"""Geometry (TSDF) and asymmetric colour volumes.

Both volumes are cubes of identical physical extent placed at
``config.origin``; voxel ``(i, j, k)`` has its centre at
``origin + (index + 0.5) * pitch``.  Volumes live in a fixed reference
frame (the first camera frame for captured data, world frame for the
synthetic scenes); each frame carries the reference-to-camera motion.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, NoNormalError, OutOfVolumeError
from .geometry import (
    CameraIntrinsics,
    RgbdCalibration,
    RigidTransform,
    bilinear_sample,
    depth_pixels_to_hd_pixels,
)

UNOBSERVED_COLOR = (255, 0, 255)
_CHUNK_VOXELS = 1 << 20


@dataclass(frozen=True)
class VolumeConfig:
    geo_dim: int = 384
    color_dim: int = 768
    size_mm: float = 1000.0
    origin: Optional[tuple] = None
    truncation_mm: Optional[float] = None
    sigma_mm: float = 20.0
    weight_gate: float = 0.8
    max_tsdf_weight: float = 128.0
    sample_radius: int = 2
    unobserved_color: tuple = UNOBSERVED_COLOR

    def __post_init__(self):
        if self.geo_dim < 2 or self.color_dim < self.geo_dim:
            raise ValueError("need geo_dim >= 2 and color_dim >= geo_dim")
        if not self.size_mm > 0:
            raise ValueError("size_mm must be positive")
        if self.origin is None:
            object.__setattr__(self, "origin", (-self.size_mm / 2,) * 3)
        else:
            object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        if self.truncation_mm is None:
            object.__setattr__(self, "truncation_mm", 4.0 * self.geo_pitch)
        if not self.truncation_mm > 0 or not self.sigma_mm > 0:
            raise ValueError("truncation and sigma must be positive")
        if not 0.0 <= self.weight_gate <= 1.0:
            raise ValueError("weight_gate must be within [0, 1]")

    @property
    def geo_pitch(self) -> float:
        return self.size_mm / self.geo_dim

    @property
    def color_pitch(self) -> float:
        return self.size_mm / self.color_dim

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.size_mm

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)


@dataclass
class Frame:
    """One synchronised observation.

    ``depth`` is a uint16 millimetre raster (0 = invalid), ``hd_rgb`` a
    uint8 colour raster and ``pose`` the reference-to-camera motion.
    """

    depth: np.ndarray
    hd_rgb: np.ndarray
    pose: RigidTransform = field(default_factory=RigidTransform)

    def check(self, depth_intr: CameraIntrinsics, hd_intr: Optional[CameraIntrinsics] = None):
        if self.depth.shape != depth_intr.shape:
            raise DimensionMismatchError(f"depth raster {self.depth.shape} != intrinsics {depth_intr.shape}")
        if hd_intr is not None and self.hd_rgb.shape[:2] != hd_intr.shape:
            raise DimensionMismatchError(f"colour raster {self.hd_rgb.shape[:2]} != intrinsics {hd_intr.shape}")
        if np.any(self.depth >= 100000):
            raise ValueError("depth values must be below 1e5 mm")


class _Grid:
    config: VolumeConfig
    dim: int
    pitch: float

    def voxel_centers(self, i0: int = 0, i1: Optional[int] = None) -> np.ndarray:
        """Centres of voxels in x-slabs ``[i0, i1)``, shape (n, dim, dim, 3)."""
        i1 = self.dim if i1 is None else i1
        o = self.config.lower
        ax = (np.arange(self.dim) + 0.5) * self.pitch
        xs = o[0] + (np.arange(i0, i1) + 0.5) * self.pitch
        x, y, z = np.meshgrid(xs, o[1] + ax, o[2] + ax, indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def _slabs(self):
        per = max(1, _CHUNK_VOXELS // (self.dim * self.dim))
        return [(a, min(a + per, self.dim)) for a in range(0, self.dim, per)]

    def _run(self, fn, workers: int):
        slabs = self._slabs()
        if workers <= 1:
            for s in slabs:
                fn(*s)
        else:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(lambda s: fn(*s), slabs))


class TsdfVolume(_Grid):
    def __init__(self, config: VolumeConfig):
        self.config = config
        self.dim = config.geo_dim
        self.pitch = config.geo_pitch
        self.tsdf = np.ones((self.dim,) * 3, dtype=np.float32)
        self.weight = np.zeros((self.dim,) * 3, dtype=np.float32)

    def sample(self, points) -> np.ndarray:
        """Trilinear TSDF; NaN where any of the 8 neighbours is unobserved."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = (p - self.config.lower) / self.pitch - 0.5
        i0 = np.floor(g).astype(np.int64)
        f = g - i0
        ok = np.all((i0 >= 0) & (i0 <= self.dim - 2), axis=1)
        i0 = np.clip(i0, 0, self.dim - 2)
        out = np.zeros(len(p))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                    c = ((f[:, 0] if dx else 1 - f[:, 0]) * (f[:, 1] if dy else 1 - f[:, 1])
                         * (f[:, 2] if dz else 1 - f[:, 2]))
                    ok &= self.weight[ix, iy, iz] > 0
                    out += c * self.tsdf[ix, iy, iz]
        out[~ok] = np.nan
        return out.reshape(np.shape(points)[:-1])


class ColorVolume(_Grid):
    """Per-voxel RGB in [0, 255] and confidence weight in [0, 1]."""

    def __init__(self, config: VolumeConfig):
        self.config = config
        self.dim = config.color_dim
        self.pitch = config.color_pitch
        self.color = np.zeros((self.dim,) * 3 + (3,), dtype=np.float32)
        self.weight = np.zeros((self.dim,) * 3, dtype=np.float32)


# ----------------------------------------------------------------------------
# per-voxel update rules

def update_tsdf(tsdf, weight, observed, max_weight: float = 128.0):
    """Running average with unit observation weight, capped at ``max_weight``."""
    tsdf = np.asarray(tsdf, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    new = (tsdf * weight + observed) / (weight + 1.0)
    return np.clip(new, -1.0, 1.0), np.minimum(weight + 1.0, max_weight)


def update_color(c_pre, w_pre, c_obs, w):
    """Blend an observed colour into a voxel.

    ``C_new = (C_pre W_pre + W C_obs) / (W_pre + W)`` and
    ``W_new = W_pre + W (1 - W_pre)``.  Callers must only pass ``w > 0``.
    """
    c_pre = np.asarray(c_pre, dtype=np.float64)
    c_obs = np.asarray(c_obs, dtype=np.float64)
    w_pre = np.asarray(w_pre, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c_new = (c_pre * w_pre[..., None] + w[..., None] * c_obs) / (w_pre + w)[..., None]
    w_new = w_pre + w * (1.0 - w_pre)
    return c_new, w_new


def passes_weight_gate(w, w_pre, gate: float = 0.8):
    """An observation counts only if ``W > 0`` and ``W > gate * W_pre``."""
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return (w > 0) & (w > gate * np.asarray(w_pre, dtype=np.float64))


# ----------------------------------------------------------------------------
# depth-map helpers

def vertex_map(depth: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Back-project every pixel; invalid pixels give NaN."""
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w]
    d = depth.astype(np.float64)
    pts = np.stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=-1)
    pts[d <= 0] = np.nan
    return pts


def weight_map(depth: np.ndarray, intr: CameraIntrinsics, vmap: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-pixel normal/view-direction weight; NaN where no normal exists."""
    if vmap is None:
        vmap = vertex_map(depth, intr)
    h, w = depth.shape
    out = np.full((h, w), np.nan)
    p0 = vmap[:-1, :-1]
    n = np.cross(vmap[:-1, 1:] - p0, vmap[1:, :-1] - p0)
    nl = np.linalg.norm(n, axis=-1)
    dl = np.linalg.norm(p0, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        wt = np.einsum("ijk,ijk->ij", n, p0) / (nl * dl)
    wt[~(nl > 0)] = np.nan
    out[:-1, :-1] = wt
    return out


def compute_point_weight(depth: np.ndarray, pixel, intr: CameraIntrinsics) -> float:
    """Cosine between the local surface normal and the viewing ray at ``pixel``.

    The normal is the cross product of the back-projected right and down
    neighbour offsets, which points away from the camera for a visible
    surface, so a head-on fronto-parallel plane scores +1.
    """
    u, v = int(pixel[0]), int(pixel[1])
    h, w = depth.shape
    if not (0 <= u < w - 1 and 0 <= v < h - 1):
        raise IndexError("pixel and its right/down neighbours must lie inside the raster")
    sub = depth[v:v + 2, u:u + 2]
    if sub[0, 0] <= 0 or sub[0, 1] <= 0 or sub[1, 0] <= 0:
        raise NoNormalError("missing depth in the normal neighbourhood")
    p0 = _backproject(intr, u, v, sub[0, 0])
    p1 = _backproject(intr, u + 1, v, sub[0, 1])
    p2 = _backproject(intr, u, v + 1, sub[1, 0])
    n = np.cross(p1 - p0, p2 - p0)
    nl = np.linalg.norm(n)
    if nl <= 1e-12:
        raise NoNormalError("degenerate neighbourhood")
    return float(np.dot(n / nl, p0 / np.linalg.norm(p0)))


def _backproject(intr, u, v, d):
    d = float(d)
    return np.array([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d])


def _pixel_index(intr: CameraIntrinsics, pc: np.ndarray):
    """Nearest pixel for camera-space points; returns (u, v, inside, x, y)."""
    z = pc[..., 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    x = intr.fx * pc[..., 0] / zs + intr.cx
    y = intr.fy * pc[..., 1] / zs + intr.cy
    u = np.floor(x + 0.5)
    v = np.floor(y + 0.5)
    inside = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u = np.where(inside, u, 0).astype(np.int64)
    v = np.where(inside, v, 0).astype(np.int64)
    return u, v, inside, x, y


def _apply(pose: RigidTransform, p: np.ndarray) -> np.ndarray:
    # elementwise so the result does not depend on chunk shape
    r, t = pose.rotation, pose.translation
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0],
        r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1],
        r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2],
    ], axis=-1)


# ----------------------------------------------------------------------------
# integration

def integrate_depth(vol: TsdfVolume, frame: Frame, depth_intr: CameraIntrinsics, workers: int = 1) -> TsdfVolume:
    """Fold one depth map into the TSDF (in place; returns ``vol``).

    Voxels more than one truncation distance behind the measured surface
    are occluded and left untouched.
    """
    frame.check(depth_intr)
    depth = frame.depth
    trunc = vol.config.truncation_mm
    max_w = vol.config.max_tsdf_weight

    def work(i0, i1):
        pc = _apply(frame.pose, vol.voxel_centers(i0, i1))
        u, v, inside, _, _ = _pixel_index(depth_intr, pc)
        d = np.where(inside, depth[v, u], 0).astype(np.float64)
        sdf = d - pc[..., 2]
        upd = (d > 0) & (sdf >= -trunc)
        if not upd.any():
            return
        obs = np.minimum(sdf[upd] / trunc, 1.0)
        ts, ws = vol.tsdf[i0:i1], vol.weight[i0:i1]
        new_t, new_w = update_tsdf(ts[upd], ws[upd], obs, max_w)
        ts[upd] = new_t
        ws[upd] = new_w

    vol._run(work, workers)
    return vol


def integrate_color(vol: ColorVolume, frame: Frame, calib: RgbdCalibration,
                    first_to_current: Optional[RigidTransform] = None, workers: int = 1) -> ColorVolume:
    """Fold one HD colour frame into the colour volume (in place; returns ``vol``).

    For every colour voxel: move it into the current depth camera, find the
    depth pixel it projects to, reject it if the back-projected depth sample
    is farther than ``sigma_mm`` from it, weight the observation by the
    normal/view cosine, gate against ``weight_gate * W_pre``, then read the
    HD image bilinearly at the voxel's mapped HD position and blend.
    """
    if first_to_current is None:
        first_to_current = frame.pose
    dintr = calib.depth_intrinsics
    frame.check(dintr, calib.hd_intrinsics)
    cfg = vol.config
    vmap = vertex_map(frame.depth, dintr)
    wmap = weight_map(frame.depth, dintr, vmap)
    hd = frame.hd_rgb
    n = vol.dim

    def update(ix, iy, iz):
        p = cfg.lower + (np.stack([ix, iy, iz], axis=-1) + 0.5) * vol.pitch
        pc = _apply(first_to_current, p)
        u, v, inside, x, y = _pixel_index(dintr, pc)
        sel = np.nonzero(inside & (frame.depth[v, u] > 0))[0]
        if not sel.size:
            return
        pcs, us, vs = pc[sel], u[sel], v[sel]
        dist = np.linalg.norm(pcs - vmap[vs, us], axis=-1)
        w = np.minimum(wmap[vs, us], 1.0)
        vox = (ix[sel], iy[sel], iz[sel])
        w_pre = vol.weight[vox].astype(np.float64)
        with np.errstate(invalid="ignore"):
            keep = (dist <= cfg.sigma_mm) & passes_weight_gate(w, w_pre, cfg.weight_gate)
        if not keep.any():
            return
        hdpx, ok = depth_pixels_to_hd_pixels(calib, x[sel][keep], y[sel][keep], pcs[keep, 2])
        vox = tuple(a[keep][ok] for a in vox)
        if not vox[0].size:
            return
        obs = bilinear_sample(hd, hdpx[ok, 0], hdpx[ok, 1])
        c_new, w_new = update_color(vol.color[vox], w_pre[keep][ok], obs, w[keep][ok])
        vol.color[vox] = np.clip(c_new, 0.0, 255.0)
        vol.weight[vox] = np.clip(w_new, 0.0, 1.0)

    # Only voxels within sigma of some back-projected depth sample can pass
    # the distance gate, so visit just the blocks near those samples.
    blocks = _candidate_blocks(vol, vmap, first_to_current)
    batches = _block_batches(blocks, n)
    if workers <= 1:
        for b in batches:
            update(*b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda b: update(*b), batches))
    return vol


_BLOCK = 8


def _candidate_blocks(vol: ColorVolume, vmap: np.ndarray, first_to_current: RigidTransform) -> np.ndarray:
    cfg = vol.config
    pts = vmap[np.isfinite(vmap[..., 2])]
    nb = -(-vol.dim // _BLOCK)
    if not len(pts):
        return np.zeros((0, 3), dtype=np.int64)
    ref = first_to_current.inverse().apply(pts)
    bsize = _BLOCK * vol.pitch
    b = np.floor((ref - cfg.lower) / bsize).astype(np.int64)
    occ = np.zeros((nb + 2,) * 3, dtype=bool)
    inr = np.all((b >= -1) & (b <= nb), axis=1)
    bi = b[inr] + 1
    occ[bi[:, 0], bi[:, 1], bi[:, 2]] = True
    r = int(math.ceil((cfg.sigma_mm + vol.pitch) / bsize))
    for ax in range(3):
        grown = occ.copy()
        for s in range(1, r + 1):
            grown[(slice(None),) * ax + (slice(s, None),)] |= occ[(slice(None),) * ax + (slice(None, -s),)]
            grown[(slice(None),) * ax + (slice(None, -s),)] |= occ[(slice(None),) * ax + (slice(s, None),)]
        occ = grown
    return np.argwhere(occ[1:nb + 1, 1:nb + 1, 1:nb + 1])


def _block_batches(blocks: np.ndarray, dim: int):
    off = np.stack(np.meshgrid(*(np.arange(_BLOCK),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    per = max(1, _CHUNK_VOXELS // len(off))
    out = []
    for a in range(0, len(blocks), per):
        idx = (blocks[a:a + per, None, :] * _BLOCK + off[None]).reshape(-1, 3)
        idx = idx[np.all(idx < dim, axis=1)]
        out.append((idx[:, 0], idx[:, 1], idx[:, 2]))
    return out


# ----------------------------------------------------------------------------
# colour lookup

def sample_colors(vol: ColorVolume, points):
    """Weight-aware trilinear colour lookup for an (N, 3) array.

    Returns ``(rgb (N, 3) float, observed (N,) bool)``.  Unweighted voxels
    are excluded and the remaining coefficients renormalised; points with
    no weighted neighbour fall back to the nearest weighted voxel within
    ``sample_radius`` voxels, else to the sentinel colour.
    """
    cfg = vol.config
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(cfg.contains(p)):
        raise OutOfVolumeError("point outside colour volume bounds")
    n = vol.dim
    g = (p - cfg.lower) / vol.pitch - 0.5
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    acc = np.zeros((len(p), 3))
    csum = np.zeros(len(p))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix, iy, iz = i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz
                inr = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n) & (iz >= 0) & (iz < n)
                ix, iy, iz = np.clip(ix, 0, n - 1), np.clip(iy, 0, n - 1), np.clip(iz, 0, n - 1)
                c = ((f[:, 0] if dx else 1 - f[:, 0]) * (f[:, 1] if dy else 1 - f[:, 1])
                     * (f[:, 2] if dz else 1 - f[:, 2]))
                c = np.where(inr & (vol.weight[ix, iy, iz] > 0), c, 0.0)
                acc += c[:, None] * vol.color[ix, iy, iz]
                csum += c
    observed = csum > 0
    rgb = np.empty((len(p), 3))
    rgb[observed] = acc[observed] / csum[observed, None]
    missing = np.nonzero(~observed)[0]
    if missing.size:
        rgb[missing], observed[missing] = _nearest_weighted(vol, p[missing])
    return rgb, observed


def _nearest_weighted(vol: ColorVolume, p: np.ndarray):
    r = vol.config.sample_radius
    n = vol.dim
    base = np.clip(np.floor((p - vol.config.lower) / vol.pitch).astype(np.int64), 0, n - 1)
    rng = np.arange(-r, r + 1)
    offs = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    best = np.full(len(p), np.inf)
    best_idx = np.full(len(p), -1, dtype=np.int64)
    for o in offs:
        q = base + o
        inr = np.all((q >= 0) & (q < n), axis=1)
        qc = np.clip(q, 0, n - 1)
        wt = vol.weight[qc[:, 0], qc[:, 1], qc[:, 2]]
        centers = vol.config.lower + (qc + 0.5) * vol.pitch
        d = np.linalg.norm(centers - p, axis=1)
        flat = (qc[:, 0] * n + qc[:, 1]) * n + qc[:, 2]
        better = inr & (wt > 0) & ((d < best) | ((d == best) & (flat < best_idx)))
        best = np.where(better, d, best)
        best_idx = np.where(better, flat, best_idx)
    found = best_idx >= 0
    rgb = np.tile(np.asarray(vol.config.unobserved_color, dtype=np.float64), (len(p), 1))
    if found.any():
        ijk = np.stack(np.unravel_index(best_idx[found], (n, n, n)), axis=1)
        rgb[found] = vol.color[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
    return rgb, found


def sample_color(vol: ColorVolume, point):
    """Single-point ``sample_colors``; returns ``(rgb, observed)``."""
    rgb, obs = sample_colors(vol, np.asarray(point, dtype=np.float64)[None])
    return rgb[0], bool(obs[0])


# ----------------------------------------------------------------------------
# raycasting

@dataclass
class RaycastResult:
    points: np.ndarray  # (H, W, 3) reference-frame surface points, NaN if invalid
    depth: np.ndarray   # (H, W) camera z in mm, 0 if invalid
    valid: np.ndarray   # (H, W) bool


def raycast_tsdf(vol: TsdfVolume, pose: RigidTransform, intr: CameraIntrinsics,
                 max_steps: Optional[int] = None) -> RaycastResult:
    """March every pixel ray through the TSDF and locate the first + to - crossing."""
    h, w = intr.height, intr.width
    v, u = np.mgrid[0:h, 0:w]
    dc = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u, dtype=np.float64)], -1).reshape(-1, 3)
    dlen = np.linalg.norm(dc, axis=1)
    inv = pose.inverse()
    origin = inv.translation
    dirs = (dc / dlen[:, None]) @ inv.rotation.T

    lo = vol.config.lower + 0.5 * vol.pitch
    hi = vol.config.upper - 0.5 * vol.pitch
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    tmin = np.nanmax(np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2)), axis=1)
    tmax = np.nanmin(np.where(np.isnan(t1), np.inf, np.maximum(t1, t2)), axis=1)
    tmin = np.maximum(tmin, 0.0)

    n = len(dirs)
    t_hit = np.full(n, np.nan)
    active = np.nonzero(tmin < tmax)[0]
    t = tmin[active].copy()
    t_prev = np.full(len(active), np.nan)
    f_prev = np.full(len(active), np.nan)
    pitch = vol.pitch
    trunc = vol.config.truncation_mm
    if max_steps is None:
        max_steps = int(4 * math.sqrt(3) * vol.dim) + 8
    for _ in range(max_steps):
        if not active.size:
            break
        f = vol.sample(origin + t[:, None] * dirs[active])
        crossing = (f_prev > 0) & (f <= 0)
        if crossing.any():
            fp, fc = f_prev[crossing], f[crossing]
            t_hit[active[crossing]] = t_prev[crossing] + (t[crossing] - t_prev[crossing]) * fp / (fp - fc)
        step = np.where(np.isfinite(f) & (f > 0), np.maximum(0.5 * f * trunc, 0.5 * pitch), 0.5 * pitch)
        t_prev, f_prev = t, f
        t = t + step
        keep = ~crossing & (t <= tmax[active])
        active, t, t_prev, f_prev = active[keep], t[keep], t_prev[keep], f_prev[keep]

    valid = np.isfinite(t_hit)
    pts = np.full((n, 3), np.nan)
    pts[valid] = origin + t_hit[valid, None] * dirs[valid]
    depth = np.zeros(n)
    depth[valid] = t_hit[valid] / dlen[valid]
    return RaycastResult(pts.reshape(h, w, 3), depth.reshape(h, w), valid.reshape(h, w))
