"""Texture sharpness metric and a small z-buffer rasterizer for snapshots."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Union

import numpy as np

from .geometry import CameraIntrinsics, RigidTransform
from .meshing import TriangleMesh
from .texturing import TexturedMesh

NEAR_MM = 1.0
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class ImagePatch:
    pixels: np.ndarray
    model_id: str = ""
    rect: tuple = (0, 0, 0, 0)  # x, y, w, h in the source image

    def __post_init__(self):
        if self.pixels.size == 0:
            raise ValueError("empty patch")


def crop_patch(image: np.ndarray, rect, model_id: str = "") -> ImagePatch:
    x, y, w, h = (int(v) for v in rect)
    H, W = image.shape[:2]
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError(f"crop rectangle {rect} outside {W}x{H} image")
    return ImagePatch(image[y:y + h, x:x + w].copy(), model_id, (x, y, w, h))


def to_gray(pixels: np.ndarray) -> np.ndarray:
    p = np.asarray(pixels, dtype=np.float64)
    if p.ndim == 3:
        return p[..., :3] @ LUMA
    return p


def gradient_magnitude(patch: Union[ImagePatch, np.ndarray]) -> float:
    """Mean central-difference gradient norm over interior pixels of the luminance."""
    pix = patch.pixels if isinstance(patch, ImagePatch) else patch
    g = to_gray(pix)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise ValueError("patch must be at least 3x3")
    gx = 0.5 * (g[1:-1, 2:] - g[1:-1, :-2])
    gy = 0.5 * (g[2:, 1:-1] - g[:-2, 1:-1])
    return float(np.sqrt(gx * gx + gy * gy).mean())


# ----------------------------------------------------------------------------
# rasterization

def _bilinear_page(page: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    e = page.shape[0]
    x = np.clip(x, 0, e - 1)
    y = np.clip(y, 0, e - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), e - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), e - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    p = page.astype(np.float64)
    top = p[y0, x0] * (1 - fx) + p[y0, x0 + 1] * fx
    bot = p[y0 + 1, x0] * (1 - fx) + p[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def render_snapshot(model: Union[TexturedMesh, TriangleMesh], pose: RigidTransform,
                    intr: CameraIntrinsics, workers: int = 1) -> np.ndarray:
    """Rasterize a textured or coloured-vertex mesh from a fixed viewpoint.

    Nearest depth wins per pixel (ties go to the lower triangle index);
    attributes are interpolated perspective-correctly.  Background is black.
    """
    if isinstance(model, TexturedMesh):
        mesh, atlas = model.mesh, model.atlas
    else:
        mesh, atlas = model, None
        if mesh.colors is None:
            raise ValueError("mesh has neither an atlas nor vertex colours")
    if mesh.n_triangles == 0:
        raise ValueError("empty mesh")
    H, W = intr.height, intr.width
    pc = pose.apply(mesh.vertices)
    z = pc[:, 2]
    zs = np.where(z > 0, z, 1.0)
    sx = intr.fx * pc[:, 0] / zs + intr.cx
    sy = intr.fy * pc[:, 1] / zs + intr.cy

    def band(r0, r1):
        zbuf = np.full((r1 - r0, W), np.inf)
        img = np.zeros((r1 - r0, W, 3))
        for k, tri in enumerate(mesh.triangles):
            if np.any(z[tri] <= NEAR_MM):
                continue
            x, y = sx[tri], sy[tri]
            xmin, xmax = max(math.ceil(x.min()), 0), min(math.floor(x.max()), W - 1)
            ymin, ymax = max(math.ceil(y.min()), r0), min(math.floor(y.max()), r1 - 1)
            if xmin > xmax or ymin > ymax:
                continue
            area = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
            if area == 0:
                continue
            py, px = np.mgrid[ymin:ymax + 1, xmin:xmax + 1]
            l0 = ((x[1] - px) * (y[2] - py) - (x[2] - px) * (y[1] - py)) / area
            l1 = ((x[2] - px) * (y[0] - py) - (x[0] - px) * (y[2] - py)) / area
            l2 = 1.0 - l0 - l1
            inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
            if not inside.any():
                continue
            l0, l1, l2 = l0[inside], l1[inside], l2[inside]
            py, px = py[inside] - r0, px[inside]
            zt = z[tri]
            inv = l0 / zt[0] + l1 / zt[1] + l2 / zt[2]
            depth = 1.0 / inv
            nearer = depth < zbuf[py, px]
            if not nearer.any():
                continue
            b = np.stack([l0 / zt[0], l1 / zt[1], l2 / zt[2]], axis=1)[nearer] * depth[nearer, None]
            py, px = py[nearer], px[nearer]
            zbuf[py, px] = depth[nearer]
            if atlas is None:
                img[py, px] = b @ mesh.colors[tri].astype(np.float64)
            else:
                uv = b @ atlas.uv[k]
                page = atlas.pages[atlas.placements[k].page]
                e = atlas.page_edge
                img[py, px] = _bilinear_page(page, uv[:, 0] * e - 0.5, uv[:, 1] * e - 0.5)
        return img

    if workers <= 1:
        img = band(0, H)
    else:
        step = -(-H // workers)
        bands = [(r, min(r + step, H)) for r in range(0, H, step)]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            img = np.concatenate(list(ex.map(lambda b: band(*b), bands)))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
