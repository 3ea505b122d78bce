"""Per-triangle texture baking, atlas packing and the coloured-vertex baseline.

Every triangle (V1, V2, V3) gets its own w x h texture map.  Texel (i, j)
(column i, row j) sits at ``V1 + i * step_green + j * step_blue`` in world
space, so texels (0, 0), (w-1, 0) and (0, h-1) coincide with V1, V2 and V3
and only the upper-left half of the map lands on the triangle.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .meshing import TriangleMesh
from .volumes import ColorVolume, sample_colors

GUARD_TEXELS = 1.0
GUTTER = 1
_BAKE_CHUNK = 1 << 20


@dataclass(frozen=True)
class TriangleFrame:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    w: int
    h: int
    step_green: np.ndarray
    step_blue: np.ndarray
    pixel_size_mm: float
    degenerate: bool = False


@dataclass
class TextureMap:
    pixels: np.ndarray      # (h, w, 3) uint8
    owner: int
    valid_mask: np.ndarray  # (h, w) bool

    @property
    def w(self) -> int:
        return self.pixels.shape[1]

    @property
    def h(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Placement:
    page: int
    x: int
    y: int
    w: int
    h: int


@dataclass
class TextureAtlas:
    page_edge: int
    pages: list = field(default_factory=list)       # (E, E, 3) uint8 rasters
    placements: list = field(default_factory=list)  # Placement per triangle
    uv: np.ndarray = None                           # (N, 3, 2), image convention (v down)


@dataclass
class TexturedMesh:
    mesh: TriangleMesh
    atlas: TextureAtlas


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def triangle_frame(v1, v2, v3, pixel_size_mm: float) -> TriangleFrame:
    if not pixel_size_mm > 0:
        raise ValueError("pixel size must be positive")
    v1, v2, v3 = (np.asarray(v, dtype=np.float64) for v in (v1, v2, v3))
    w = max(2, _round_half_up(np.linalg.norm(v2 - v1) / pixel_size_mm))
    h = max(2, _round_half_up(np.linalg.norm(v3 - v1) / pixel_size_mm))
    area = 0.5 * np.linalg.norm(np.cross(v2 - v1, v3 - v1))
    return TriangleFrame(v1, v2, v3, w, h, (v2 - v1) / (w - 1), (v3 - v1) / (h - 1),
                         float(pixel_size_mm), degenerate=bool(area <= 1e-9))


def texel_world_position(frame: TriangleFrame, i: int, j: int) -> np.ndarray:
    if not (0 <= i < frame.w and 0 <= j < frame.h):
        raise IndexError(f"texel ({i}, {j}) outside {frame.w}x{frame.h} map")
    return frame.v1 + i * frame.step_green + j * frame.step_blue


def _band_mask(w: int, h: int) -> np.ndarray:
    """Texels on the triangle plus a guard band past the V_b-V_c diagonal."""
    j, i = np.mgrid[0:h, 0:w]
    return i / (w - 1) + j / (h - 1) <= 1.0 + GUARD_TEXELS * (1.0 / (w - 1) + 1.0 / (h - 1)) + 1e-12


def _replicate_rows(pixels: np.ndarray, band: np.ndarray) -> None:
    """Fill texels right of the band in each row with that row's last band texel."""
    last = band.shape[1] - 1 - np.argmax(band[:, ::-1], axis=1)
    cols = np.arange(band.shape[1])
    src = np.minimum(cols[None, :], last[:, None])
    rows = np.arange(band.shape[0])[:, None]
    pixels[...] = pixels[rows, src]


def _texel_positions(frame: TriangleFrame, band: np.ndarray) -> np.ndarray:
    j, i = np.nonzero(band)
    return frame.v1 + i[:, None] * frame.step_green + j[:, None] * frame.step_blue


def _finish_map(frame, band, rgb, observed, owner) -> TextureMap:
    pix = np.zeros((frame.h, frame.w, 3), dtype=np.uint8)
    mask = np.zeros((frame.h, frame.w), dtype=bool)
    pix[band] = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    mask[band] = observed
    _replicate_rows(pix, band)
    _replicate_rows(mask[..., None], band)
    return TextureMap(pix, owner, mask)


def bake_polygon_texture(frame: TriangleFrame, vol: ColorVolume, owner: int = 0) -> TextureMap:
    """Fill one triangle's texture map by sampling the colour volume."""
    band = _band_mask(frame.w, frame.h)
    pts = np.clip(_texel_positions(frame, band), vol.config.lower, vol.config.upper)
    rgb, observed = sample_colors(vol, pts)
    return _finish_map(frame, band, rgb, observed, owner)


def bake_all(mesh: TriangleMesh, vol: ColorVolume, pixel_size_mm: float, workers: int = 1) -> list:
    """Bake every triangle; sampling is batched across triangles."""
    verts = mesh.vertices
    frames = [triangle_frame(*verts[t], pixel_size_mm) for t in mesh.triangles]
    bands = [_band_mask(f.w, f.h) for f in frames]
    counts = np.array([b.sum() for b in bands], dtype=np.int64)

    batches, start, acc = [], 0, 0
    for k, c in enumerate(counts):
        acc += c
        if acc >= _BAKE_CHUNK:
            batches.append((start, k + 1))
            start, acc = k + 1, 0
    if start < len(frames):
        batches.append((start, len(frames)))

    def work(rng):
        a, b = rng
        if a == b:
            return []
        pts = np.concatenate([_texel_positions(frames[k], bands[k]) for k in range(a, b)])
        pts = np.clip(pts, vol.config.lower, vol.config.upper)
        rgb, obs = sample_colors(vol, pts)
        out, off = [], 0
        for k in range(a, b):
            n = counts[k]
            out.append(_finish_map(frames[k], bands[k], rgb[off:off + n], obs[off:off + n], k))
            off += n
        return out

    if workers <= 1:
        parts = [work(r) for r in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, batches))
    return [m for p in parts for m in p]


def merge_textures(maps: list, page_edge: int = 1024) -> TextureAtlas:
    """Pack maps column by column from the top-left corner of each page.

    Maps fill a column top to bottom; a column is as wide as its widest map.
    When the next map no longer fits below, a new column starts to the right,
    and when no column fits, a new page opens.  Placements are separated by
    a one-pixel gutter filled by replicating the map's last row/column.
    """
    for m in maps:
        if m.w > page_edge or m.h > page_edge:
            raise ValueError(f"texture map {m.w}x{m.h} larger than page {page_edge}")
    atlas = TextureAtlas(page_edge)
    uv = np.zeros((len(maps), 3, 2))
    page = None
    x = y = col_w = 0
    for k, m in enumerate(maps):
        if page is not None and y + m.h > page_edge:
            x, y, col_w = x + col_w + GUTTER, 0, 0
        if page is None or x + m.w > page_edge:
            page = np.zeros((page_edge, page_edge, 3), dtype=np.uint8)
            atlas.pages.append(page)
            x = y = col_w = 0
        page[y:y + m.h, x:x + m.w] = m.pixels
        if x + m.w < page_edge:
            page[y:y + m.h, x + m.w] = m.pixels[:, -1]
        if y + m.h < page_edge:
            page[y + m.h, x:x + m.w] = m.pixels[-1]
            if x + m.w < page_edge:
                page[y + m.h, x + m.w] = m.pixels[-1, -1]
        atlas.placements.append(Placement(len(atlas.pages) - 1, x, y, m.w, m.h))
        corners = np.array([[0, 0], [m.w - 1, 0], [0, m.h - 1]], dtype=np.float64)
        uv[k] = (corners + [x, y] + 0.5) / page_edge
        col_w = max(col_w, m.w)
        y += m.h + GUTTER
    atlas.uv = uv
    return atlas


def texture_mesh(mesh: TriangleMesh, vol: ColorVolume, pixel_size_mm: float,
                 page_edge: int = 1024, workers: int = 1) -> TexturedMesh:
    maps = bake_all(mesh, vol, pixel_size_mm, workers=workers)
    return TexturedMesh(mesh, merge_textures(maps, page_edge))


def colored_vertex_texture(mesh: TriangleMesh, vol: ColorVolume) -> TriangleMesh:
    """Coloured-vertex baseline: one colour volume sample per vertex."""
    rgb, _ = sample_colors(vol, mesh.vertices)
    colors = np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    return TriangleMesh(mesh.vertices.copy(), mesh.triangles.copy(), colors)


def atlas_lookup(atlas: TextureAtlas, page: int, uv) -> np.ndarray:
    """Nearest texel of ``page`` addressed by an image-convention UV pair."""
    x = int(math.floor(uv[0] * atlas.page_edge))
    y = int(math.floor(uv[1] * atlas.page_edge))
    return atlas.pages[page][y, x]
