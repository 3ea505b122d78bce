"""Isosurface extraction and quadric-error edge-collapse decimation."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from skimage.measure import marching_cubes as _sk_marching_cubes

from .volumes import TsdfVolume

BOUNDARY_WEIGHT = 100.0
_SINGULAR_REL = 1e-8


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def validate(self) -> None:
        t = self.triangles
        if t.size and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("degenerate triangle with repeated vertex index")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex position")
        if self.colors is not None and len(self.colors) != len(self.vertices):
            raise ValueError("colour count does not match vertex count")

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.triangles.copy(),
                            None if self.colors is None else self.colors.copy())

    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def marching_cubes(vol: TsdfVolume, iso: float = 0.0) -> TriangleMesh:
    """Extract the ``iso`` level set of the TSDF as an indexed mesh.

    Cells touching an unobserved voxel are skipped.  Triangles are wound so
    that normals point towards positive TSDF (outside).
    """
    observed = vol.weight > 0
    cell = observed[:-1, :-1, :-1] & observed[1:, :-1, :-1] & observed[:-1, 1:, :-1] & observed[:-1, :-1, 1:]
    cell &= observed[1:, 1:, :-1] & observed[1:, :-1, 1:] & observed[:-1, 1:, 1:] & observed[1:, 1:, 1:]
    if not cell.any():
        return empty_mesh()
    # skimage keys each cell on its upper corner
    mask = np.zeros(vol.tsdf.shape, dtype=bool)
    mask[1:, 1:, 1:] = cell
    vals = vol.tsdf[observed]
    if not (vals.min() < iso < vals.max()):
        return empty_mesh()
    try:
        verts, faces, _, _ = _sk_marching_cubes(vol.tsdf.astype(np.float64), level=iso, mask=mask,
                                                gradient_direction="descent", allow_degenerate=False)
    except RuntimeError:
        return empty_mesh()
    verts = vol.config.lower + (verts.astype(np.float64) + 0.5) * vol.pitch
    return _compact(verts, faces.astype(np.int64))


def _compact(verts: np.ndarray, faces: np.ndarray, colors=None) -> TriangleMesh:
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]
    used = np.zeros(len(verts), dtype=bool)
    used[faces.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriangleMesh(verts[used], remap[faces], None if colors is None else colors[used])


# ----------------------------------------------------------------------------
# quadrics

def plane_quadric(normal, point, weight: float = 1.0) -> np.ndarray:
    """Quadric measuring squared distance to the plane through ``point``."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p = np.append(n, -n @ np.asarray(point, dtype=np.float64))
    return weight * np.outer(p, p)


def quadric_error(q: np.ndarray, v) -> float:
    h = np.append(np.asarray(v, dtype=np.float64), 1.0)
    return float(h @ q @ h)


def _q10(q: np.ndarray) -> tuple:
    return (q[0, 0], q[0, 1], q[0, 2], q[0, 3], q[1, 1], q[1, 2], q[1, 3], q[2, 2], q[2, 3], q[3, 3])


def _qeval(q, x, y, z) -> float:
    a11, a12, a13, a14, a22, a23, a24, a33, a34, a44 = q
    return (a11 * x * x + a22 * y * y + a33 * z * z
            + 2 * (a12 * x * y + a13 * x * z + a23 * y * z)
            + 2 * (a14 * x + a24 * y + a34 * z) + a44)


def _qadd(a, b) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def _collapse_target(q, p1, p2):
    """Best position for merging p1 and p2 under quadric q; returns (cost, pos)."""
    a11, a12, a13, a14, a22, a23, a24, a33, a34, _ = q
    c11 = a22 * a33 - a23 * a23
    c12 = a13 * a23 - a12 * a33
    c13 = a12 * a23 - a13 * a22
    det = a11 * c11 + a12 * c12 + a13 * c13
    scale = abs(a11) + abs(a22) + abs(a33)
    mid = ((p1[0] + p2[0]) * 0.5, (p1[1] + p2[1]) * 0.5, (p1[2] + p2[2]) * 0.5)
    cands = []
    if scale > 0 and abs(det) > _SINGULAR_REL * scale ** 3:
        c22 = a11 * a33 - a13 * a13
        c23 = a12 * a13 - a11 * a23
        c33 = a11 * a22 - a12 * a12
        x = -(c11 * a14 + c12 * a24 + c13 * a34) / det
        y = -(c12 * a14 + c22 * a24 + c23 * a34) / det
        z = -(c13 * a14 + c23 * a24 + c33 * a34) / det
        # keep the optimum local to the edge
        span = math.dist(p1, p2)
        if math.dist((x, y, z), mid) <= 2.0 * span + 1e-9:
            cands.append((x, y, z))
    cands.extend((tuple(p1), tuple(p2), mid))
    best = None
    for c in cands:
        e = _qeval(q, *c)
        if best is None or e < best[0]:
            best = (e, c)
    return max(best[0], 0.0), best[1]


def edge_collapse_cost(q1: np.ndarray, q2: np.ndarray, p1, p2):
    """Cost and position for collapsing the edge (p1, p2).

    The summed quadric is minimised in closed form when its 3x3 block is
    well conditioned; otherwise (or if the closed form is worse) the best
    of p1, p2 and their midpoint is taken.
    """
    q = _q10(np.asarray(q1, dtype=np.float64) + np.asarray(q2, dtype=np.float64))
    p1 = tuple(float(x) for x in p1)
    p2 = tuple(float(x) for x in p2)
    cost, pos = _collapse_target(q, p1, p2)
    return cost, np.array(pos)


def vertex_quadrics(mesh: TriangleMesh, boundary_weight: float = BOUNDARY_WEIGHT) -> np.ndarray:
    """Per-vertex (N, 4, 4) quadrics from incident face planes plus boundary penalties."""
    v, t = mesh.vertices, mesh.triangles
    nq = np.zeros((len(v), 4, 4))
    if not len(t):
        return nq
    n = mesh.face_normals()
    ln = np.linalg.norm(n, axis=1)
    ok = ln > 0
    unit = np.zeros_like(n)
    unit[ok] = n[ok] / ln[ok, None]
    d = -np.einsum("ij,ij->i", unit, v[t[:, 0]])
    planes = np.concatenate([unit, d[:, None]], axis=1)
    kp = planes[:, :, None] * planes[:, None, :]
    kp[~ok] = 0
    for c in range(3):
        np.add.at(nq, t[:, c], kp)

    # boundary edges: planes perpendicular to the face through the edge
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    fid = np.tile(np.arange(len(t)), 3)
    key = np.sort(e, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    bmask = (cnt[inv] == 1) & ok[fid]
    if bmask.any():
        be, bf = e[bmask], fid[bmask]
        a, b = v[be[:, 0]], v[be[:, 1]]
        bn = np.cross(b - a, unit[bf])
        bl = np.linalg.norm(bn, axis=1)
        good = bl > 0
        bn = bn[good] / bl[good, None]
        bd = -np.einsum("ij,ij->i", bn, a[good])
        bp = np.concatenate([bn, bd[:, None]], axis=1)
        kb = boundary_weight * bp[:, :, None] * bp[:, None, :]
        np.add.at(nq, be[good, 0], kb)
        np.add.at(nq, be[good, 1], kb)
    return nq


# ----------------------------------------------------------------------------
# decimation

def _normal(a, b, c):
    ux, uy, uz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    vx, vy, vz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


class _Decimator:
    def __init__(self, mesh: TriangleMesh):
        self.pos = mesh.vertices.tolist()
        self.faces = mesh.triangles.tolist()
        self.alive = [True] * len(self.faces)
        self.n_alive = len(self.faces)
        nv = len(self.pos)
        self.vfaces = [set() for _ in range(nv)]
        for i, f in enumerate(self.faces):
            for x in f:
                self.vfaces[x].add(i)
        self.q = [tuple(r) for r in vertex_quadrics(mesh)[:, [0, 0, 0, 0, 1, 1, 1, 2, 2, 3], [0, 1, 2, 3, 1, 2, 3, 2, 3, 3]].tolist()]
        self.version = [0] * nv
        edges = set()
        for a, b, c in self.faces:
            for x, y in ((a, b), (b, c), (c, a)):
                edges.add((x, y) if x < y else (y, x))
        self.heap = [self._entry(a, b) for a, b in sorted(edges)]
        heapq.heapify(self.heap)

    def _entry(self, a, b):
        if a > b:
            a, b = b, a
        cost, p = _collapse_target(_qadd(self.q[a], self.q[b]), self.pos[a], self.pos[b])
        return (cost, a, b, self.version[a], self.version[b], p)

    def neighbours(self, v):
        out = set()
        for f in self.vfaces[v]:
            out.update(self.faces[f])
        out.discard(v)
        return out

    def is_boundary(self, v) -> bool:
        count = {}
        for f in self.vfaces[v]:
            for x in self.faces[f]:
                if x != v:
                    count[x] = count.get(x, 0) + 1
        return any(c == 1 for c in count.values())

    def valid(self, a, b, p) -> bool:
        shared = self.vfaces[a] & self.vfaces[b]
        if not shared or len(shared) > 2:
            return False
        opposite = set()
        for f in shared:
            opposite.update(self.faces[f])
        opposite -= {a, b}
        if (self.neighbours(a) & self.neighbours(b)) != opposite:
            return False
        if len(shared) == 2 and self.is_boundary(a) and self.is_boundary(b):
            return False
        pos = self.pos
        for v in (a, b):
            for f in self.vfaces[v]:
                if f in shared:
                    continue
                tri = self.faces[f]
                old = [pos[x] for x in tri]
                new = [p if x == a or x == b else pos[x] for x in tri]
                n0 = _normal(*old)
                n1 = _normal(*new)
                l0 = n0[0] * n0[0] + n0[1] * n0[1] + n0[2] * n0[2]
                l1 = n1[0] * n1[0] + n1[1] * n1[1] + n1[2] * n1[2]
                if l0 > 0:
                    if l1 <= 1e-12 * l0:
                        return False
                    if n0[0] * n1[0] + n0[1] * n1[1] + n0[2] * n1[2] < 0:
                        return False
        return True

    def collapse(self, a, b, p):
        """Merge b into a (a < b) at position p."""
        faces, vf = self.faces, self.vfaces
        for f in list(vf[b]):
            tri = faces[f]
            if a in tri:
                self.alive[f] = False
                self.n_alive -= 1
                for x in tri:
                    if x != b:
                        vf[x].discard(f)
            else:
                tri[tri.index(b)] = a
                vf[a].add(f)
        vf[b] = set()
        self.pos[a] = list(p)
        self.q[a] = _qadd(self.q[a], self.q[b])
        self.version[a] += 1
        self.version[b] += 1
        for w in sorted(self.neighbours(a)):
            heapq.heappush(self.heap, self._entry(a, w))

    def run(self, target: int):
        heap, version = self.heap, self.version
        while self.n_alive > target and heap:
            cost, a, b, va, vb, p = heapq.heappop(heap)
            if version[a] != va or version[b] != vb or not self.vfaces[a] or not self.vfaces[b]:
                continue
            if not self.valid(a, b, p):
                continue
            self.collapse(a, b, p)

    def result(self) -> TriangleMesh:
        faces = np.array([f for f, ok in zip(self.faces, self.alive) if ok], dtype=np.int64).reshape(-1, 3)
        return _compact(np.asarray(self.pos, dtype=np.float64), faces)


def decimate(mesh: TriangleMesh, reduction_rate: float) -> TriangleMesh:
    """Simplify ``mesh`` until at most ``ceil(rate * n)`` triangles remain.

    Collapses run cheapest-first (ties broken by the smaller vertex pair) and
    skip collapses that would fold a triangle over, create a non-manifold
    edge, or pinch two boundaries together.  Per-vertex colours are dropped.
    """
    if not 0.0 < reduction_rate <= 1.0:
        raise ValueError("reduction_rate must be in (0, 1]")
    mesh.validate()
    target = math.ceil(reduction_rate * mesh.n_triangles - 1e-9)
    if target >= mesh.n_triangles:
        return mesh.copy()
    dec = _Decimator(mesh)
    dec.run(target)
    return dec.result()
