import math
from collections import Counter

import numpy as np
import pytest

import oracles
from texfusion.meshing import (TriangleMesh, decimate, edge_collapse_cost, marching_cubes, plane_quadric,
                               quadric_error, vertex_quadrics)
from texfusion.volumes import TsdfVolume, VolumeConfig


def analytic_volume(cfg, sdf):
    vol = TsdfVolume(cfg)
    vol.tsdf[:] = np.clip(sdf(vol.voxel_centers()) / cfg.truncation_mm, -1, 1)
    vol.weight[:] = 1
    return vol


def grid_mesh(n, z=None):
    """(n+1)^2 vertices, 2 n^2 triangles on the unit-spaced grid."""
    xs, ys = np.meshgrid(np.arange(n + 1, dtype=float), np.arange(n + 1, dtype=float), indexing="ij")
    zs = np.zeros_like(xs) if z is None else z(xs, ys)
    verts = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = i * (n + 1) + j, (i + 1) * (n + 1) + j, (i + 1) * (n + 1) + j + 1, i * (n + 1) + j + 1
            tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(tris))


def edge_counts(tris):
    return Counter(tuple(sorted(e)) for t in tris.tolist() for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])))


# ----------------------------------------------------------------------------
# marching cubes

def test_single_corner_cell_gives_one_triangle():
    cfg = VolumeConfig(geo_dim=2, color_dim=2, size_mm=2.0, origin=(0, 0, 0))
    vol = TsdfVolume(cfg)
    vol.weight[:] = 1
    vol.tsdf[:] = 1
    vol.tsdf[0, 0, 0] = -1
    mesh = marching_cubes(vol)
    assert mesh.n_triangles == 1
    # vertices sit half way along the three edges leaving the inside corner
    c = np.array([0.5, 0.5, 0.5])
    d = np.sort(np.linalg.norm(mesh.vertices - c, axis=1))
    np.testing.assert_allclose(d, [0.5, 0.5, 0.5])


def test_uniform_and_unobserved_volumes_give_empty_mesh():
    cfg = VolumeConfig(geo_dim=8, color_dim=8, size_mm=8.0)
    vol = TsdfVolume(cfg)
    assert marching_cubes(vol).n_triangles == 0
    vol.weight[:] = 1
    assert marching_cubes(vol).n_triangles == 0
    vol.tsdf[:] = -1
    assert marching_cubes(vol).n_triangles == 0


def test_unobserved_voxels_suppress_cells():
    cfg = VolumeConfig(geo_dim=32, color_dim=32, size_mm=320.0)
    vol = analytic_volume(cfg, lambda p: np.linalg.norm(p, axis=-1) - 100)
    full = marching_cubes(vol).n_triangles
    vol.weight[16:] = 0
    half = marching_cubes(vol)
    assert 0 < half.n_triangles < full
    assert half.vertices[:, 0].max() <= cfg.origin[0] + 15.5 * cfg.geo_pitch + 1e-9


def test_sphere_vertices_within_voxel_diagonal():
    cfg = VolumeConfig(geo_dim=48, color_dim=48, size_mm=480.0)
    r = 150.0
    vol = analytic_volume(cfg, lambda p: np.linalg.norm(p, axis=-1) - r)
    mesh = marching_cubes(vol)
    rad = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(rad - r).max() <= math.sqrt(3) * cfg.geo_pitch
    assert np.all(cfg.contains(mesh.vertices))
    mesh.validate()


def test_sphere_mesh_is_watertight_and_outward():
    cfg = VolumeConfig(geo_dim=32, color_dim=32, size_mm=320.0)
    vol = analytic_volume(cfg, lambda p: np.linalg.norm(p - 3.7, axis=-1) - 101.0)
    mesh = marching_cubes(vol)
    assert set(edge_counts(mesh.triangles).values()) == {2}
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", mesh.face_normals(), centroids - 3.7) > 0)


# ----------------------------------------------------------------------------
# quadrics

def test_quadric_is_symmetric_psd(rng):
    q = sum(plane_quadric(rng.normal(size=3), rng.normal(size=3)) for _ in range(5))
    np.testing.assert_allclose(q, q.T)
    assert np.linalg.eigvalsh(q).min() > -1e-9


def test_common_plane_costs_zero():
    n, p = (1.0, 2.0, -0.5), (3.0, 1.0, 2.0)
    q = plane_quadric(n, p)
    p1 = np.array([3.0, 1.0, 2.0])
    p2 = p1 + np.cross(n, [0, 0, 1.0])
    cost, pos = edge_collapse_cost(q, q, p1, p2)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert abs(np.dot(np.asarray(n) / np.linalg.norm(n), pos - p)) < 1e-9


def test_cube_corner_collapse():
    corner = np.zeros(3)
    q_corner = sum(plane_quadric(e, corner) for e in np.eye(3))
    face_pt = np.array([0.4, 0.3, 0.0])
    q_face = plane_quadric((0, 0, 1), face_pt)
    cost, pos = edge_collapse_cost(q_corner, q_face, corner, face_pt)
    np.testing.assert_allclose(pos, corner, atol=1e-12)
    assert cost == pytest.approx(0.0, abs=1e-12)
    assert quadric_error(q_corner, corner) == pytest.approx(0.0, abs=1e-15)


def test_parallel_planes_fall_back_to_brute_force():
    d = 3.0
    q1 = plane_quadric((0, 0, 1), (0, 0, 0))
    q2 = plane_quadric((0, 0, 1), (0, 0, d))
    p1, p2 = np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.5, d])
    cost, pos = edge_collapse_cost(q1, q2, p1, p2)
    cands = [p1, p2, (p1 + p2) / 2]
    errs = [oracles.plane_sq_dist((0, 0, 1), (0, 0, 0), c) + oracles.plane_sq_dist((0, 0, 1), (0, 0, d), c)
            for c in cands]
    best = int(np.argmin(errs))
    np.testing.assert_allclose(pos, cands[best])
    assert cost == pytest.approx(errs[best]) and cost == pytest.approx(d * d / 2)


def test_vertex_quadrics_boundary_penalty():
    mesh = grid_mesh(2)
    q = vertex_quadrics(mesh)
    # interior vertex: plane z = 0 only, so moving in-plane is free
    centre = 4
    assert quadric_error(q[centre], mesh.vertices[centre] + [0.3, 0.2, 0]) == pytest.approx(0, abs=1e-12)
    # a border vertex resists in-plane motion across the border
    assert quadric_error(q[1], mesh.vertices[1] + [-0.3, 0, 0]) > 1.0


# ----------------------------------------------------------------------------
# decimation

def test_rate_one_is_identity():
    mesh = grid_mesh(4, lambda x, y: np.sin(x) * np.cos(y))
    out = decimate(mesh, 1.0)
    np.testing.assert_array_equal(out.vertices, mesh.vertices)
    np.testing.assert_array_equal(out.triangles, mesh.triangles)


def test_rate_validation():
    mesh = grid_mesh(2)
    for r in (0.0, -0.1, 1.01):
        with pytest.raises(ValueError):
            decimate(mesh, r)


def test_planar_grid_stays_on_plane():
    mesh = grid_mesh(20)
    out = decimate(mesh, 0.01)
    assert out.n_triangles <= math.ceil(0.01 * mesh.n_triangles) + 1
    assert np.abs(out.vertices[:, 2]).max() <= 1e-6
    out.validate()
    # total quadric error of the survivors against the original plane is zero
    plane = plane_quadric((0, 0, 1), (0, 0, 0))
    assert sum(quadric_error(plane, v) for v in out.vertices) < 1e-12


def test_tilted_plane_stays_on_plane():
    n = np.array([0.3, -0.2, 1.0])
    mesh = grid_mesh(16, lambda x, y: -(n[0] * x + n[1] * y) / n[2])
    out = decimate(mesh, 0.05)
    assert np.abs(out.vertices @ n / np.linalg.norm(n)).max() <= 1e-6


def test_decimation_is_manifold_deterministic_and_bounded():
    mesh = grid_mesh(24, lambda x, y: 2 * np.sin(x / 3) * np.cos(y / 4))
    for rate in (0.5, 0.2, 0.05):
        a = decimate(mesh, rate)
        b = decimate(mesh, rate)
        assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)
        assert a.n_triangles <= math.ceil(rate * mesh.n_triangles) + 1
        assert max(edge_counts(a.triangles).values()) <= 2
        a.validate()


def test_closed_sphere_stays_closed():
    cfg = VolumeConfig(geo_dim=24, color_dim=24, size_mm=240.0)
    vol = analytic_volume(cfg, lambda p: np.linalg.norm(p, axis=-1) - 80.0)
    mesh = marching_cubes(vol)
    out = decimate(mesh, 0.1)
    assert set(edge_counts(out.triangles).values()) == {2}
    centroids = out.vertices[out.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", out.face_normals(), centroids) > 0)
