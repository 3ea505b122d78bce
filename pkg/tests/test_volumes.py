import math

import numpy as np
import pytest

import oracles
from texfusion.errors import DimensionMismatchError, NoNormalError, OutOfVolumeError
from texfusion.geometry import CameraIntrinsics, RgbdCalibration, RigidTransform, look_at
from texfusion.volumes import (ColorVolume, Frame, TsdfVolume, VolumeConfig, compute_point_weight,
                               integrate_color, integrate_depth, passes_weight_gate, raycast_tsdf,
                               sample_color, sample_colors, update_color, update_tsdf)

SMALL = CameraIntrinsics(60.0, 60.0, 31.5, 23.5, 64, 48)


def wall_frame(d, intr=SMALL, hd_intr=None, color=(200, 100, 50), pose=None):
    hd_intr = hd_intr or intr
    depth = np.full(intr.shape, d, dtype=np.uint16)
    hd = np.empty(hd_intr.shape + (3,), dtype=np.uint8)
    hd[:] = color
    return Frame(depth, hd, pose or RigidTransform())


# ----------------------------------------------------------------------------
# config

def test_default_config_matches_reference_setup():
    c = VolumeConfig()
    assert (c.geo_dim, c.color_dim, c.sigma_mm, c.weight_gate) == (384, 768, 20.0, 0.8)
    assert c.truncation_mm == pytest.approx(4 * c.geo_pitch)


def test_pitch_ratio_exactly_two():
    for g in (64, 128, 384):
        c = VolumeConfig(geo_dim=g, color_dim=2 * g, size_mm=1000.0)
        assert c.geo_pitch / c.color_pitch == 2.0
        assert (c.color_dim / c.geo_dim) ** 3 == 8


def test_config_invariants():
    with pytest.raises(ValueError):
        VolumeConfig(geo_dim=64, color_dim=32)
    with pytest.raises(ValueError):
        VolumeConfig(sigma_mm=0)
    with pytest.raises(ValueError):
        VolumeConfig(weight_gate=1.5)


# ----------------------------------------------------------------------------
# per-voxel update rules

def test_first_observation_takes_colour_and_weight():
    c, w = update_color([0, 0, 0], 0.0, [10, 20, 30], 0.6)
    np.testing.assert_array_equal(c, [10, 20, 30])
    assert w == 0.6


def test_blend_substitution_case():
    c, w = update_color([100, 100, 100], 0.5, [200, 200, 200], 0.5)
    assert c.tolist() == [150.0, 150.0, 150.0] and w == 0.75
    ref_c, ref_w = oracles.blend([100, 100, 100], 0.5, [200, 200, 200], 0.5)
    assert c.tolist() == ref_c and w == ref_w


def test_weight_fixed_point_at_one():
    for w in (0.01, 0.3, 0.99, 1.0):
        assert update_color([1, 2, 3], 1.0, [4, 5, 6], w)[1] == 1.0


def test_weight_gate_examples():
    assert not passes_weight_gate(0.3, 0.5, 0.8)   # 0.3 <= 0.4
    assert passes_weight_gate(0.41, 0.5, 0.8)
    assert passes_weight_gate(0.2, 0.0, 0.8)
    assert not passes_weight_gate(0.0, 0.0, 0.8)
    assert not passes_weight_gate(-0.5, 0.0, 0.8)
    assert not passes_weight_gate(np.nan, 0.0, 0.8)


def test_tsdf_running_average():
    t, w = update_tsdf(np.float32(0.5), np.float32(1), -0.5)
    assert t == 0.0 and w == 2.0
    t, w = update_tsdf(0.2, 128.0, 1.0)
    assert w == 128.0


# ----------------------------------------------------------------------------
# point weight

def _tilted_depth(intr, d, angle_deg):
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    den = 1.0 - (u - intr.cx) / intr.fx * math.tan(math.radians(angle_deg))
    return np.where(den > 0.25, d / np.maximum(den, 0.25), 0.0)


def test_point_weight_fronto_parallel():
    depth = np.full((48, 64), 1000, dtype=np.uint16)
    assert compute_point_weight(depth, (31, 23), SMALL) == pytest.approx(1.0, abs=1e-3)


def test_point_weight_tilted_plane():
    intr = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
    depth = _tilted_depth(intr, 1000.0, 60.0)
    assert compute_point_weight(depth, (319, 239), intr) == pytest.approx(0.5, abs=5e-2)


def test_point_weight_errors():
    depth = np.full((48, 64), 1000, dtype=np.uint16)
    depth[10, 11] = 0
    with pytest.raises(NoNormalError):
        compute_point_weight(depth, (10, 10), SMALL)
    with pytest.raises(IndexError):
        compute_point_weight(depth, (63, 10), SMALL)


# ----------------------------------------------------------------------------
# TSDF integration

def test_wall_zero_crossing():
    cfg = VolumeConfig(geo_dim=40, color_dim=40, size_mm=400.0, origin=(-200, -200, 800))
    vol = integrate_depth(TsdfVolume(cfg), wall_frame(1000), SMALL)
    i = cfg.geo_dim // 2
    col = vol.tsdf[i, i]
    w = vol.weight[i, i]
    z = cfg.origin[2] + (np.arange(cfg.geo_dim) + 0.5) * cfg.geo_pitch
    k = np.nonzero((col[:-1] > 0) & (col[1:] <= 0) & (w[:-1] > 0) & (w[1:] > 0))[0][0]
    zc = z[k] + (z[k + 1] - z[k]) * col[k] / (col[k] - col[k + 1])
    assert abs(zc - 1000.0) <= 0.5 * cfg.geo_pitch


def test_tsdf_outside_frustum_untouched():
    cfg = VolumeConfig(geo_dim=32, color_dim=32, size_mm=3200.0, origin=(-1600, -1600, 100))
    vol = integrate_depth(TsdfVolume(cfg), wall_frame(1000), SMALL)
    # far corner column is outside the 56-degree frustum at these depths
    assert vol.weight[0, 0, :3].max() == 0 and np.all(vol.tsdf[0, 0, :3] == 1.0)
    # voxels far behind the wall are occluded
    assert vol.weight[16, 16, -1] == 0


def test_integrating_same_frame_twice_is_idempotent():
    cfg = VolumeConfig(geo_dim=24, color_dim=24, size_mm=300.0, origin=(-150, -150, 850))
    a = integrate_depth(TsdfVolume(cfg), wall_frame(1000), SMALL)
    once = a.tsdf.copy()
    integrate_depth(a, wall_frame(1000), SMALL)
    np.testing.assert_array_equal(a.tsdf, once)


def test_dimension_mismatch():
    cfg = VolumeConfig(geo_dim=8, color_dim=8, size_mm=100.0)
    bad = wall_frame(1000, intr=CameraIntrinsics(60.0, 60.0, 15.5, 11.5, 32, 24))
    with pytest.raises(DimensionMismatchError):
        integrate_depth(TsdfVolume(cfg), bad, SMALL)


def _bumpy_frame(rng, intr, hd_intr, pose):
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    depth = 1000 + 40 * np.sin(u / 7.0) + 25 * np.cos(v / 5.0) + 3 * (u - intr.cx)
    depth = np.rint(depth).astype(np.uint16)
    depth[rng.random(depth.shape) < 0.05] = 0
    hd = rng.integers(0, 256, size=hd_intr.shape + (3,)).astype(np.uint8)
    return Frame(depth, hd, pose)


def test_integrate_depth_matches_scalar_oracle(rng):
    cfg = VolumeConfig(geo_dim=10, color_dim=10, size_mm=300.0, origin=(-150, -150, 850))
    pose = RigidTransform.from_axis_angle((0.2, 1, 0.1), 0.05, (5, -3, 10))
    fr = _bumpy_frame(rng, SMALL, SMALL, pose)
    vol = integrate_depth(TsdfVolume(cfg), fr, SMALL)
    t = np.ones((10, 10, 10)).tolist()
    w = np.zeros((10, 10, 10)).tolist()
    oracles.integrate_depth(t, w, cfg.origin, cfg.geo_pitch, cfg.truncation_mm, 128, fr.depth.tolist(),
                            (SMALL.fx, SMALL.fy, SMALL.cx, SMALL.cy, SMALL.width, SMALL.height),
                            pose.rotation.tolist(), pose.translation.tolist())
    np.testing.assert_array_equal(vol.weight, np.asarray(w, dtype=np.float32))
    np.testing.assert_allclose(vol.tsdf, np.asarray(t), atol=1e-6)
    assert vol.weight.max() > 0


# ----------------------------------------------------------------------------
# colour integration

def _color_setup():
    hd_intr = SMALL.scaled(2)
    calib = RgbdCalibration(SMALL, hd_intr, RigidTransform(None, (-5.0, 0.0, 0.0)))
    return calib


def test_integrate_color_matches_full_scan_oracle(rng):
    calib = _color_setup()
    cfg = VolumeConfig(geo_dim=8, color_dim=18, size_mm=360.0, origin=(-180, -180, 860))
    vol = ColorVolume(cfg)
    c = np.zeros((18, 18, 18, 3)).tolist()
    w = np.zeros((18, 18, 18)).tolist()
    d, h = SMALL, calib.hd_intrinsics
    all_updated = set()
    for k in range(3):
        pose = RigidTransform.from_axis_angle((0.1, 1, 0.05 * k), 0.04 * k, (4.0 * k, -2.0, 6.0 * k))
        fr = _bumpy_frame(rng, SMALL, h, pose)
        integrate_color(vol, fr, calib)
        up = oracles.integrate_color(c, w, cfg.origin, cfg.color_pitch, cfg.sigma_mm, cfg.weight_gate,
                                     fr.depth.tolist(), fr.hd_rgb.tolist(),
                                     (d.fx, d.fy, d.cx, d.cy, d.width, d.height),
                                     (h.fx, h.fy, h.cx, h.cy, h.width, h.height),
                                     pose.rotation.tolist(), pose.translation.tolist(),
                                     np.eye(3).tolist(), [-5.0, 0.0, 0.0])
        all_updated.update(up)
    assert len(all_updated) > 100
    np.testing.assert_allclose(vol.weight, np.asarray(w), atol=1e-6)
    np.testing.assert_allclose(vol.color, np.asarray(c), atol=1e-3)


def test_integrate_color_workers_bit_identical(rng):
    calib = _color_setup()
    cfg = VolumeConfig(geo_dim=8, color_dim=48, size_mm=360.0, origin=(-180, -180, 860))
    frames = [_bumpy_frame(rng, SMALL, calib.hd_intrinsics,
                           RigidTransform.from_axis_angle((0, 1, 0), 0.03 * k, (3.0 * k, 0, 0))) for k in range(3)]
    vols = []
    for workers in (1, 3):
        v = ColorVolume(cfg)
        for fr in frames:
            integrate_color(v, fr, calib, workers=workers)
        vols.append(v)
    assert np.array_equal(vols[0].color, vols[1].color)
    assert np.array_equal(vols[0].weight, vols[1].weight)


def test_sigma_gate_rejects_voxel_25mm_from_surface():
    calib = RgbdCalibration(SMALL, SMALL, RigidTransform())
    # voxel centres along z at 950, 955, ..., so 975 sits 25 mm in front of the wall
    cfg = VolumeConfig(geo_dim=4, color_dim=20, size_mm=100.0, origin=(-50, -50, 947.5))
    vol = integrate_color(ColorVolume(cfg), wall_frame(1000), calib)
    z = cfg.origin[2] + (np.arange(20) + 0.5) * cfg.color_pitch
    assert z[5] == 975.0 and z[7] == 985.0
    assert vol.weight[10, 10, 5] == 0 and np.all(vol.color[10, 10, 5] == 0)
    assert vol.weight[10, 10, 7] > 0
    np.testing.assert_allclose(vol.color[10, 10, 7], [200, 100, 50], atol=1e-4)


def test_weight_gate_blocks_oblique_update():
    intr = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
    calib = RgbdCalibration(intr, intr, RigidTransform())
    depth = _tilted_depth(intr, 1000.0, 60.0)
    hd = np.full((480, 640, 3), 90, dtype=np.uint8)
    fr = Frame(depth, hd, RigidTransform())
    cfg = VolumeConfig(geo_dim=4, color_dim=4, size_mm=4.0, origin=(-2, -2, 998))
    for w_pre, expect_update in ((0.7, False), (0.5, True)):
        vol = ColorVolume(cfg)
        vol.weight[:] = w_pre
        vol.color[:] = 10
        integrate_color(vol, fr, calib)
        changed = vol.weight[1, 1, 1] != np.float32(w_pre)
        assert changed == expect_update


def test_colour_outside_frustum_unchanged():
    calib = RgbdCalibration(SMALL, SMALL, RigidTransform())
    cfg = VolumeConfig(geo_dim=4, color_dim=8, size_mm=100.0, origin=(2000, 2000, 950))
    vol = integrate_color(ColorVolume(cfg), wall_frame(1000), calib)
    assert vol.weight.max() == 0


def test_unobserved_voxels_keep_zero_weight():
    calib = RgbdCalibration(SMALL, SMALL, RigidTransform())
    cfg = VolumeConfig(geo_dim=8, color_dim=16, size_mm=160.0, origin=(-80, -80, 900))
    vol = integrate_color(ColorVolume(cfg), wall_frame(1000), calib)
    z = cfg.origin[2] + (np.arange(16) + 0.5) * cfg.color_pitch
    far = np.abs(z - 1000) > 25
    assert vol.weight[:, :, far].max() == 0
    assert vol.weight.max() <= 1.0


# ----------------------------------------------------------------------------
# colour sampling

def _grid_volume():
    cfg = VolumeConfig(geo_dim=4, color_dim=8, size_mm=80.0, origin=(0, 0, 0))
    return ColorVolume(cfg)


def test_sample_at_voxel_centre():
    vol = _grid_volume()
    vol.color[3, 4, 5] = (10, 20, 30)
    vol.weight[3, 4, 5] = 0.5
    rgb, ok = sample_color(vol, (35.0, 45.0, 55.0))
    assert ok
    np.testing.assert_allclose(rgb, (10, 20, 30))


def test_sample_midpoint_of_two_voxels():
    vol = _grid_volume()
    vol.color[3, 4, 5] = (10, 20, 30)
    vol.color[4, 4, 5] = (50, 0, 200)
    vol.weight[3, 4, 5] = vol.weight[4, 4, 5] = 1.0
    rgb, ok = sample_color(vol, (40.0, 45.0, 55.0))
    assert ok
    np.testing.assert_allclose(rgb, (30, 10, 115), atol=0.5)


def test_sample_fallback_and_sentinel():
    vol = _grid_volume()
    vol.color[0, 0, 0] = (1, 2, 3)
    vol.weight[0, 0, 0] = 1.0
    rgb, ok = sample_color(vol, (25.0, 5.0, 5.0))   # two voxels away
    assert ok and rgb.tolist() == [1, 2, 3]
    rgb, ok = sample_color(vol, (75.0, 75.0, 75.0))
    assert not ok and rgb.tolist() == [255, 0, 255]


def test_sample_out_of_bounds():
    with pytest.raises(OutOfVolumeError):
        sample_colors(_grid_volume(), [[81.0, 1.0, 1.0]])


# ----------------------------------------------------------------------------
# raycasting

def _analytic_tsdf(cfg, sdf):
    vol = TsdfVolume(cfg)
    p = vol.voxel_centers()
    vol.tsdf[:] = np.clip(sdf(p) / cfg.truncation_mm, -1, 1)
    vol.weight[:] = 1
    return vol


def test_raycast_sphere_centre_depth():
    cfg = VolumeConfig(geo_dim=64, color_dim=64, size_mm=400.0)
    r = 120.0
    vol = _analytic_tsdf(cfg, lambda p: np.linalg.norm(p, axis=-1) - r)
    d = 600.0
    intr = CameraIntrinsics(100.0, 100.0, 32.0, 24.0, 65, 49)
    res = raycast_tsdf(vol, look_at((0, 0, -d), (0, 0, 0)), intr)
    assert res.valid[24, 32]
    assert abs(res.depth[24, 32] - (d - r)) <= cfg.geo_pitch
    assert not res.valid[0, 0]


def test_raycast_wall_depth():
    narrow = CameraIntrinsics(120.0, 120.0, 31.5, 23.5, 64, 48)
    cfg = VolumeConfig(geo_dim=40, color_dim=40, size_mm=400.0, origin=(-200, -200, 800))
    vol = integrate_depth(TsdfVolume(cfg), wall_frame(1000, intr=narrow), narrow)
    # a camera at the origin sees the wall through the volume
    res = raycast_tsdf(vol, RigidTransform(), narrow)
    h, w = narrow.shape
    centre = (slice(h // 4, 3 * h // 4), slice(w // 4, 3 * w // 4))
    assert res.valid[centre].all()
    assert np.abs(res.depth[centre] - 1000.0).max() <= 0.5 * cfg.geo_pitch


def test_raycast_camera_missing_volume():
    cfg = VolumeConfig(geo_dim=16, color_dim=16, size_mm=100.0)
    vol = _analytic_tsdf(cfg, lambda p: np.linalg.norm(p, axis=-1) - 30)
    res = raycast_tsdf(vol, look_at((0, 0, -500), (0, 0, -1000)), SMALL)
    assert not res.valid.any()
