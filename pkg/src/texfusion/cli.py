"""``texfusion`` command-line tool.

Every subcommand exits 0 on success and 1 with a one-line ``error:``
message on standard error otherwise (argparse itself exits 2 on bad flags).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import config as cfgmod
from . import io
from .errors import TexfusionError
from .geometry import CameraIntrinsics, RigidTransform, look_at
from .meshing import decimate, marching_cubes
from .metrics import crop_patch, gradient_magnitude, render_snapshot
from .synthetic import default_calibration, render_sequence
from .texturing import colored_vertex_texture, texture_mesh
from .volumes import ColorVolume, TsdfVolume, VolumeConfig, integrate_color, integrate_depth

DEFAULT_INTRINSICS = (525.0, 525.0, 319.5, 239.5, 640, 480)


class CliError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ----------------------------------------------------------------------------
# stage helpers shared by the subcommands and ``pipeline``

def _calibration(path):
    return cfgmod.load_calibration(path) if path else default_calibration()


def run_synth(scene_path, out_dir, calib_path=None, seed=None):
    model = cfgmod.load_model(cfgmod.SceneModel, scene_path)
    scene, traj = model.build()
    calib = _calibration(calib_path)
    frames = render_sequence(scene, traj, calib, seed=model.seed if seed is None else seed)
    io.save_frame_sequence(frames, out_dir, calib)
    return frames, calib


def run_fuse(frames, calib, vcfg: VolumeConfig, workers=1):
    tsdf, color = TsdfVolume(vcfg), ColorVolume(vcfg)
    for fr in frames:
        integrate_depth(tsdf, fr, calib.depth_intrinsics, workers=workers)
        integrate_color(color, fr, calib, workers=workers)
    return tsdf, color


def run_texture(mesh, color, mode, out, pixel_size_mm, page_edge, workers=1):
    if mode == "vertex":
        model = colored_vertex_texture(mesh, color)
        path = Path(str(out) + ".obj")
        path.parent.mkdir(parents=True, exist_ok=True)
        io.save_mesh_obj(model, path)
        return model, [path]
    tm = texture_mesh(mesh, color, pixel_size_mm, page_edge=page_edge, workers=workers)
    return tm, io.export_textured_mesh(tm, out)


def load_model_file(path):
    """A textured OBJ (with ``mtllib``) or a coloured-vertex OBJ."""
    text = Path(path).read_text()
    if any(line.startswith("mtllib ") for line in text.splitlines()):
        return io.import_textured_mesh(path)
    mesh = io.load_mesh_obj(path)
    if mesh.colors is None:
        raise CliError(f"{path}: model has neither texture nor vertex colours")
    return mesh


# ----------------------------------------------------------------------------
# subcommands

def cmd_synth(a):
    frames, _ = run_synth(a.scene, a.out, a.calibration, a.seed)
    print(f"wrote {len(frames)} frames to {a.out}")


def _volume_config(a) -> VolumeConfig:
    return VolumeConfig(geo_dim=a.geo_dim, color_dim=a.color_dim, size_mm=a.size_mm,
                        origin=tuple(a.origin) if a.origin else None,
                        truncation_mm=a.truncation_mm, sigma_mm=a.sigma_mm)


def cmd_fuse(a):
    vcfg = _volume_config(a)
    print(f"geometry dim {vcfg.geo_dim} (pitch {vcfg.geo_pitch:.4f} mm)")
    print(f"colour dim {vcfg.color_dim} (pitch {vcfg.color_pitch:.4f} mm)")
    if a.dry_run:
        return
    if not a.frames or not a.tsdf_out or not a.color_out:
        raise CliError("fuse needs --frames, --tsdf-out and --color-out unless --dry-run is given")
    calib = cfgmod.load_calibration(a.calibration) if a.calibration else None
    frames = io.load_frame_sequence(a.frames, calib)
    if calib is None:
        stored = Path(a.frames) / "calibration.json"
        calib = cfgmod.load_calibration(stored) if stored.is_file() else default_calibration()
    tsdf, color = run_fuse(frames, calib, vcfg, a.workers)
    io.save_volume(tsdf, a.tsdf_out)
    io.save_volume(color, a.color_out)
    print(f"fused {len(frames)} frames")


def cmd_mesh(a):
    vol = io.load_volume(a.tsdf)
    if not isinstance(vol, TsdfVolume):
        raise CliError(f"{a.tsdf}: not a TSDF volume dump")
    mesh = marching_cubes(vol)
    io.save_mesh_obj(mesh, a.out)
    print(f"triangles {mesh.n_triangles}")


def cmd_decimate(a):
    mesh = io.load_mesh_obj(a.mesh)
    out = decimate(mesh, a.rate)
    io.save_mesh_obj(out, a.out)
    print(f"input triangles {mesh.n_triangles}")
    print(f"output triangles {out.n_triangles}")


def cmd_texture(a):
    mesh = io.load_mesh_obj(a.mesh)
    color = io.load_volume(a.color)
    if not isinstance(color, ColorVolume):
        raise CliError(f"{a.color}: not a colour volume dump")
    _, paths = run_texture(mesh, color, a.mode, a.out, a.pixel_size_mm, a.page_edge, a.workers)
    for p in paths:
        print(p)


def _pose_from_args(a) -> RigidTransform:
    if a.pose and a.look_at:
        raise CliError("give either --pose or --look-at, not both")
    if a.pose:
        return RigidTransform.from_list(a.pose)
    if a.look_at:
        return look_at(a.look_at[:3], a.look_at[3:])
    raise CliError("snapshot needs --pose or --look-at")


def cmd_snapshot(a):
    model = load_model_file(a.model)
    intr = CameraIntrinsics(*a.intrinsics[:4], int(a.intrinsics[4]), int(a.intrinsics[5]))
    img = render_snapshot(model, _pose_from_args(a), intr, workers=a.workers)
    io.write_ppm(a.out, img)
    print(a.out)


def _read_patch_file(path):
    rects = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 5:
            raise CliError(f"{path}:{n}: expected 'model_id x y w h'")
        try:
            rects.append((parts[0], tuple(int(v) for v in parts[1:])))
        except ValueError as e:
            raise CliError(f"{path}:{n}: {e}") from e
    return rects


def cmd_metric(a):
    img = io.read_ppm(a.image)
    if a.rect and a.patches:
        raise CliError("give either --rect or --patches, not both")
    if a.patches:
        for mid, rect in _read_patch_file(a.patches):
            print(f"{mid} {gradient_magnitude(crop_patch(img, rect, mid)):.4f}")
    else:
        rect = a.rect or (0, 0, img.shape[1], img.shape[0])
        print(f"{gradient_magnitude(crop_patch(img, rect)):.4f}")


def run_pipeline(config_path, out_override=None) -> dict:
    root = Path(config_path).resolve().parent
    pc = cfgmod.load_model(cfgmod.PipelineModel, config_path)
    resolve = lambda p: p if Path(p).is_absolute() else root / p  # noqa: E731
    out = Path(out_override) if out_override else resolve(pc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {}

    t0 = time.perf_counter()
    frames, calib = run_synth(resolve(pc.scene), out / "frames",
                              resolve(pc.calibration) if pc.calibration else None, pc.seed)
    _log(f"synth: {len(frames)} frames ({time.perf_counter() - t0:.1f} s)")

    t0 = time.perf_counter()
    vcfg = pc.volume.build()
    tsdf, color = run_fuse(frames, calib, vcfg, pc.workers)
    io.save_volume(tsdf, out / "tsdf.tfv")
    io.save_volume(color, out / "color.tfv")
    _log(f"fuse: geometry dim {vcfg.geo_dim}, colour dim {vcfg.color_dim} ({time.perf_counter() - t0:.1f} s)")

    mesh = marching_cubes(tsdf)
    io.save_mesh_obj(mesh, out / "mesh.obj")
    report["mesh_triangles"] = mesh.n_triangles
    if mesh.n_triangles == 0:
        raise CliError("fused volume produced an empty mesh")
    if pc.reduction_rate < 1.0:
        t0 = time.perf_counter()
        mesh = decimate(mesh, pc.reduction_rate)
        _log(f"decimate: {report['mesh_triangles']} -> {mesh.n_triangles} ({time.perf_counter() - t0:.1f} s)")
    io.save_mesh_obj(mesh, out / "decimated.obj")
    report["decimated_triangles"] = mesh.n_triangles

    model, _ = run_texture(mesh, color, pc.texture_mode, out / "model", pc.pixel_size_mm,
                           pc.page_edge, pc.workers)
    if pc.snapshot is not None:
        s = pc.snapshot
        img = render_snapshot(model, look_at(s.eye, s.target), s.intrinsics.build(), workers=pc.workers)
        io.write_ppm(out / "snapshot.ppm", img)
        if s.patch is not None:
            report["gradient_magnitude"] = round(gradient_magnitude(crop_patch(img, s.patch)), 4)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_pipeline(a):
    report = run_pipeline(a.config, a.out)
    for k in sorted(report):
        v = report[k]
        print(f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}")


# ----------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texfusion", description="RGB-D fusion with high-resolution texture baking.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic RGB-D frame sequence")
    s.add_argument("--scene", required=True, help="scene JSON file")
    s.add_argument("--out", required=True, help="output frame directory")
    s.add_argument("--calibration", help="calibration JSON (default: built-in VGA depth + 2048x1536 HD)")
    s.add_argument("--seed", type=int, help="noise seed (overrides the scene file)")
    s.set_defaults(func=cmd_synth)

    d = VolumeConfig()
    s = sub.add_parser("fuse", help="integrate frames into TSDF and colour volumes")
    s.add_argument("--frames", help="frame sequence directory")
    s.add_argument("--calibration", help="calibration JSON (default: the one stored with the frames)")
    s.add_argument("--tsdf-out", help="TSDF volume dump to write")
    s.add_argument("--color-out", help="colour volume dump to write")
    s.add_argument("--geo-dim", type=int, default=d.geo_dim, help="geometry voxels per axis (default %(default)s)")
    s.add_argument("--color-dim", type=int, default=d.color_dim, help="colour voxels per axis (default %(default)s)")
    s.add_argument("--size-mm", type=float, default=d.size_mm, help="volume edge length in mm (default %(default)s)")
    s.add_argument("--origin", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="volume min corner in mm (default: centred on the origin)")
    s.add_argument("--truncation-mm", type=float, help="TSDF truncation (default: 4 geometry voxels)")
    s.add_argument("--sigma-mm", type=float, default=d.sigma_mm, help="colour surface distance gate (default %(default)s)")
    s.add_argument("--workers", type=int, default=1, help="worker threads (default %(default)s)")
    s.add_argument("--dry-run", action="store_true", help="print the volume configuration and stop")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("mesh", help="extract the zero level set of a TSDF dump")
    s.add_argument("--tsdf", required=True, help="TSDF volume dump")
    s.add_argument("--out", required=True, help="output OBJ")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("decimate", help="quadric-error edge-collapse simplification")
    s.add_argument("--mesh", required=True, help="input OBJ")
    s.add_argument("--rate", type=float, required=True, help="fraction of triangles to keep, in (0, 1]")
    s.add_argument("--out", required=True, help="output OBJ")
    s.set_defaults(func=cmd_decimate)

    s = sub.add_parser("texture", help="colour a mesh from a colour volume dump")
    s.add_argument("--mesh", required=True, help="input OBJ")
    s.add_argument("--color", required=True, help="colour volume dump")
    s.add_argument("--out", required=True, help="output basename (writes <out>.obj and friends)")
    s.add_argument("--mode", choices=("atlas", "vertex"), default="atlas",
                   help="texture atlas or coloured vertices (default %(default)s)")
    s.add_argument("--pixel-size-mm", type=float, default=1.0, help="texel edge length (default %(default)s)")
    s.add_argument("--page-edge", type=int, default=1024, help="atlas page size in pixels (default %(default)s)")
    s.add_argument("--workers", type=int, default=1, help="worker threads (default %(default)s)")
    s.set_defaults(func=cmd_texture)

    s = sub.add_parser("snapshot", help="render a model from a fixed viewpoint to PPM")
    s.add_argument("--model", required=True, help="textured or coloured-vertex OBJ")
    s.add_argument("--out", required=True, help="output PPM")
    s.add_argument("--pose", type=float, nargs=12, metavar="N",
                   help="world-to-camera motion: row-major rotation then translation")
    s.add_argument("--look-at", type=float, nargs=6, metavar=("EX", "EY", "EZ", "TX", "TY", "TZ"),
                   help="camera eye and target in mm")
    s.add_argument("--intrinsics", type=float, nargs=6, default=DEFAULT_INTRINSICS,
                   metavar=("FX", "FY", "CX", "CY", "W", "H"), help="snapshot camera (default VGA 525 px)")
    s.add_argument("--workers", type=int, default=1, help="worker threads (default %(default)s)")
    s.set_defaults(func=cmd_snapshot)

    s = sub.add_parser("metric", help="mean gradient magnitude of an image patch")
    s.add_argument("image", help="PPM image")
    s.add_argument("--rect", type=int, nargs=4, metavar=("X", "Y", "W", "H"),
                   help="patch rectangle (default: whole image)")
    s.add_argument("--patches", help="patch list file with 'model_id x y w h' lines")
    s.set_defaults(func=cmd_metric)

    s = sub.add_parser("pipeline", help="run every stage from one pipeline JSON")
    s.add_argument("--config", required=True, help="pipeline JSON")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (TexfusionError, CliError, ValueError, OSError, IndexError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        _log(f"error: {msg}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
