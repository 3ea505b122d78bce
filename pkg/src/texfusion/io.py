"""File formats.

Volume dump (``.tfv``)::

    8 bytes   magic b"TFVOLUME"
    uint32    format version (little-endian), currently 1
    uint32    length n of the JSON header
    n bytes   UTF-8 JSON: {"kind": "tsdf"|"color", "dim": D, "config": {...}}
    payload   D*D*D little-endian float32 records in x-major (C) order:
              tsdf volume  -> (tsdf, weight)
              colour volume -> (r, g, b, weight)

Depth raster (``.d16``)::

    b"TFDEPTH 1\\n" then b"<width> <height>\\n" then width*height
    little-endian uint16 millimetres, row-major; 0 marks an invalid pixel.

Colour images are binary PPM (P6, maxval 255).  A frame sequence directory
holds ``depth_NNNN.d16``, ``color_NNNN.ppm``, ``trajectory.txt`` and
optionally ``calibration.json``.  The trajectory starts with the line
``# texfusion-trajectory 1`` followed by one ``id r00 .. r22 tx ty tz`` line
per frame.

Meshes are Wavefront OBJ.  Textured export writes ``<base>.obj``,
``<base>.mtl`` and one ``<base>_pageK.ppm`` per atlas page; OBJ texture
coordinates use the bottom-left origin, so ``vt = (u, 1 - v)``.
"""
from __future__ import annotations

import json
import re
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import load_calibration, save_calibration
from .errors import DimensionMismatchError, FormatError
from .geometry import RgbdCalibration, RigidTransform
from .meshing import TriangleMesh
from .texturing import Placement, TextureAtlas, TexturedMesh
from .volumes import ColorVolume, Frame, TsdfVolume, VolumeConfig

VOLUME_MAGIC = b"TFVOLUME"
VOLUME_VERSION = 1
DEPTH_MAGIC = b"TFDEPTH"
DEPTH_VERSION = 1
TRAJECTORY_HEADER = "# texfusion-trajectory 1"
OBJ_HEADER = "# texfusion-obj 1"

PathLike = Union[str, Path]


# ----------------------------------------------------------------------------
# volumes

def _config_dict(cfg: VolumeConfig) -> dict:
    return dict(geo_dim=cfg.geo_dim, color_dim=cfg.color_dim, size_mm=cfg.size_mm,
                origin=list(cfg.origin), truncation_mm=cfg.truncation_mm, sigma_mm=cfg.sigma_mm,
                weight_gate=cfg.weight_gate, max_tsdf_weight=cfg.max_tsdf_weight,
                sample_radius=cfg.sample_radius, unobserved_color=list(cfg.unobserved_color))


def save_volume(vol: Union[TsdfVolume, ColorVolume], path: PathLike) -> None:
    if isinstance(vol, TsdfVolume):
        kind, rec = "tsdf", np.stack([vol.tsdf, vol.weight], axis=-1)
    elif isinstance(vol, ColorVolume):
        kind, rec = "color", np.concatenate([vol.color, vol.weight[..., None]], axis=-1)
    else:
        raise TypeError("expected a TsdfVolume or ColorVolume")
    header = json.dumps({"kind": kind, "dim": vol.dim, "config": _config_dict(vol.config)}).encode()
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC + struct.pack("<II", VOLUME_VERSION, len(header)) + header)
        f.write(np.ascontiguousarray(rec, dtype="<f4").tobytes())


def load_volume(path: PathLike) -> Union[TsdfVolume, ColorVolume]:
    data = Path(path).read_bytes()
    if data[:8] != VOLUME_MAGIC or len(data) < 16:
        raise FormatError(f"{path}: not a volume dump")
    version, n = struct.unpack("<II", data[8:16])
    if version != VOLUME_VERSION:
        raise FormatError(f"{path}: unsupported volume version {version}")
    try:
        head = json.loads(data[16:16 + n].decode())
        cfg = head["config"]
        cfg = VolumeConfig(**{**cfg, "origin": tuple(cfg["origin"]),
                              "unobserved_color": tuple(cfg["unobserved_color"])})
        kind, dim = head["kind"], int(head["dim"])
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"{path}: bad volume header ({e})") from e
    if kind == "tsdf":
        vol, width = TsdfVolume(cfg), 2
    elif kind == "color":
        vol, width = ColorVolume(cfg), 4
    else:
        raise FormatError(f"{path}: unknown volume kind {kind!r}")
    if dim != vol.dim:
        raise FormatError(f"{path}: header dim {dim} disagrees with config")
    payload = data[16 + n:]
    if len(payload) != dim ** 3 * width * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {dim ** 3 * width * 4}")
    rec = np.frombuffer(payload, dtype="<f4").reshape(dim, dim, dim, width).astype(np.float32)
    if kind == "tsdf":
        vol.tsdf, vol.weight = rec[..., 0].copy(), rec[..., 1].copy()
    else:
        vol.color, vol.weight = rec[..., :3].copy(), rec[..., 3].copy()
    return vol


# ----------------------------------------------------------------------------
# images

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM export needs an (h, w, 3) uint8 image")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    pos, fields = 0, []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise FormatError(f"{path}: only binary PPM (P6) is supported, got {fields[0]!r}")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError as e:
        raise FormatError(f"{path}: malformed PPM header") from e
    if maxval != 255 or w <= 0 or h <= 0:
        raise FormatError(f"{path}: unsupported PPM geometry {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:]
    if len(body) != w * h * 3:
        raise FormatError(f"{path}: pixel data is {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_depth(path: PathLike, depth: np.ndarray) -> None:
    d = np.asarray(depth)
    if d.dtype != np.uint16 or d.ndim != 2:
        raise ValueError("depth raster must be 2-D uint16")
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC + b" %d\n%d %d\n" % (DEPTH_VERSION, w, h))
        f.write(np.ascontiguousarray(d, dtype="<u2").tobytes())


def read_depth(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 2)
    if len(lines) < 3:
        raise FormatError(f"{path}: truncated depth header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != DEPTH_MAGIC:
        raise FormatError(f"{path}: not a depth raster")
    if magic[1] != str(DEPTH_VERSION).encode():
        raise FormatError(f"{path}: unsupported depth version {magic[1].decode(errors='replace')}")
    try:
        w, h = (int(x) for x in lines[1].split())
    except ValueError as e:
        raise FormatError(f"{path}: malformed depth size line") from e
    if len(lines[2]) != w * h * 2:
        raise FormatError(f"{path}: depth payload is {len(lines[2])} bytes, expected {w * h * 2}")
    return np.frombuffer(lines[2], dtype="<u2").reshape(h, w).astype(np.uint16)


# ----------------------------------------------------------------------------
# frame sequences

def _format_pose(idx: int, pose: RigidTransform) -> str:
    return " ".join([str(idx)] + [repr(v) for v in pose.to_list()])


def save_trajectory(poses, path: PathLike) -> None:
    lines = [TRAJECTORY_HEADER] + [_format_pose(k, p) for k, p in enumerate(poses)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path: PathLike) -> list:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != TRAJECTORY_HEADER:
        raise FormatError(f"{path}: missing header {TRAJECTORY_HEADER!r}")
    poses = []
    for n, line in enumerate(text[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 13:
            raise FormatError(f"{path}:{n}: expected frame id and 12 numbers")
        try:
            idx = int(parts[0])
            pose = RigidTransform.from_list(parts[1:])
        except ValueError as e:
            raise FormatError(f"{path}:{n}: {e}") from e
        if idx != len(poses):
            raise FormatError(f"{path}:{n}: frame id {idx} out of sequence")
        poses.append(pose)
    return poses


def save_frame_sequence(frames, directory: PathLike, calib: Optional[RgbdCalibration] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, fr in enumerate(frames):
        write_depth(d / f"depth_{k:04d}.d16", fr.depth)
        write_ppm(d / f"color_{k:04d}.ppm", fr.hd_rgb)
    save_trajectory([fr.pose for fr in frames], d / "trajectory.txt")
    if calib is not None:
        save_calibration(calib, d / "calibration.json")


def load_frame_sequence(directory: PathLike, calib: Optional[RgbdCalibration] = None) -> list:
    """Load frames; rasters are checked against ``calib`` (or the stored one)."""
    d = Path(directory)
    if not (d / "trajectory.txt").is_file():
        raise FormatError(f"{d}: no trajectory.txt")
    if calib is None and (d / "calibration.json").is_file():
        calib = load_calibration(d / "calibration.json")
    frames = []
    for k, pose in enumerate(load_trajectory(d / "trajectory.txt")):
        fr = Frame(read_depth(d / f"depth_{k:04d}.d16"), read_ppm(d / f"color_{k:04d}.ppm"), pose)
        if calib is not None:
            try:
                fr.check(calib.depth_intrinsics, calib.hd_intrinsics)
            except DimensionMismatchError as e:
                raise DimensionMismatchError(f"frame {k}: {e}") from e
        frames.append(fr)
    return frames


# ----------------------------------------------------------------------------
# meshes

def _obj_lines(path: PathLike):
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != OBJ_HEADER:
        raise FormatError(f"{path}: missing header {OBJ_HEADER!r}")
    for n, line in enumerate(text[1:], start=2):
        parts = line.split()
        if parts and not parts[0].startswith("#"):
            yield n, parts


def save_mesh_obj(mesh: TriangleMesh, path: PathLike) -> None:
    """Plain or coloured-vertex OBJ (``v x y z r g b`` with channels in [0, 1])."""
    out = [OBJ_HEADER]
    if mesh.colors is None:
        out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    else:
        c = mesh.colors.astype(np.float64) / 255.0
        out += [f"v {x!r} {y!r} {z!r} {r!r} {g!r} {b!r}"
                for (x, y, z), (r, g, b) in zip(mesh.vertices.tolist(), c.tolist())]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


def _face_index(tok: str, n: int, path, line) -> tuple:
    parts = tok.split("/")
    try:
        idx = [int(p) if p else None for p in parts]
    except ValueError as e:
        raise FormatError(f"{path}:{line}: bad face token {tok!r}") from e
    v = idx[0]
    if v is None or not 1 <= v <= n:
        raise FormatError(f"{path}:{line}: vertex index {tok!r} out of range")
    return v - 1, (idx[1] - 1 if len(idx) > 1 and idx[1] is not None else None)


def load_mesh_obj(path: PathLike) -> TriangleMesh:
    verts, cols, tris = [], [], []
    for n, parts in _obj_lines(path):
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) == 7:
                    cols.append([float(x) for x in parts[4:7]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(f"{path}:{n}: only triangles are supported")
                tris.append([_face_index(t, len(verts), path, n)[0] for t in parts[1:]])
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{path}:{n}: {e}") from e
    colors = None
    if cols:
        if len(cols) != len(verts):
            raise FormatError(f"{path}: colours present on only some vertices")
        colors = np.clip(np.rint(np.asarray(cols) * 255.0), 0, 255).astype(np.uint8)
    mesh = TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(tris, dtype=np.int64).reshape(-1, 3), colors)
    mesh.validate()
    return mesh


def export_textured_mesh(tm: TexturedMesh, basename: PathLike) -> list:
    """Write OBJ + MTL + one PPM per atlas page; returns the written paths."""
    base = Path(basename)
    base.parent.mkdir(parents=True, exist_ok=True)
    atlas, mesh = tm.atlas, tm.mesh
    written = []
    mtl = ["# texfusion-mtl 1"]
    for k, page in enumerate(atlas.pages):
        img = base.parent / f"{base.name}_page{k}.ppm"
        write_ppm(img, page)
        written.append(img)
        mtl += [f"newmtl page{k}", "Ka 1 1 1", "Kd 1 1 1", "Ks 0 0 0", "illum 1", f"map_Kd {img.name}"]
    mtl_path = base.parent / f"{base.name}.mtl"
    mtl_path.write_text("\n".join(mtl) + "\n")

    out = [OBJ_HEADER, f"# atlas_page_edge {atlas.page_edge}", f"mtllib {mtl_path.name}"]
    out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"vt {u!r} {1.0 - v!r}" for u, v in atlas.uv.reshape(-1, 2).tolist()]
    current = None
    for k, (a, b, c) in enumerate(mesh.triangles.tolist()):
        page = atlas.placements[k].page
        if page != current:
            out.append(f"usemtl page{page}")
            current = page
        t = 3 * k + 1
        out.append(f"f {a + 1}/{t} {b + 1}/{t + 1} {c + 1}/{t + 2}")
    obj_path = base.parent / f"{base.name}.obj"
    obj_path.write_text("\n".join(out) + "\n")
    return [obj_path, mtl_path] + written


def _snap_texel_centre(x: np.ndarray, edge: int) -> np.ndarray:
    """Recover exact texel-centre coordinates lost to the 1 - v flip."""
    k = np.rint(x * edge - 0.5)
    snapped = (k + 0.5) / edge
    return np.where(np.abs(snapped - x) < 1e-9, snapped, x)


def _read_mtl(path: Path) -> dict:
    maps, name = {}, None
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "newmtl":
            name = parts[1]
        elif parts[0] == "map_Kd" and name is not None:
            maps[name] = path.parent / parts[1]
    return maps


def import_textured_mesh(obj_path: PathLike) -> TexturedMesh:
    obj_path = Path(obj_path)
    verts, vts, tris, tcs, pages = [], [], [], [], []
    mtl_maps, current, edge = {}, None, None
    for n, parts in _obj_lines(obj_path):
        key = parts[0]
        try:
            if key == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif key == "vt":
                vts.append([float(parts[1]), float(parts[2])])
            elif key == "mtllib":
                mtl_maps = _read_mtl(obj_path.parent / parts[1])
            elif key == "usemtl":
                current = parts[1]
            elif key == "f":
                if len(parts) != 4:
                    raise FormatError(f"{obj_path}:{n}: only triangles are supported")
                idx = [_face_index(t, len(verts), obj_path, n) for t in parts[1:]]
                if any(t is None or not 0 <= t < len(vts) for _, t in idx):
                    raise FormatError(f"{obj_path}:{n}: face without valid texture coordinates")
                if current not in mtl_maps:
                    raise FormatError(f"{obj_path}:{n}: face uses unknown material {current!r}")
                tris.append([v for v, _ in idx])
                tcs.append([t for _, t in idx])
                pages.append(current)
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"{obj_path}:{n}: {e}") from e

    names = sorted(set(pages), key=lambda s: int(s[4:]) if s.startswith("page") and s[4:].isdigit() else s)
    page_of = {name: k for k, name in enumerate(names)}
    images = [read_ppm(mtl_maps[name]) for name in names]
    if images:
        edge = images[0].shape[0]
        if any(im.shape[:2] != (edge, edge) for im in images):
            raise FormatError(f"{obj_path}: atlas pages must be square and equally sized")
    mesh = TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(tris, dtype=np.int64).reshape(-1, 3))
    mesh.validate()

    vt = np.asarray(vts, dtype=np.float64).reshape(-1, 2)
    uv = vt[np.asarray(tcs, dtype=np.int64).reshape(-1, 3)] if tcs else np.zeros((0, 3, 2))
    uv[..., 1] = 1.0 - uv[..., 1]
    placements = []
    if edge:
        uv = _snap_texel_centre(uv, edge)
        corners = np.rint(uv * edge - 0.5).astype(np.int64)
        for k, name in enumerate(pages):
            c = corners[k]
            placements.append(Placement(page_of[name], int(c[0, 0]), int(c[0, 1]),
                                        int(c[1, 0] - c[0, 0] + 1), int(c[2, 1] - c[0, 1] + 1)))
    atlas = TextureAtlas(edge or 0, images, placements, uv)
    return TexturedMesh(mesh, atlas)
