"""Validated models for the JSON files read by the command-line tool.

Three documents exist, each carrying ``format`` and ``version`` keys:

* calibration (``texfusion-calibration``): both intrinsics and the 12
  depth-to-HD extrinsic numbers (row-major rotation then translation);
* scene (``texfusion-scene``): primitives, albedo, decals, orbit trajectory,
  noise and seed for the synthetic generator;
* pipeline (``texfusion-pipeline``): every stage parameter plus paths.

Unknown keys are rejected everywhere.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import FormatError
from .geometry import CameraIntrinsics, RgbdCalibration, RigidTransform
from .synthetic import AnalyticScene, Box, Checker, Decal, Plane, Solid, Sphere, Trajectory, orbit_trajectory
from .volumes import UNOBSERVED_COLOR, VolumeConfig

SCHEMA_VERSION = 1

Vec3 = tuple[float, float, float]
Rgb = tuple[int, int, int]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _Versioned(_Strict):
    version: int

    @field_validator("version")
    @classmethod
    def _known_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported version {v} (this build reads version {SCHEMA_VERSION})")
        return v


# ----------------------------------------------------------------------------
# calibration

class IntrinsicsModel(_Strict):
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    def build(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


class CalibrationModel(_Versioned):
    format: Literal["texfusion-calibration"] = "texfusion-calibration"
    depth_intrinsics: IntrinsicsModel
    hd_intrinsics: IntrinsicsModel
    depth_to_hd: list[float] = Field(min_length=12, max_length=12)

    def build(self) -> RgbdCalibration:
        return RgbdCalibration(self.depth_intrinsics.build(), self.hd_intrinsics.build(),
                               RigidTransform.from_list(self.depth_to_hd))

    @classmethod
    def from_calibration(cls, calib: RgbdCalibration) -> "CalibrationModel":
        return cls(version=SCHEMA_VERSION,
                   depth_intrinsics=IntrinsicsModel(**calib.depth_intrinsics.to_dict()),
                   hd_intrinsics=IntrinsicsModel(**calib.hd_intrinsics.to_dict()),
                   depth_to_hd=calib.depth_to_hd.to_list())


# ----------------------------------------------------------------------------
# scene

class SphereModel(_Strict):
    type: Literal["sphere"]
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(gt=0)

    def build(self):
        return Sphere(tuple(self.center), self.radius)


class BoxModel(_Strict):
    type: Literal["box"]
    center: Vec3 = (0.0, 0.0, 0.0)
    half_size: Vec3

    def build(self):
        if min(self.half_size) <= 0:
            raise ValueError("box half sizes must be positive")
        return Box(tuple(self.center), tuple(self.half_size))


class PlaneModel(_Strict):
    type: Literal["plane"]
    normal: Vec3
    offset: float = 0.0

    def build(self):
        if not np.any(np.asarray(self.normal)):
            raise ValueError("plane normal must be non-zero")
        return Plane(tuple(self.normal), self.offset)


Primitive = Annotated[Union[SphereModel, BoxModel, PlaneModel], Field(discriminator="type")]


class SolidModel(_Strict):
    type: Literal["solid"]
    color: Rgb = (200, 200, 200)

    def build(self):
        return Solid(tuple(self.color))


class CheckerModel(_Strict):
    type: Literal["checker"]
    cell_mm: float = Field(gt=0)
    color_a: Rgb = (240, 240, 240)
    color_b: Rgb = (20, 20, 20)

    def build(self):
        return Checker(self.cell_mm, tuple(self.color_a), tuple(self.color_b))


Albedo = Annotated[Union[SolidModel, CheckerModel], Field(discriminator="type")]


class DecalModel(_Strict):
    face_axis: int = Field(ge=0, le=2)
    face_sign: Literal[-1, 1]
    face_offset: float
    center: tuple[float, float]
    size: tuple[float, float]
    pattern: Literal["checker", "bitmap"] = "checker"
    cell_mm: float = Field(default=5.0, gt=0)
    bitmap: Optional[list[str]] = None
    fg: Rgb = (20, 20, 20)
    bg: Rgb = (240, 240, 240)

    def build(self) -> Decal:
        kw = dict(pattern=self.pattern, cell_mm=self.cell_mm, fg=tuple(self.fg), bg=tuple(self.bg))
        if self.bitmap is not None:
            kw["bitmap"] = tuple(self.bitmap)
        return Decal(self.face_axis, self.face_sign, self.face_offset, tuple(self.center), tuple(self.size), **kw)


class OrbitModel(_Strict):
    type: Literal["orbit"] = "orbit"
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(gt=0)
    n_frames: int = Field(ge=1)
    elevation_deg: float = 0.0
    start_deg: float = 0.0
    sweep_deg: float = 360.0
    depth_noise_mm: float = Field(default=0.0, ge=0)
    jitter_deg: float = Field(default=0.0, ge=0)
    jitter_mm: float = Field(default=0.0, ge=0)

    def build(self) -> Trajectory:
        t = orbit_trajectory(self.center, self.radius, self.n_frames, self.elevation_deg,
                             self.start_deg, self.sweep_deg)
        return Trajectory(t.poses, self.depth_noise_mm, self.jitter_deg, self.jitter_mm)


class SceneModel(_Versioned):
    format: Literal["texfusion-scene"] = "texfusion-scene"
    primitives: list[Primitive] = Field(min_length=1)
    albedo: Albedo = SolidModel(type="solid")
    decals: list[DecalModel] = []
    trajectory: OrbitModel
    seed: int = 0

    def build(self) -> tuple[AnalyticScene, Trajectory]:
        scene = AnalyticScene.from_parts([p.build() for p in self.primitives], self.albedo.build(),
                                         [d.build() for d in self.decals])
        return scene, self.trajectory.build()


# ----------------------------------------------------------------------------
# pipeline

class VolumeModel(_Strict):
    geo_dim: int = Field(default=384, ge=2)
    color_dim: int = Field(default=768, ge=2)
    size_mm: float = Field(default=1000.0, gt=0)
    origin: Optional[Vec3] = None
    truncation_mm: Optional[float] = Field(default=None, gt=0)
    sigma_mm: float = Field(default=20.0, gt=0)
    weight_gate: float = Field(default=0.8, ge=0, le=1)
    max_tsdf_weight: float = Field(default=128.0, gt=0)
    sample_radius: int = Field(default=2, ge=0)
    unobserved_color: Rgb = UNOBSERVED_COLOR

    def build(self) -> VolumeConfig:
        return VolumeConfig(**self.model_dump())


class SnapshotModel(_Strict):
    eye: Vec3
    target: Vec3 = (0.0, 0.0, 0.0)
    intrinsics: IntrinsicsModel = IntrinsicsModel(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)
    patch: Optional[tuple[int, int, int, int]] = None


class PipelineModel(_Versioned):
    format: Literal["texfusion-pipeline"] = "texfusion-pipeline"
    scene: str
    calibration: Optional[str] = None
    output_dir: str = "out"
    volume: VolumeModel = VolumeModel()
    reduction_rate: float = Field(default=1.0, gt=0, le=1)
    pixel_size_mm: float = Field(default=1.0, gt=0)
    page_edge: int = Field(default=1024, ge=2)
    texture_mode: Literal["atlas", "vertex"] = "atlas"
    snapshot: Optional[SnapshotModel] = None
    seed: Optional[int] = None
    workers: int = Field(default=1, ge=1)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e


def parse_model(model_cls, data: dict, source: str = "<input>"):
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise FormatError(f"{source}: {loc}: {err['msg']}") from e


def load_model(model_cls, path):
    return parse_model(model_cls, _read_json(path), str(path))


def load_calibration(path) -> RgbdCalibration:
    try:
        return load_model(CalibrationModel, path).build()
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def save_calibration(calib: RgbdCalibration, path) -> None:
    m = CalibrationModel.from_calibration(calib)
    Path(path).write_text(json.dumps(m.model_dump(), indent=2) + "\n")
