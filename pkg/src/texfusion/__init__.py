"""Asymmetric TSDF + colour volume fusion with per-triangle texture atlases."""
from .errors import (BehindCameraError, DimensionMismatchError, FormatError, InvalidDepthError,
                     NoNormalError, OutOfVolumeError, TexfusionError)
from .geometry import (CameraIntrinsics, RgbdCalibration, RigidTransform, compose, depth_pixel_to_hd_pixel,
                       inverse, look_at, project, transform_point, unproject)
from .meshing import TriangleMesh, decimate, edge_collapse_cost, marching_cubes
from .metrics import ImagePatch, crop_patch, gradient_magnitude, render_snapshot
from .texturing import (TextureAtlas, TextureMap, TexturedMesh, TriangleFrame, bake_polygon_texture,
                        colored_vertex_texture, merge_textures, texture_mesh, triangle_frame)
from .volumes import (ColorVolume, Frame, TsdfVolume, VolumeConfig, compute_point_weight, integrate_color,
                      integrate_depth, raycast_tsdf, sample_color, update_color)

__version__ = "0.1.0"
