"""Per-pixel mesh ray casting for a pinhole camera."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colmap_io import CameraIntrinsics, PosedImage, pixel_rays
from .mesh.bvh import AcceleratedMesh, intersect_rays
from .rasters import DepthMap


@dataclass(eq=False)
class PixelHits:
    """Closest hit per pixel, all arrays (H, W); misses have ``face == -1``."""

    t: np.ndarray
    face: np.ndarray
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.face >= 0


def resolve_intrinsics(intr: CameraIntrinsics, resolution=None) -> CameraIntrinsics:
    if resolution is None:
        return intr
    w, h = resolution
    return intr.scaled(int(w), int(h))


def camera_hits(accel: AcceleratedMesh, intr: CameraIntrinsics, pose: PosedImage,
                resolution=None) -> PixelHits:
    intr = resolve_intrinsics(intr, resolution)
    origins, dirs, z_per_t = pixel_rays(intr, pose)
    t, face, u, v = intersect_rays(accel, origins, dirs)
    shape = (intr.height, intr.width)
    depth = np.where(face >= 0, t * z_per_t, np.inf)
    return PixelHits(t.reshape(shape), face.reshape(shape), u.reshape(shape), v.reshape(shape),
                     depth.reshape(shape))


def raycast_depth(accel: AcceleratedMesh, intr: CameraIntrinsics, pose: PosedImage,
                  resolution=None) -> DepthMap:
    """Nearest-hit z-depth per pixel; pixels whose ray misses the mesh are invalid."""
    hits = camera_hits(accel, intr, pose, resolution)
    return DepthMap(np.where(hits.hit, hits.depth, 0.0), hits.hit)
