"""CPU rendering of Gaussian-splat scenes.

Splats are projected to 2D Gaussians (EWA splatting with the local affine
approximation of the perspective map), sorted once per view by camera-space
depth, and composited front to back per pixel::

    C = sum_i c_i a_i T_i,    T_i = prod_{j<i} (1 - a_j)

with ``a_i = opacity_i * exp(-0.5 d^T cov2d^-1 d)``.  Depth is composited the
same way with ``c_i`` replaced by the splat's z-depth and then divided by the
accumulated alpha.  Footprint culling (3 sigma per axis), the 1/255 alpha
floor, the 0.99 alpha ceiling and the 1e-4 transmittance cutoff follow the
usual GPU rasterizer conventions.

Only the degree-0 spherical-harmonic colour is used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .colmap_io import CameraIntrinsics, PosedImage
from .errors import MissingProperty, UnsortedInput
from .mesh.ply import read_ply
from .raycast import raycast_depth, resolve_intrinsics  # noqa: F401  (re-exported)
from .rasters import AlphaMap, DepthMap

logger = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
TRANSMITTANCE_MIN = 1e-4
COV2D_DILATION = 0.3
FOOTPRINT_SIGMA = 3.0
NEAR_CLIP = 0.2
DEFAULT_VALIDITY_THRESHOLD = 0.5


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) wxyz unit quaternions to (N, 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=1)


@dataclass(frozen=True)
class Splat:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray


@dataclass(eq=False)
class SplatScene:
    """Struct-of-arrays splat storage with activations already applied."""

    means: np.ndarray      # (N, 3)
    scales: np.ndarray     # (N, 3) standard deviations
    rotations: np.ndarray  # (N, 4) unit quaternions, wxyz
    opacities: np.ndarray  # (N,)
    colors: np.ndarray     # (N, 3) in [0, 1]

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        if np.any(self.scales <= 0):
            raise ValueError("splat scales must be positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValueError("splat opacities must lie in [0, 1]")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1) > 1e-6):
            raise ValueError("splat rotations must be unit quaternions")

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i) -> Splat:
        return Splat(self.means[i], self.scales[i], self.rotations[i], float(self.opacities[i]),
                     self.colors[i])

    @classmethod
    def from_splats(cls, splats) -> SplatScene:
        splats = list(splats)
        return cls(np.array([s.mean for s in splats]), np.array([s.scale for s in splats]),
                   np.array([s.rotation for s in splats]), np.array([s.opacity for s in splats]),
                   np.array([s.color for s in splats]))

    def covariances(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotations)
        M = R * self.scales[:, None, :]
        return M @ np.transpose(M, (0, 2, 1))


def load_splats(path) -> SplatScene:
    """Load a splat PLY in the common 3DGS training-output layout."""
    elements, _ = read_ply(path)
    vert = elements.get("vertex")
    if vert is None:
        raise MissingProperty("vertex")
    names = ["x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2"]
    for name in names:
        if name not in vert:
            raise MissingProperty(name)
    col = {k: np.asarray(vert[k], dtype=np.float64) for k in names}
    means = np.stack([col["x"], col["y"], col["z"]], axis=1)
    scales = np.exp(np.stack([col[f"scale_{i}"] for i in range(3)], axis=1))
    rot = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    norm = np.linalg.norm(rot, axis=1, keepdims=True)
    bad = (norm[:, 0] == 0) | ~np.isfinite(norm[:, 0])
    if bad.any():
        logger.warning("%d splats with degenerate rotation set to identity", int(bad.sum()))
        rot[bad] = (1.0, 0.0, 0.0, 0.0)
        norm[bad] = 1.0
    colors = np.clip(0.5 + SH_C0 * np.stack([col[f"f_dc_{i}"] for i in range(3)], axis=1), 0.0, 1.0)
    return SplatScene(means, scales, rot / norm, _sigmoid(col["opacity"]), colors)


# ------------------------------------------------------------------ projection

@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray  # (u, v) continuous pixel coordinates
    cov2d: np.ndarray   # (2, 2), dilation included
    depth: float
    opacity: float = 1.0
    color: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def alpha_at(self, pixel) -> float:
        d = np.asarray(pixel, dtype=np.float64) - self.mean2d
        a, b, c = _conic(self.cov2d)
        return self.opacity * math.exp(-0.5 * (a * d[0] * d[0] + 2.0 * b * d[0] * d[1] + c * d[1] * d[1]))

    def covers(self, pixel, sigma=FOOTPRINT_SIGMA) -> bool:
        d = np.abs(np.asarray(pixel, dtype=np.float64) - self.mean2d)
        return d[0] <= sigma * math.sqrt(self.cov2d[0, 0]) and d[1] <= sigma * math.sqrt(self.cov2d[1, 1])


def _conic(cov):
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    return cov[1, 1] / det, -cov[0, 1] / det, cov[0, 0] / det


@dataclass(eq=False)
class ProjectedSplats:
    """Vectorised projection result; rows where ``visible`` is False are unusable."""

    mean2d: np.ndarray   # (N, 2)
    cov2d: np.ndarray    # (N, 2, 2)
    depth: np.ndarray    # (N,)
    visible: np.ndarray  # (N,)

    def __getitem__(self, i):
        return self.mean2d[i], self.cov2d[i], self.depth[i]


def project_splats(scene: SplatScene, intr: CameraIntrinsics, pose: PosedImage,
                   near_clip: float = NEAR_CLIP, dilation: float = COV2D_DILATION) -> ProjectedSplats:
    W = pose.R
    p = scene.means @ W.T + pose.t
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    visible = z > near_clip
    zs = np.where(visible, z, 1.0)
    J = np.zeros((len(p), 2, 3))
    J[:, 0, 0] = intr.fx / zs
    J[:, 0, 2] = -intr.fx * x / (zs * zs)
    J[:, 1, 1] = intr.fy / zs
    J[:, 1, 2] = -intr.fy * y / (zs * zs)
    T = J @ W
    cov = T @ scene.covariances() @ np.transpose(T, (0, 2, 1))
    cov[:, 0, 0] += dilation
    cov[:, 1, 1] += dilation
    mean2d = np.stack([intr.fx * x / zs + intr.cx, intr.fy * y / zs + intr.cy], axis=1)
    return ProjectedSplats(mean2d, cov, z, visible)


def project_splat(splat: Splat, intr: CameraIntrinsics, pose: PosedImage,
                  near_clip: float = NEAR_CLIP, dilation: float = COV2D_DILATION) -> Splat2D | None:
    scene = SplatScene(splat.mean[None], splat.scale[None], splat.rotation[None],
                       [splat.opacity], splat.color[None])
    proj = project_splats(scene, intr, pose, near_clip, dilation)
    if not proj.visible[0]:
        return None
    return Splat2D(proj.mean2d[0], proj.cov2d[0], float(proj.depth[0]), float(splat.opacity),
                   np.asarray(splat.color, dtype=np.float64))


# ----------------------------------------------------------------- compositing

def composite_pixel(splats, pixel, alpha_min: float = ALPHA_MIN, alpha_max: float | None = ALPHA_MAX,
                    transmittance_min: float = TRANSMITTANCE_MIN, check_sorted: bool = False):
    """Front-to-back compositing of already culled, depth-sorted 2D splats.

    Returns ``(color, depth, alpha)`` where ``depth`` is the raw accumulation
    ``sum z_i a_i T_i`` (not divided by alpha).  Pass ``alpha_max=None`` to
    disable the ceiling and ``transmittance_min=0`` to disable early exit.
    """
    if check_sorted:
        depths = [s.depth for s in splats]
        if any(b < a for a, b in zip(depths, depths[1:])):
            raise UnsortedInput("splats must be sorted front to back")
    color = np.zeros(3)
    depth = 0.0
    alpha = 0.0
    T = 1.0
    for s in splats:
        a = s.alpha_at(pixel)
        if a < alpha_min:
            continue
        if alpha_max is not None:
            a = min(alpha_max, a)
        w = a * T
        color += w * np.asarray(s.color, dtype=np.float64)
        depth += w * s.depth
        alpha += w
        T *= 1.0 - a
        if T < transmittance_min:
            break
    return color, depth, alpha


@njit(parallel=True, cache=True, error_model="numpy")
def _rasterize(height, width, mx, my, ca, cb, cc, rx, ry, opacity, color, z,
               alpha_min, alpha_max, t_min):
    n = mx.shape[0]
    img = np.zeros((height, width, 3))
    dep = np.zeros((height, width))
    acc = np.zeros((height, width))
    trans = np.ones((height, width))
    for y in prange(height):
        py = y + 0.5
        done = np.zeros(width, np.bool_)
        for k in range(n):
            dy = py - my[k]
            if abs(dy) > ry[k]:
                continue
            x0 = max(0, int(math.floor(mx[k] - rx[k] - 0.5)))
            x1 = min(width - 1, int(math.ceil(mx[k] + rx[k] - 0.5)))
            for x in range(x0, x1 + 1):
                if done[x]:
                    continue
                dx = x + 0.5 - mx[k]
                if abs(dx) > rx[k]:
                    continue
                a = opacity[k] * math.exp(-0.5 * (ca[k] * dx * dx + 2.0 * cb[k] * dx * dy + cc[k] * dy * dy))
                if a < alpha_min:
                    continue
                if a > alpha_max:
                    a = alpha_max
                T = trans[y, x]
                w = a * T
                img[y, x, 0] += w * color[k, 0]
                img[y, x, 1] += w * color[k, 1]
                img[y, x, 2] += w * color[k, 2]
                dep[y, x] += w * z[k]
                acc[y, x] += w
                T *= 1.0 - a
                trans[y, x] = T
                if T < t_min:
                    done[x] = True
    return img, dep, acc, trans


@dataclass(eq=False)
class SplatRender:
    image: np.ndarray
    depth: DepthMap
    alpha: AlphaMap

    def __iter__(self):
        return iter((self.image, self.depth, self.alpha))


def render_splats(scene: SplatScene, intr: CameraIntrinsics, pose: PosedImage, resolution=None,
                  validity_threshold: float = DEFAULT_VALIDITY_THRESHOLD,
                  near_clip: float = NEAR_CLIP, alpha_max: float | None = ALPHA_MAX,
                  transmittance_min: float = TRANSMITTANCE_MIN) -> SplatRender:
    """Render colour, alpha-normalised depth and accumulated alpha.

    Depth is valid where ``alpha > validity_threshold``.  Unpacks as
    ``image, depth, alpha``.
    """
    if len(scene) == 0:
        raise ValueError("cannot render an empty splat scene")
    intr = resolve_intrinsics(intr, resolution)
    proj = project_splats(scene, intr, pose, near_clip)
    idx = np.flatnonzero(proj.visible)
    # global front-to-back order; stable so equal depths keep splat-index order
    idx = idx[np.argsort(proj.depth[idx], kind="stable")]
    cov = proj.cov2d[idx]
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    img, dep, acc, _ = _rasterize(
        intr.height, intr.width,
        np.ascontiguousarray(proj.mean2d[idx, 0]), np.ascontiguousarray(proj.mean2d[idx, 1]),
        cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det,
        FOOTPRINT_SIGMA * np.sqrt(cov[:, 0, 0]), FOOTPRINT_SIGMA * np.sqrt(cov[:, 1, 1]),
        np.ascontiguousarray(scene.opacities[idx]), np.ascontiguousarray(scene.colors[idx]),
        np.ascontiguousarray(proj.depth[idx]),
        ALPHA_MIN, np.inf if alpha_max is None else float(alpha_max), float(transmittance_min),
    )
    acc = np.clip(acc, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm_depth = np.where(acc > 0, dep / acc, 0.0)
    depth = DepthMap(norm_depth, acc > validity_threshold, unnormalized=dep)
    return SplatRender(img, depth, AlphaMap(acc))


def alpha_filter_mask(alpha_map, threshold: float) -> np.ndarray:
    """True where accumulated alpha reaches ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    values = alpha_map.values if isinstance(alpha_map, AlphaMap) else np.asarray(alpha_map)
    return values >= threshold
