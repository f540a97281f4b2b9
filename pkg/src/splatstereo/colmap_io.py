"""COLMAP sparse-model parsing and pinhole camera geometry.

Only ``cameras`` and ``images`` are read; ``points3D`` is never touched and the
2D keypoint observations stored in ``images`` are skipped.  Distortion
parameters are kept on :class:`CameraIntrinsics` but all geometry here is
pure pinhole, which is what undistorted COLMAP output needs.

Pixel conventions: continuous image coordinates put the centre of integer
pixel ``(i, j)`` at ``(i + 0.5, j + 0.5)``.  :func:`project` returns continuous
coordinates; :func:`camera_ray` takes pixel indices by default and adds the
half-pixel offset itself.
"""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import MalformedRecord, MissingFile, NonFiniteInput, UnknownCameraModel

logger = logging.getLogger(__name__)

DEFAULT_PRINCIPAL_POINT_TOLERANCE = 0.02


class CameraModel(enum.Enum):
    SIMPLE_PINHOLE = 0
    PINHOLE = 1
    SIMPLE_RADIAL = 2
    OPENCV = 4

    @property
    def num_params(self) -> int:
        return _NUM_PARAMS[self]

    @property
    def num_distortion(self) -> int:
        return _NUM_DISTORTION[self]


_NUM_PARAMS = {
    CameraModel.SIMPLE_PINHOLE: 3,
    CameraModel.PINHOLE: 4,
    CameraModel.SIMPLE_RADIAL: 4,
    CameraModel.OPENCV: 8,
}
_NUM_DISTORTION = {
    CameraModel.SIMPLE_PINHOLE: 0,
    CameraModel.PINHOLE: 0,
    CameraModel.SIMPLE_RADIAL: 1,
    CameraModel.OPENCV: 4,
}


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model: CameraModel
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple[float, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.camera_id}: image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"camera {self.camera_id}: focal lengths must be positive")
        if len(self.distortion) != self.model.num_distortion:
            raise ValueError(
                f"camera {self.camera_id}: {self.model.name} takes "
                f"{self.model.num_distortion} distortion coefficients, got {len(self.distortion)}"
            )

    @classmethod
    def from_params(cls, camera_id, model, width, height, params):
        p = [float(x) for x in params]
        if len(p) != model.num_params:
            raise ValueError(f"{model.name} expects {model.num_params} params, got {len(p)}")
        if model in (CameraModel.SIMPLE_PINHOLE, CameraModel.SIMPLE_RADIAL):
            fx = fy = p[0]
            cx, cy = p[1], p[2]
            dist = tuple(p[3:])
        else:
            fx, fy, cx, cy = p[:4]
            dist = tuple(p[4:])
        return cls(camera_id, model, int(width), int(height), fx, fy, cx, cy, dist)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    def scaled(self, width: int, height: int) -> CameraIntrinsics:
        """Intrinsics for the same camera rendered at another resolution."""
        if (width, height) == (self.width, self.height):
            return self
        sx = width / self.width
        sy = height / self.height
        return replace(
            self, width=int(width), height=int(height),
            fx=self.fx * sx, fy=self.fy * sy, cx=self.cx * sx, cy=self.cy * sy,
        )


def qvec2rotmat(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def normalize_quaternion(q) -> tuple[float, float, float, float]:
    q = [float(c) for c in q]
    n = math.sqrt(sum(c * c for c in q))
    if not math.isfinite(n) or n == 0.0:
        raise ValueError("quaternion has zero or non-finite norm")
    return tuple(c / n for c in q)


@dataclass(frozen=True)
class PosedImage:
    """A registered image; ``rotation``/``translation`` map world to camera."""

    image_id: int
    camera_id: int
    rotation: tuple[float, float, float, float]
    translation: tuple[float, float, float]
    name: str

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.rotation))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"image {self.image_id}: quaternion norm {n} is not 1")

    @property
    def R(self) -> np.ndarray:
        return qvec2rotmat(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t


@dataclass(frozen=True)
class SceneModel:
    cameras: dict[int, CameraIntrinsics] = field(default_factory=dict)
    images: dict[int, PosedImage] = field(default_factory=dict)

    def __post_init__(self):
        names = set()
        for img in self.images.values():
            if img.camera_id not in self.cameras:
                raise ValueError(f"image {img.image_id} references unknown camera {img.camera_id}")
            if img.name in names:
                raise ValueError(f"duplicate image name {img.name!r}")
            names.add(img.name)

    def intrinsics_for(self, image_id: int) -> CameraIntrinsics:
        return self.cameras[self.images[image_id].camera_id]

    def image_by_name(self, name: str) -> PosedImage:
        for img in self.images.values():
            if img.name == name:
                return img
        raise KeyError(name)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class PrincipalPointWarning:
    camera_id: int
    width: int
    height: int
    cx: float
    cy: float
    offset_x: float
    offset_y: float
    tolerance_fraction: float

    @property
    def message(self) -> str:
        return (
            f"camera {self.camera_id}: principal point ({self.cx:.2f}, {self.cy:.2f}) is off-centre "
            f"by ({self.offset_x:+.2f}, {self.offset_y:+.2f}) px for a {self.width}x{self.height} image "
            f"(tolerance {self.tolerance_fraction:g} of the image size)"
        )


# --------------------------------------------------------------------------- text

def _data_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            yield lineno, raw.rstrip("\r\n")


def _camera_from_fields(path, where, camera_id, model_name, width, height, params):
    try:
        model = CameraModel[model_name] if isinstance(model_name, str) else CameraModel(model_name)
    except (KeyError, ValueError):
        raise UnknownCameraModel(camera_id, model_name) from None
    try:
        return CameraIntrinsics.from_params(camera_id, model, width, height, params)
    except ValueError as exc:
        raise MalformedRecord(path, where, str(exc)) from None


def read_cameras_text(path) -> dict[int, CameraIntrinsics]:
    cameras = {}
    for lineno, line in _data_lines(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        elems = line.split()
        where = f"line {lineno}"
        if len(elems) < 4:
            raise MalformedRecord(path, where, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")
        try:
            camera_id = int(elems[0])
            width, height = int(elems[2]), int(elems[3])
            params = [float(x) for x in elems[4:]]
        except ValueError as exc:
            raise MalformedRecord(path, where, str(exc)) from None
        cameras[camera_id] = _camera_from_fields(path, where, camera_id, elems[1], width, height, params)
    return cameras


def read_images_text(path) -> dict[int, PosedImage]:
    images = {}
    expect_points = False
    for lineno, line in _data_lines(path):
        if expect_points:
            # POINTS2D line, possibly empty
            expect_points = False
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        elems = stripped.split()
        where = f"line {lineno}"
        if len(elems) < 10:
            raise MalformedRecord(path, where, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        try:
            image_id = int(elems[0])
            q = [float(x) for x in elems[1:5]]
            t = tuple(float(x) for x in elems[5:8])
            camera_id = int(elems[8])
        except ValueError as exc:
            raise MalformedRecord(path, where, str(exc)) from None
        images[image_id] = _make_image(path, where, image_id, q, t, camera_id, " ".join(elems[9:]))
        expect_points = True
    return images


def _make_image(path, where, image_id, q, t, camera_id, name):
    try:
        q = normalize_quaternion(q)
    except ValueError as exc:
        raise MalformedRecord(path, where, str(exc)) from None
    if not all(math.isfinite(c) for c in t):
        raise MalformedRecord(path, where, "non-finite translation")
    return PosedImage(image_id, camera_id, q, tuple(t), name)


# ------------------------------------------------------------------------- binary

class _Reader:
    def __init__(self, path):
        self.path = path
        self.buf = Path(path).read_bytes()
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise MalformedRecord(self.path, f"offset {self.pos}", "unexpected end of file")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def cstring(self):
        end = self.buf.find(b"\x00", self.pos)
        if end < 0:
            raise MalformedRecord(self.path, f"offset {self.pos}", "unterminated image name")
        s = self.buf[self.pos:end].decode("utf-8")
        self.pos = end + 1
        return s

    def skip(self, n):
        if self.pos + n > len(self.buf):
            raise MalformedRecord(self.path, f"offset {self.pos}", "unexpected end of file")
        self.pos += n


def read_cameras_binary(path) -> dict[int, CameraIntrinsics]:
    r = _Reader(path)
    cameras = {}
    (count,) = r.unpack("<Q")
    for _ in range(count):
        offset = r.pos
        camera_id, model_id, width, height = r.unpack("<iiQQ")
        try:
            model = CameraModel(model_id)
        except ValueError:
            raise UnknownCameraModel(camera_id, model_id) from None
        params = r.unpack(f"<{model.num_params}d")
        cameras[camera_id] = _camera_from_fields(
            path, f"offset {offset}", camera_id, model, width, height, params
        )
    if r.pos != len(r.buf):
        logger.warning("%s: %d trailing bytes ignored", path, len(r.buf) - r.pos)
    return cameras


def read_images_binary(path) -> dict[int, PosedImage]:
    r = _Reader(path)
    images = {}
    (count,) = r.unpack("<Q")
    for _ in range(count):
        offset = r.pos
        image_id, qw, qx, qy, qz, tx, ty, tz, camera_id = r.unpack("<i4d3di")
        name = r.cstring()
        (num_points,) = r.unpack("<Q")
        r.skip(24 * num_points)  # x, y as f64 + point3D id as i64
        images[image_id] = _make_image(
            path, f"offset {offset}", image_id, (qw, qx, qy, qz), (tx, ty, tz), camera_id, name
        )
    return images


def load_scene_model(directory) -> SceneModel:
    """Read ``cameras`` and ``images`` from a COLMAP sparse model directory.

    Binary files win over text files when both are present.
    """
    directory = Path(directory)
    readers = {
        "cameras": (read_cameras_binary, read_cameras_text),
        "images": (read_images_binary, read_images_text),
    }
    parsed = {}
    for stem, (read_bin, read_txt) in readers.items():
        bin_path, txt_path = directory / f"{stem}.bin", directory / f"{stem}.txt"
        if bin_path.is_file():
            parsed[stem] = read_bin(bin_path)
        elif txt_path.is_file():
            parsed[stem] = read_txt(txt_path)
        else:
            raise MissingFile(f"no {stem}.bin or {stem}.txt in {directory}")

    cameras, images = parsed["cameras"], parsed["images"]
    seen = {}
    for img in images.values():
        if img.camera_id not in cameras:
            raise MalformedRecord(directory / "images", f"image {img.image_id}",
                                  f"unknown camera id {img.camera_id}")
        if img.name in seen:
            raise MalformedRecord(directory / "images", f"image {img.image_id}",
                                  f"name {img.name!r} already used by image {seen[img.name]}")
        seen[img.name] = img.image_id
    return SceneModel(cameras=cameras, images=images)


# ----------------------------------------------------------------------- geometry

def validate_principal_point(model: SceneModel,
                             tolerance_fraction: float = DEFAULT_PRINCIPAL_POINT_TOLERANCE):
    """Flag cameras whose principal point is not at the image centre.

    A camera is reported when ``|cx - W/2| > tol * W`` or ``|cy - H/2| > tol * H``.
    """
    if not 0 < tolerance_fraction <= 0.5:
        raise ValueError("tolerance_fraction must lie in (0, 0.5]")
    warnings = []
    for cam_id in sorted(model.cameras):
        cam = model.cameras[cam_id]
        dx = cam.cx - cam.width / 2.0
        dy = cam.cy - cam.height / 2.0
        if abs(dx) > tolerance_fraction * cam.width or abs(dy) > tolerance_fraction * cam.height:
            warnings.append(PrincipalPointWarning(
                cam_id, cam.width, cam.height, cam.cx, cam.cy, dx, dy, tolerance_fraction))
    return warnings


def camera_ray(intr: CameraIntrinsics, pose: PosedImage, pixel, center_offset: float = 0.5) -> Ray:
    """World-space ray through ``pixel``.

    ``pixel`` is a pixel index by default, so the ray passes through its centre.
    Pass ``center_offset=0`` to trace through continuous image coordinates,
    e.g. the output of :func:`project`.
    """
    u, v = float(pixel[0]), float(pixel[1])
    if not (math.isfinite(u) and math.isfinite(v)):
        raise NonFiniteInput(f"pixel {pixel!r} is not finite")
    d_cam = np.array([(u + center_offset - intr.cx) / intr.fx,
                      (v + center_offset - intr.cy) / intr.fy,
                      1.0])
    R = pose.R
    d = R.T @ d_cam
    return Ray(origin=-R.T @ pose.t, direction=d / np.linalg.norm(d))


def pixel_rays(intr: CameraIntrinsics, pose: PosedImage):
    """Ray origins and unit directions for every pixel centre, row-major (H*W, 3)."""
    R = pose.R
    xs = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
    ys = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
    gx, gy = np.meshgrid(xs, ys)
    d_cam = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)], axis=1)
    d = d_cam @ R  # == (R.T @ d_cam.T).T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    origins = np.broadcast_to(-R.T @ pose.t, d.shape)
    # camera-frame z of a unit world direction, used to turn hit distance into z-depth
    z_per_t = 1.0 / np.linalg.norm(d_cam, axis=1)
    return origins, d, z_per_t


def project(intr: CameraIntrinsics, pose: PosedImage, point):
    """Project a world point to ``(u, v, z_depth)`` or ``None`` when not visible."""
    p = pose.R @ np.asarray(point, dtype=np.float64) + pose.t
    z = p[2]
    if not z > 0:
        return None
    u = intr.fx * p[0] / z + intr.cx
    v = intr.fy * p[1] / z + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return float(u), float(v), float(z)


def project_points(intr: CameraIntrinsics, pose: PosedImage, points: np.ndarray):
    """Vectorised :func:`project`: returns ``(uv (N,2), z (N,), visible (N,))``."""
    p = np.asarray(points, dtype=np.float64) @ pose.R.T + pose.t
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * p[:, 0] / z + intr.cx
        v = intr.fy * p[:, 1] / z + intr.cy
    visible = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    return np.stack([u, v], axis=1), z, visible
