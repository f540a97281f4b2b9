"""Per-vertex observability, heatmaps and camera ranking.

A vertex is observed by a camera when it projects inside the image with
positive depth, nothing on the mesh blocks the segment from the camera centre
to the vertex, and the view direction is within ``grazing_limit_deg`` of the
vertex normal.  Pixel observability is the barycentric interpolation of the
vertex counts at the first surface hit, and a camera's score is the sum of
its valid pixels.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from matplotlib import colormaps

from .colmap_io import CameraIntrinsics, PosedImage, SceneModel, project_points
from .errors import EmptyModel, SizeMismatch
from .formats import atomic_write_bytes
from .mesh.bvh import AcceleratedMesh, default_epsilon, occluded_segments
from .mesh.geometry import TriangleMesh
from .raycast import camera_hits
from .rasters import ObservabilityMap

logger = logging.getLogger(__name__)

DEFAULT_GRAZING_LIMIT_DEG = 80.0
DEFAULT_TOP_K = 5
HEATMAP_COLORMAP = "viridis"


@dataclass(eq=False)
class ObservabilityField:
    counts: np.ndarray
    max_possible: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.size and (self.counts.min() < 0 or self.counts.max() > self.max_possible):
            raise ValueError("counts must lie in [0, max_possible]")

    def normalized(self) -> np.ndarray:
        if self.max_possible <= 0:
            return np.zeros(len(self.counts))
        return self.counts / float(self.max_possible)


@dataclass(frozen=True)
class CameraScore:
    image_id: int
    score: float
    name: str = ""


def _camera_visibility(accel, normals, intr, pose, limit_deg, epsilon):
    verts = accel.mesh.vertices
    _, _, in_view = project_points(intr, pose, verts)
    center = pose.center
    to_cam = center - verts
    dist = np.linalg.norm(to_cam, axis=1)
    ok = in_view & (dist > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.einsum("ij,ij->i", normals, to_cam) / dist
    angle = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    has_normal = np.any(normals != 0, axis=1)
    ok &= ~has_normal | (angle <= limit_deg)
    idx = np.flatnonzero(ok)
    if idx.size:
        blocked = occluded_segments(accel, center, verts[idx], epsilon)
        ok[idx[blocked]] = False
    return ok


def vertex_observability(accel: AcceleratedMesh, model: SceneModel,
                         grazing_limit_deg: float = DEFAULT_GRAZING_LIMIT_DEG,
                         epsilon: float | None = None) -> ObservabilityField:
    """Count, for each vertex, the cameras with an unoccluded non-grazing view.

    ``epsilon`` defaults to 1e-4 of the mesh bounding-box diagonal.  Vertices
    without incident faces have no normal and skip the grazing test.
    """
    if not model.images:
        raise EmptyModel("scene model has no images")
    if not 0 < grazing_limit_deg <= 90:
        raise ValueError("grazing_limit_deg must lie in (0, 90]")
    eps = default_epsilon(accel) if epsilon is None else float(epsilon)
    normals = accel.mesh.vertex_normals()
    counts = np.zeros(accel.mesh.num_vertices, dtype=np.int64)
    for image_id in sorted(model.images):
        pose = model.images[image_id]
        intr = model.cameras[pose.camera_id]
        counts += _camera_visibility(accel, normals, intr, pose, grazing_limit_deg, eps)
    return ObservabilityField(counts, len(model.images))


def export_heatmap(mesh: TriangleMesh, field: ObservabilityField,
                   colormap: str = HEATMAP_COLORMAP) -> TriangleMesh:
    """Copy of ``mesh`` with uchar ``red``/``green``/``blue`` vertex colours.

    Colours follow a perceptually ordered colormap of ``counts / max_possible``,
    so better-observed vertices are brighter.
    """
    if len(field.counts) != mesh.num_vertices:
        raise SizeMismatch(f"field has {len(field.counts)} counts for {mesh.num_vertices} vertices")
    rgba = colormaps[colormap](field.normalized())
    rgb = np.round(np.asarray(rgba)[:, :3] * 255.0).astype(np.uint8)
    attrs = {k: v for k, v in mesh.attributes.items() if k not in ("red", "green", "blue")}
    attrs.update(red=rgb[:, 0].copy(), green=rgb[:, 1].copy(), blue=rgb[:, 2].copy())
    return TriangleMesh(mesh.vertices, mesh.faces, attrs)


def render_observability(accel: AcceleratedMesh, field: ObservabilityField,
                         intr: CameraIntrinsics, pose: PosedImage, resolution=None) -> ObservabilityMap:
    if len(field.counts) != accel.mesh.num_vertices:
        raise SizeMismatch("field does not match the mesh")
    hits = camera_hits(accel, intr, pose, resolution)
    valid = hits.hit
    values = np.zeros(valid.shape)
    f = hits.face[valid]
    u = hits.u[valid]
    v = hits.v[valid]
    corners = accel.mesh.faces[f]
    c = field.counts.astype(np.float64)
    values[valid] = (1.0 - u - v) * c[corners[:, 0]] + u * c[corners[:, 1]] + v * c[corners[:, 2]]
    return ObservabilityMap(values, valid)


def _scoring_resolution(intr: CameraIntrinsics, downscale: float):
    if downscale == 1.0:
        return None
    if downscale <= 0:
        raise ValueError("downscale must be positive")
    return max(1, round(intr.width / downscale)), max(1, round(intr.height / downscale))


def score_cameras(accel: AcceleratedMesh, field: ObservabilityField, model: SceneModel,
                  resolution=None, downscale: float = 1.0) -> list[CameraScore]:
    """Rank cameras by summed pixel observability, best first.

    Pixels whose ray misses the mesh contribute nothing.  Sums are exactly
    rounded (``math.fsum``), so scores do not depend on evaluation order.
    Ties go to the lower ``image_id``.
    """
    if not model.images:
        raise EmptyModel("scene model has no images")
    scores = []
    for image_id in sorted(model.images):
        pose = model.images[image_id]
        intr = model.cameras[pose.camera_id]
        res = resolution if resolution is not None else _scoring_resolution(intr, downscale)
        obs = render_observability(accel, field, intr, pose, res)
        scores.append(CameraScore(image_id, math.fsum(obs.values[obs.valid].tolist()), pose.name))
    scores.sort(key=lambda s: (-s.score, s.image_id))
    return scores


def select_top_k(scores: list[CameraScore], k: int = DEFAULT_TOP_K) -> list[int]:
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = sorted(scores, key=lambda s: (-s.score, s.image_id))
    return [s.image_id for s in ranked[:k]]


def ranking_csv(scores: list[CameraScore]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "name", "score"])
    for s in scores:
        writer.writerow([s.image_id, s.name, repr(float(s.score))])
    return buf.getvalue()


def write_ranking_csv(path, scores: list[CameraScore]) -> None:
    atomic_write_bytes(path, ranking_csv(scores).encode("utf-8"))
