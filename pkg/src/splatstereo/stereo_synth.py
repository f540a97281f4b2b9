"""Virtual stereo rigs, depth/disparity conversion and dataset writing.

A rig shares the left camera's intrinsics and rotation; the right camera sits
``baseline`` world units along the left camera's +x axis, so disparity and
depth are related by ``d = f * b / z``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .colmap_io import CameraIntrinsics, PosedImage, SceneModel
from .errors import NonPositiveBaseline, RenderFailure, SizeMismatch
from .formats import atomic_write_bytes, write_color_png, write_mask_png, write_pfm
from .mesh.bvh import AcceleratedMesh
from .raycast import camera_hits, resolve_intrinsics
from .rasters import DepthMap, DisparityMap
from .splat_render import DEFAULT_VALIDITY_THRESHOLD, SplatScene, render_splats

logger = logging.getLogger(__name__)

DEFAULT_NOC_TOLERANCE = 1.0


@dataclass(frozen=True)
class StereoRig:
    left: PosedImage
    right: PosedImage
    baseline: float
    intrinsics: CameraIntrinsics

    @property
    def focal(self) -> float:
        return self.intrinsics.fx


def make_right_camera(left: PosedImage, baseline: float) -> PosedImage:
    """Right camera of a rectified rig: same rotation, centre shifted by +baseline along x."""
    if not baseline > 0:
        raise NonPositiveBaseline(f"baseline must be positive, got {baseline}")
    tx, ty, tz = left.translation
    return PosedImage(left.image_id, left.camera_id, left.rotation, (tx - baseline, ty, tz),
                      f"{left.name}@right")


def make_rig(left: PosedImage, intr: CameraIntrinsics, baseline: float) -> StereoRig:
    return StereoRig(left, make_right_camera(left, baseline), float(baseline), intr)


def depth_to_disparity(depth: DepthMap, f: float, b: float) -> DisparityMap:
    if not (f > 0 and b > 0):
        raise ValueError("focal length and baseline must be positive")
    valid = depth.valid & np.isfinite(depth.values) & (depth.values > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(valid, (f * b) / depth.values, 0.0)
    return DisparityMap(d, valid)


def disparity_to_depth(disp: DisparityMap, f: float, b: float) -> DepthMap:
    if not (f > 0 and b > 0):
        raise ValueError("focal length and baseline must be positive")
    valid = disp.valid & np.isfinite(disp.values) & (disp.values > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(valid, (f * b) / disp.values, 0.0)
    return DepthMap(z, valid)


def occlusion_mask(left_disp: DisparityMap, right_disp: DisparityMap,
                   tolerance_px: float = DEFAULT_NOC_TOLERANCE) -> np.ndarray:
    """Left-right consistency: True where the left pixel is visible in the right view.

    Left pixel ``(u, v)`` with disparity ``d`` is matched to the nearest right
    pixel ``round(u - d)`` on the same row.
    """
    if left_disp.shape != right_disp.shape:
        raise SizeMismatch(f"disparity maps differ in shape: {left_disp.shape} vs {right_disp.shape}")
    if not tolerance_px > 0:
        raise ValueError("tolerance_px must be positive")
    h, w = left_disp.shape
    dl = np.where(left_disp.valid, left_disp.values, 0.0)
    u = np.arange(w)[None, :]
    xr = np.floor(u - dl + 0.5).astype(np.int64)
    inside = left_disp.valid & (xr >= 0) & (xr < w)
    xr_c = np.clip(xr, 0, w - 1)
    rows = np.arange(h)[:, None]
    dr = right_disp.values[rows, xr_c]
    rvalid = right_disp.valid[rows, xr_c]
    return inside & rvalid & (np.abs(dl - dr) <= tolerance_px)


def disparity_histogram(disp: DisparityMap, bin_width_px: float) -> list[tuple[float, int]]:
    """Counts of valid disparities in bins ``[k*w, (k+1)*w)``; empty bins omitted."""
    if not bin_width_px > 0:
        raise ValueError("bin_width_px must be positive")
    vals = disp.values[disp.valid]
    if vals.size == 0:
        return []
    k = np.floor(vals / bin_width_px).astype(np.int64)
    bins, counts = np.unique(k, return_counts=True)
    return [(float(b * bin_width_px), int(c)) for b, c in zip(bins, counts)]


def suggest_baseline(depth: DepthMap, f: float, target_median_disparity: float) -> float:
    """Baseline that puts the median valid disparity at ``target_median_disparity``."""
    vals = depth.values[depth.valid]
    if vals.size == 0:
        raise ValueError("depth map has no valid pixels")
    return float(target_median_disparity * np.median(vals) / f)


# ---------------------------------------------------------------------- dataset

@dataclass
class ManifestEntry:
    scene: str
    image_id: int
    image_name: str
    baseline: float
    focal_length: float
    left: str
    right: str
    disparity: str
    valid: str
    noc: str
    alpha: str | None = None


@dataclass
class DatasetManifest:
    scene: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps([asdict(e) for e in self.entries], indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, scene: str | None = None) -> DatasetManifest:
        rows = json.loads(text)
        entries = [ManifestEntry(**row) for row in rows]
        name = scene if scene is not None else (entries[0].scene if entries else "")
        return cls(name, entries)

    @classmethod
    def load(cls, path) -> DatasetManifest:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _shade(accel: AcceleratedMesh, hits, pose: PosedImage) -> np.ndarray:
    """Headlight shading |n . view| as a grey RGB image, black where nothing is hit."""
    shade = np.zeros(hits.face.shape)
    mask = hits.hit
    n = np.cross(accel.e1[hits.face[mask]], accel.e2[hits.face[mask]])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    # view direction is the optical axis rotated to world; close enough for a preview
    view = pose.R[2]
    shade[mask] = np.abs(n @ view)
    return np.repeat(shade[:, :, None], 3, axis=2)


@dataclass(eq=False)
class _View:
    image: np.ndarray
    depth: DepthMap
    alpha: np.ndarray | None = None


def _render_view(source, color_scene, intr, pose, validity_threshold):
    if isinstance(source, SplatScene):
        img, depth, alpha = render_splats(source, intr, pose, validity_threshold=validity_threshold)
        return _View(img, depth, alpha.values)
    hits = camera_hits(source, intr, pose)
    depth = DepthMap(np.where(hits.hit, hits.depth, 0.0), hits.hit)
    if color_scene is not None:
        img = render_splats(color_scene, intr, pose, validity_threshold=validity_threshold).image
    else:
        img = _shade(source, hits, pose)
    return _View(img, depth)


def _stem(name: str) -> str:
    stem = Path(name).stem or "image"
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", stem)


def synth_dataset(source, model: SceneModel, selected_image_ids, baselines, out_dir,
                  scene_name: str = "scene", resolution=None, color_scene: SplatScene | None = None,
                  validity_threshold: float = DEFAULT_VALIDITY_THRESHOLD,
                  noc_tolerance: float = DEFAULT_NOC_TOLERANCE) -> DatasetManifest:
    """Render one rectified pair per (camera, baseline) and write the dataset.

    ``source`` is an :class:`AcceleratedMesh` (depth by ray casting) or a
    :class:`SplatScene` (colour and alpha-normalised depth from splats).  With a
    mesh source, ``color_scene`` supplies splat colour renders; otherwise the
    images are shaded previews of the mesh.

    Layout under ``out_dir``: ``left/ right/`` PNG images, ``disp/`` PFM
    disparity (invalid pixels stored as 0), ``valid/`` and ``noc/`` 8-bit
    masks, ``alpha/`` PFM (splat source only) and ``manifest.json``.
    """
    baselines = [float(b) for b in baselines]
    if not baselines:
        raise ValueError("at least one baseline is required")
    for b in baselines:
        if not b > 0:
            raise NonPositiveBaseline(f"baseline must be positive, got {b}")
    missing = [i for i in selected_image_ids if i not in model.images]
    if missing:
        raise KeyError(f"image ids not in the model: {missing}")

    out = Path(out_dir)
    manifest = DatasetManifest(scene_name)
    for image_id in selected_image_ids:
        left = model.images[image_id]
        intr = resolve_intrinsics(model.cameras[left.camera_id], resolution)
        stem = f"{image_id:06d}_{_stem(left.name)}"
        try:
            lview = _render_view(source, color_scene, intr, left, validity_threshold)
        except Exception as exc:
            raise RenderFailure(image_id, exc) from exc
        if not lview.depth.valid.any():
            raise RenderFailure(image_id, "no valid depth in the left view")
        for j, b in enumerate(baselines):
            rig = make_rig(left, intr, b)
            try:
                rview = _render_view(source, color_scene, intr, rig.right, validity_threshold)
            except Exception as exc:
                raise RenderFailure(image_id, exc) from exc
            ldisp = depth_to_disparity(lview.depth, rig.focal, b)
            rdisp = depth_to_disparity(rview.depth, rig.focal, b)
            noc = occlusion_mask(ldisp, rdisp, noc_tolerance)

            key = f"{stem}_b{j}"
            rel = {
                "left": f"left/{key}.png",
                "right": f"right/{key}.png",
                "disparity": f"disp/{key}.pfm",
                "valid": f"valid/{key}.png",
                "noc": f"noc/{key}.png",
            }
            write_color_png(out / rel["left"], lview.image)
            write_color_png(out / rel["right"], rview.image)
            write_pfm(out / rel["disparity"], ldisp.filled(0.0).astype(np.float32))
            write_mask_png(out / rel["valid"], ldisp.valid)
            write_mask_png(out / rel["noc"], noc)
            alpha_rel = None
            if lview.alpha is not None:
                alpha_rel = f"alpha/{key}.pfm"
                write_pfm(out / alpha_rel, lview.alpha.astype(np.float32))
            manifest.entries.append(ManifestEntry(
                scene_name, int(image_id), left.name, b, float(rig.focal), alpha=alpha_rel, **rel))
            logger.info("wrote %s (baseline %g, %d valid px)", key, b, int(ldisp.valid.sum()))

    atomic_write_bytes(out / "manifest.json", manifest.to_json().encode("utf-8"))
    return manifest
