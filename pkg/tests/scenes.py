"""Procedural scenes and COLMAP writers shared by the tests."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from splatstereo.colmap_io import CameraIntrinsics, CameraModel, PosedImage, SceneModel
from splatstereo.mesh import TriangleMesh


def rotmat_to_quat(R):
    """wxyz quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def look_at(image_id, center, target, up=(0.0, -1.0, 0.0), camera_id=1, name=None):
    """Pose with +z towards ``target`` and +y roughly along ``up`` (image rows grow downwards)."""
    c = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - c
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross((1.0, 0.0, 0.0), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    q = rotmat_to_quat(R)
    t = -R @ c
    return PosedImage(image_id, camera_id, tuple(float(v) for v in q), tuple(float(v) for v in t),
                      name or f"img_{image_id:03d}.png")


def pinhole(camera_id=1, width=320, height=240, f=300.0, cx=None, cy=None):
    return CameraIntrinsics(camera_id, CameraModel.PINHOLE, width, height, f, f,
                            width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy)


def box(center=(0, 0, 0), half=(1, 1, 1)):
    """Closed axis-aligned box, outward-facing triangles."""
    c = np.asarray(center, dtype=float)
    h = np.broadcast_to(np.asarray(half, dtype=float), (3,))
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    verts = c + corners * h
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces += [(a, b, cc), (a, cc, d)]
    return TriangleMesh(verts, np.array(faces))


def quad(corners):
    """Two-triangle quad from 4 corners in order."""
    return TriangleMesh(np.asarray(corners, dtype=float), np.array([[0, 1, 2], [0, 2, 3]]))


def grid_plane(z=0.0, n=8, size=2.0, center=(0.0, 0.0)):
    """n x n quad grid in the plane z = const, normals along -z."""
    xs = np.linspace(-size / 2, size / 2, n + 1) + center[0]
    ys = np.linspace(-size / 2, size / 2, n + 1) + center[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = (i + 1) * (n + 1) + j
            faces += [(a, b + 1, b), (a, a + 1, b + 1)]
    return TriangleMesh(verts, np.array(faces))


def merge(*meshes):
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.num_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def subdivided_box(n=4, half=1.0):
    """Box with each face split into an n x n grid (more vertices for visibility tests)."""
    parts = []
    lin = np.linspace(-half, half, n + 1)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            A, B = np.meshgrid(lin, lin, indexing="ij")
            pts = np.zeros((A.size, 3))
            others = [a for a in range(3) if a != axis]
            pts[:, axis] = sign * half
            pts[:, others[0]] = A.ravel()
            pts[:, others[1]] = B.ravel()
            faces = []
            for i in range(n):
                for j in range(n):
                    a = i * (n + 1) + j
                    b = (i + 1) * (n + 1) + j
                    faces += [(a, b, b + 1), (a, b + 1, a + 1)]
            faces = np.array(faces)
            tri = pts[faces]
            normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
            flip = normal[:, axis] * sign < 0
            faces[flip] = faces[flip][:, ::-1]
            parts.append(TriangleMesh(pts, faces))
    return merge(*parts)


def toy_scene(width=320, height=240, f=300.0, subdiv=3):
    """Cube plus an occluding wall, watched by six cameras on an arc."""
    cube = subdivided_box(subdiv, 1.0)
    wall = quad([(-0.6, -1.5, -2.2), (0.6, -1.5, -2.2), (0.6, 1.5, -2.2), (-0.6, 1.5, -2.2)])
    mesh = merge(cube, wall)
    cam = pinhole(1, width, height, f)
    images = {}
    for k in range(6):
        ang = np.radians(-150 + 60 * k)
        center = (5.0 * np.sin(ang), -1.0 + 0.4 * k, 5.0 * np.cos(ang))
        images[k + 1] = look_at(k + 1, center, (0.0, 0.0, 0.0))
    return mesh, SceneModel({1: cam}, images)


# ------------------------------------------------------------------ COLMAP writers

_MODEL_ID = {CameraModel.SIMPLE_PINHOLE: 0, CameraModel.PINHOLE: 1, CameraModel.SIMPLE_RADIAL: 2,
             CameraModel.OPENCV: 4}


def camera_params(cam):
    m = cam.model
    if m == CameraModel.SIMPLE_PINHOLE:
        return [cam.fx, cam.cx, cam.cy]
    if m == CameraModel.PINHOLE:
        return [cam.fx, cam.fy, cam.cx, cam.cy]
    if m == CameraModel.SIMPLE_RADIAL:
        return [cam.fx, cam.cx, cam.cy, *cam.distortion]
    return [cam.fx, cam.fy, cam.cx, cam.cy, *cam.distortion]


def write_colmap_text(model, directory, points_per_image=2):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# Camera list with one line of data per camera:", f"# Number of cameras: {len(model.cameras)}"]
    for cid, cam in sorted(model.cameras.items()):
        params = " ".join(repr(float(p)) for p in camera_params(cam))
        lines.append(f"{cid} {cam.model.name} {cam.width} {cam.height} {params}")
    (d / "cameras.txt").write_text("\n".join(lines) + "\n")
    lines = ["# Image list with two lines of data per image:"]
    for iid, img in sorted(model.images.items()):
        q = " ".join(repr(float(v)) for v in img.rotation)
        t = " ".join(repr(float(v)) for v in img.translation)
        lines.append(f"{iid} {q} {t} {img.camera_id} {img.name}")
        lines.append(" ".join(f"{10.5 + k} {20.25 + k} {k if k % 2 else -1}" for k in range(points_per_image)))
    (d / "images.txt").write_text("\n".join(lines) + "\n")


def write_colmap_binary(model, directory, points_per_image=2):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    buf = [struct.pack("<Q", len(model.cameras))]
    for cid, cam in sorted(model.cameras.items()):
        params = camera_params(cam)
        buf.append(struct.pack("<iiQQ", cid, _MODEL_ID[cam.model], cam.width, cam.height))
        buf.append(struct.pack(f"<{len(params)}d", *params))
    (d / "cameras.bin").write_bytes(b"".join(buf))
    buf = [struct.pack("<Q", len(model.images))]
    for iid, img in sorted(model.images.items()):
        buf.append(struct.pack("<i4d3di", iid, *img.rotation, *img.translation, img.camera_id))
        buf.append(img.name.encode() + b"\0")
        buf.append(struct.pack("<Q", points_per_image))
        for k in range(points_per_image):
            buf.append(struct.pack("<ddq", 1.5 * k, 2.5 * k, -1 if k % 2 == 0 else k))
    (d / "images.bin").write_bytes(b"".join(buf))


def splat_plane(z, xlim, ylim, spacing, scale=None, opacity=0.9, color=(0.5, 0.5, 0.5), thickness=1e-3):
    """Flat grid of splats in the plane z = const."""
    from splatstereo.splat_render import SplatScene

    xs = np.arange(xlim[0] + spacing / 2, xlim[1], spacing)
    ys = np.arange(ylim[0] + spacing / 2, ylim[1], spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    n = X.size
    s = spacing if scale is None else scale
    means = np.stack([X.ravel(), Y.ravel(), np.full(n, float(z))], axis=1)
    scales = np.tile([s, s, thickness], (n, 1))
    rots = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return SplatScene(means, scales, rots, np.full(n, opacity), np.tile(color, (n, 1)))


def concat_splats(*scenes):
    from splatstereo.splat_render import SplatScene

    return SplatScene(*(np.concatenate([getattr(s, k) for s in scenes])
                        for k in ("means", "scales", "rotations", "opacities", "colors")))
