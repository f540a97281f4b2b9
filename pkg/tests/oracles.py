"""Independent reference implementations used as test oracles.

These deliberately avoid the package's kernels: exhaustive triangle loops in
plain numpy, naive compositing loops and a union-find.
"""

from __future__ import annotations

import math

import numpy as np

EDGE_TOL = 1e-9
PARALLEL_TOL = 1e-12


def mt_all(tri, o, d):
    """Moller-Trumbore of one ray against every triangle; returns (t, u, v) arrays, t=inf on miss."""
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    n = np.cross(e1, e2)
    area2 = np.sqrt(n[:, 0] ** 2 + n[:, 1] ** 2 + n[:, 2] ** 2)
    dx, dy, dz = d
    px = dy * e2[:, 2] - dz * e2[:, 1]
    py = dz * e2[:, 0] - dx * e2[:, 2]
    pz = dx * e2[:, 1] - dy * e2[:, 0]
    det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
    ok = np.abs(det) > PARALLEL_TOL * area2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        sx = o[0] - v0[:, 0]
        sy = o[1] - v0[:, 1]
        sz = o[2] - v0[:, 2]
        u = (sx * px + sy * py + sz * pz) * inv
        ok &= (u >= -EDGE_TOL) & (u <= 1.0 + EDGE_TOL)
        qx = sy * e1[:, 2] - sz * e1[:, 1]
        qy = sz * e1[:, 0] - sx * e1[:, 2]
        qz = sx * e1[:, 1] - sy * e1[:, 0]
        v = (dx * qx + dy * qy + dz * qz) * inv
        ok &= (v >= -EDGE_TOL) & (u + v <= 1.0 + EDGE_TOL)
        t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
    return np.where(ok, t, np.inf), u, v


def brute_nearest(tri, o, d, t_min=1e-9, t_max=np.inf):
    """Nearest hit with t in (t_min, t_max); ties go to the lower face index."""
    t, u, v = mt_all(tri, o, d)
    cand = (t > t_min) & (t < t_max)
    if not cand.any():
        return np.inf, -1
    tt = np.where(cand, t, np.inf)
    best = tt.min()
    face = int(np.flatnonzero(tt == best)[0])
    return float(best), face


def brute_occluded(tri, a, b, eps):
    d = np.asarray(b, float) - np.asarray(a, float)
    length = math.sqrt(float(d @ d))
    d = d / length
    t, _, _ = mt_all(tri, np.asarray(a, float), d)
    return bool(np.any((t > eps) & (t < length - eps)))


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def brute_visibility(mesh, model, grazing_limit_deg, eps):
    """Count cameras per vertex with explicit loops over cameras and vertices."""
    verts = mesh.vertices
    tri = mesh.vertices[mesh.faces]
    # area-weighted vertex normals, accumulated face by face
    normals = np.zeros_like(verts)
    for f, (a, b, c) in enumerate(mesh.faces):
        n = np.cross(verts[b] - verts[a], verts[c] - verts[a])
        normals[a] += n
        normals[b] += n
        normals[c] += n
    counts = np.zeros(len(verts), dtype=int)
    for image_id in sorted(model.images):
        pose = model.images[image_id]
        cam = model.cameras[pose.camera_id]
        R = quat_to_matrix(pose.rotation)
        t = np.asarray(pose.translation)
        C = -R.T @ t
        for i, p in enumerate(verts):
            pc = R @ p + t
            if pc[2] <= 0:
                continue
            u = cam.fx * pc[0] / pc[2] + cam.cx
            v = cam.fy * pc[1] / pc[2] + cam.cy
            if not (0 <= u < cam.width and 0 <= v < cam.height):
                continue
            n = normals[i]
            nl = np.linalg.norm(n)
            if nl > 0:
                w = C - p
                cosang = float(n @ w) / (nl * np.linalg.norm(w))
                angle = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
                if angle > grazing_limit_deg:
                    continue
            if brute_occluded(tri, C, p, eps):
                continue
            counts[i] += 1
    return counts


def naive_composite(alphas, colors, depths, transmittance_min=None):
    """Front-to-back accumulation written as the textbook sum."""
    color = np.zeros(3)
    depth = 0.0
    alpha = 0.0
    for i in range(len(alphas)):
        T = 1.0
        for j in range(i):
            T *= 1.0 - alphas[j]
        if transmittance_min is not None and T < transmittance_min:
            break
        color = color + np.asarray(colors[i]) * alphas[i] * T
        depth += depths[i] * alphas[i] * T
        alpha += alphas[i] * T
    return color, depth, alpha


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def union_find_face_groups(faces, n_vertices):
    uf = UnionFind(n_vertices)
    for a, b, c in faces:
        uf.union(a, b)
        uf.union(b, c)
    groups = {}
    for fi, (a, _, _) in enumerate(faces):
        groups.setdefault(uf.find(a), []).append(fi)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: (-len(g), g[0]))


def count_bad(pred, pred_valid, gt, gt_valid, mask, tau):
    bad = n = 0
    h, w = gt.shape
    for y in range(h):
        for x in range(w):
            if not (gt_valid[y, x] and mask[y, x]):
                continue
            n += 1
            if not pred_valid[y, x] or abs(pred[y, x] - gt[y, x]) > tau:
                bad += 1
    return bad, n


def fd_jacobian_cov2d(mean, cov3d, R, t, fx, fy, h=1e-6):
    """Screen covariance from a central-difference Jacobian of the exact projection."""
    def proj(p):
        pc = R @ p + t
        return np.array([fx * pc[0] / pc[2], fy * pc[1] / pc[2]])

    J = np.zeros((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (proj(mean + e) - proj(mean - e)) / (2 * h)
    return J @ cov3d @ J.T
