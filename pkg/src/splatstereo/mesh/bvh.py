"""Bounding-volume hierarchy over a triangle mesh.

Construction uses a binned surface-area heuristic (16 bins, at most
``MAX_LEAF`` triangles per leaf).  Triangles are tested with Moller-Trumbore
using an inclusive barycentric tolerance of ``EDGE_TOL``.  When two triangles
are hit at exactly the same distance the lower face index wins, which makes
results independent of traversal order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from ..errors import EmptyMesh
from .geometry import TriangleMesh

MAX_LEAF = 4
NUM_BINS = 16
EDGE_TOL = 1e-9
# |det| below this fraction of |e1 x e2| counts as a ray parallel to the triangle
PARALLEL_TOL = 1e-12
DEFAULT_RAY_EPS = 1e-9

_jit = dict(cache=True, error_model="numpy")


@dataclass(frozen=True)
class Hit:
    t: float
    face_index: int
    barycentric: tuple[float, float, float]
    geometric_normal: np.ndarray


@dataclass(eq=False)
class AcceleratedMesh:
    mesh: TriangleMesh
    v0: np.ndarray        # (F, 3) first corner
    e1: np.ndarray        # (F, 3) v1 - v0
    e2: np.ndarray        # (F, 3) v2 - v0
    area2: np.ndarray     # (F,) |e1 x e2|
    node_min: np.ndarray  # (N, 3)
    node_max: np.ndarray  # (N, 3)
    node_left: np.ndarray   # (N,) child index, -1 for leaves
    node_right: np.ndarray  # (N,)
    node_start: np.ndarray  # (N,) offset into prim_order
    node_count: np.ndarray  # (N,) >0 for leaves
    prim_order: np.ndarray  # (F,) face indices in leaf order
    max_depth: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.node_left)

    def leaves(self):
        for i in range(self.num_nodes):
            if self.node_count[i] > 0:
                s = self.node_start[i]
                yield i, self.prim_order[s:s + self.node_count[i]]

    def scene_diameter(self) -> float:
        return float(np.linalg.norm(self.node_max[0] - self.node_min[0]))


# --------------------------------------------------------------------- building

@njit(**_jit)
def _surface_area(lo, hi):
    dx = hi[0] - lo[0]
    dy = hi[1] - lo[1]
    dz = hi[2] - lo[2]
    if dx < 0.0 or dy < 0.0 or dz < 0.0:
        return 0.0
    return 2.0 * (dx * dy + dy * dz + dz * dx)


@njit(**_jit)
def _build(tri_min, tri_max, centroid, max_leaf, nbins):
    nf = tri_min.shape[0]
    cap = 2 * nf
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    order = np.arange(nf)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    sp = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = nf
    sp = 1
    n_nodes = 1

    bin_cnt = np.zeros(nbins, np.int64)
    bin_min = np.empty((nbins, 3))
    bin_max = np.empty((nbins, 3))
    lcost_area = np.empty(nbins)
    lcount = np.empty(nbins, np.int64)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        n = hi - lo

        bmin = np.full(3, np.inf)
        bmax = np.full(3, -np.inf)
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(lo, hi):
            f = order[k]
            for a in range(3):
                if tri_min[f, a] < bmin[a]:
                    bmin[a] = tri_min[f, a]
                if tri_max[f, a] > bmax[a]:
                    bmax[a] = tri_max[f, a]
                if centroid[f, a] < cmin[a]:
                    cmin[a] = centroid[f, a]
                if centroid[f, a] > cmax[a]:
                    cmax[a] = centroid[f, a]
        node_min[node] = bmin
        node_max[node] = bmax

        if n <= max_leaf:
            start[node] = lo
            count[node] = n
            continue

        best_cost = np.inf
        best_axis = -1
        best_split = -1
        for a in range(3):
            extent = cmax[a] - cmin[a]
            if extent <= 0.0:
                continue
            bin_cnt[:] = 0
            bin_min[:, :] = np.inf
            bin_max[:, :] = -np.inf
            for k in range(lo, hi):
                f = order[k]
                b = int(nbins * (centroid[f, a] - cmin[a]) / extent)
                if b >= nbins:
                    b = nbins - 1
                bin_cnt[b] += 1
                for c in range(3):
                    if tri_min[f, c] < bin_min[b, c]:
                        bin_min[b, c] = tri_min[f, c]
                    if tri_max[f, c] > bin_max[b, c]:
                        bin_max[b, c] = tri_max[f, c]
            # prefix sweep: split s puts bins [0, s) on the left
            lo_acc = np.full(3, np.inf)
            hi_acc = np.full(3, -np.inf)
            cnt = 0
            for s in range(1, nbins):
                b = s - 1
                cnt += bin_cnt[b]
                for c in range(3):
                    lo_acc[c] = min(lo_acc[c], bin_min[b, c])
                    hi_acc[c] = max(hi_acc[c], bin_max[b, c])
                lcount[s] = cnt
                lcost_area[s] = _surface_area(lo_acc, hi_acc)
            lo_acc[:] = np.inf
            hi_acc[:] = -np.inf
            cnt = 0
            for s in range(nbins - 1, 0, -1):
                b = s
                cnt += bin_cnt[b]
                for c in range(3):
                    lo_acc[c] = min(lo_acc[c], bin_min[b, c])
                    hi_acc[c] = max(hi_acc[c], bin_max[b, c])
                if lcount[s] == 0 or cnt == 0:
                    continue
                cost = lcost_area[s] * lcount[s] + _surface_area(lo_acc, hi_acc) * cnt
                if cost < best_cost:
                    best_cost = cost
                    best_axis = a
                    best_split = s

        mid = lo
        if best_axis >= 0:
            a = best_axis
            extent = cmax[a] - cmin[a]
            i = lo
            j = hi - 1
            while i <= j:
                f = order[i]
                b = int(nbins * (centroid[f, a] - cmin[a]) / extent)
                if b >= nbins:
                    b = nbins - 1
                if b < best_split:
                    i += 1
                else:
                    tmp = order[j]
                    order[j] = order[i]
                    order[i] = tmp
                    j -= 1
            mid = i
        if mid <= lo or mid >= hi:
            # coincident centroids: split the range in half
            mid = lo + n // 2

        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        stack_node[sp] = r_node
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = l_node
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1

    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(), order)


def build_bvh(mesh: TriangleMesh) -> AcceleratedMesh:
    if mesh.num_faces == 0:
        raise EmptyMesh("cannot build a BVH over a mesh without faces")
    tri = mesh.triangles()
    v0 = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
    e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    tri_min = np.ascontiguousarray(tri.min(axis=1))
    tri_max = np.ascontiguousarray(tri.max(axis=1))
    centroid = np.ascontiguousarray(tri.mean(axis=1))
    nodes = _build(tri_min, tri_max, centroid, MAX_LEAF, NUM_BINS)
    return AcceleratedMesh(mesh, v0, e1, e2, area2, *nodes, max_depth=_depth(nodes[2], nodes[3]))


@njit(**_jit)
def _depth(left, right):
    depth = np.zeros(len(left), np.int64)
    deepest = 0
    # children always have larger indices than their parent
    for i in range(len(left)):
        if left[i] >= 0:
            depth[left[i]] = depth[i] + 1
            depth[right[i]] = depth[i] + 1
        elif depth[i] > deepest:
            deepest = depth[i]
    return deepest


# -------------------------------------------------------------------- traversal

@njit(inline="always", **_jit)
def _tri_hit(f, ox, oy, oz, dx, dy, dz, v0, e1, e2, area2):
    """Returns (t, u, v); t is inf on a miss."""
    e1x, e1y, e1z = e1[f, 0], e1[f, 1], e1[f, 2]
    e2x, e2y, e2z = e2[f, 0], e2[f, 1], e2[f, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) <= PARALLEL_TOL * area2[f]:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[f, 0]
    sy = oy - v0[f, 1]
    sz = oz - v0[f, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -EDGE_TOL or u > 1.0 + EDGE_TOL:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -EDGE_TOL or u + v > 1.0 + EDGE_TOL:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(inline="always", **_jit)
def _box_entry(node, ox, oy, oz, ix, iy, iz, t0, t1, node_min, node_max):
    """Entry distance into the node box clipped to [t0, t1], or inf."""
    a = (node_min[node, 0] - ox) * ix
    b = (node_max[node, 0] - ox) * ix
    lo = min(a, b)
    hi = max(a, b)
    a = (node_min[node, 1] - oy) * iy
    b = (node_max[node, 1] - oy) * iy
    lo = max(lo, min(a, b))
    hi = min(hi, max(a, b))
    a = (node_min[node, 2] - oz) * iz
    b = (node_max[node, 2] - oz) * iz
    lo = max(lo, min(a, b))
    hi = min(hi, max(a, b))
    lo = max(lo, t0)
    hi = min(hi * (1.0 + 1e-12), t1)
    if lo <= hi:
        return lo
    return np.inf


@njit(inline="always", **_jit)
def _safe_inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@njit(**_jit)
def _closest(ox, oy, oz, dx, dy, dz, t_min, t_max, v0, e1, e2, area2,
             node_min, node_max, left, right, start, count, order, stack_size):
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    best_t = t_max
    best_f = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(stack_size, np.int64)
    sp = 0
    if _box_entry(0, ox, oy, oz, ix, iy, iz, t_min, best_t, node_min, node_max) < np.inf:
        stack[0] = 0
        sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(node, ox, oy, oz, ix, iy, iz, t_min, best_t, node_min, node_max) == np.inf:
            continue
        if count[node] > 0:
            for k in range(start[node], start[node] + count[node]):
                f = order[k]
                t, u, v = _tri_hit(f, ox, oy, oz, dx, dy, dz, v0, e1, e2, area2)
                if t > t_min and (t < best_t or (t == best_t and best_f >= 0 and f < best_f)):
                    best_t = t
                    best_f = f
                    best_u = u
                    best_v = v
        else:
            l = left[node]
            r = right[node]
            tl = _box_entry(l, ox, oy, oz, ix, iy, iz, t_min, best_t, node_min, node_max)
            tr = _box_entry(r, ox, oy, oz, ix, iy, iz, t_min, best_t, node_min, node_max)
            # push the farther child first so the nearer one is popped next
            if tl <= tr:
                if tr < np.inf:
                    stack[sp] = r
                    sp += 1
                if tl < np.inf:
                    stack[sp] = l
                    sp += 1
            else:
                if tl < np.inf:
                    stack[sp] = l
                    sp += 1
                if tr < np.inf:
                    stack[sp] = r
                    sp += 1
    if best_f < 0:
        return np.inf, -1, 0.0, 0.0
    return best_t, best_f, best_u, best_v


@njit(**_jit)
def _any_hit(ox, oy, oz, dx, dy, dz, t_min, t_max, v0, e1, e2, area2,
             node_min, node_max, left, right, start, count, order, stack_size):
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(stack_size, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_entry(node, ox, oy, oz, ix, iy, iz, t_min, t_max, node_min, node_max) == np.inf:
            continue
        if count[node] > 0:
            for k in range(start[node], start[node] + count[node]):
                t, u, v = _tri_hit(order[k], ox, oy, oz, dx, dy, dz, v0, e1, e2, area2)
                if t > t_min and t < t_max:
                    return True
        else:
            stack[sp] = left[node]
            sp += 1
            stack[sp] = right[node]
            sp += 1
    return False


@njit(parallel=True, **_jit)
def _closest_many(origins, dirs, t_min, t_max, v0, e1, e2, area2,
                  node_min, node_max, left, right, start, count, order, stack_size):
    n = origins.shape[0]
    out_t = np.empty(n)
    out_f = np.empty(n, np.int64)
    out_u = np.empty(n)
    out_v = np.empty(n)
    for i in prange(n):
        t, f, u, v = _closest(origins[i, 0], origins[i, 1], origins[i, 2],
                              dirs[i, 0], dirs[i, 1], dirs[i, 2], t_min, t_max[i],
                              v0, e1, e2, area2, node_min, node_max, left, right, start, count, order,
                              stack_size)
        out_t[i] = t
        out_f[i] = f
        out_u[i] = u
        out_v[i] = v
    return out_t, out_f, out_u, out_v


@njit(parallel=True, **_jit)
def _occluded_many(origins, targets, eps, v0, e1, e2, area2,
                   node_min, node_max, left, right, start, count, order, stack_size):
    n = origins.shape[0]
    out = np.zeros(n, np.bool_)
    for i in prange(n):
        dx = targets[i, 0] - origins[i, 0]
        dy = targets[i, 1] - origins[i, 1]
        dz = targets[i, 2] - origins[i, 2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        if length <= 2.0 * eps:
            continue
        out[i] = _any_hit(origins[i, 0], origins[i, 1], origins[i, 2],
                          dx / length, dy / length, dz / length, eps, length - eps,
                          v0, e1, e2, area2, node_min, node_max, left, right, start, count, order,
                          stack_size)
    return out


def _arrays(accel: AcceleratedMesh):
    return (accel.v0, accel.e1, accel.e2, accel.area2, accel.node_min, accel.node_max,
            accel.node_left, accel.node_right, accel.node_start, accel.node_count, accel.prim_order,
            2 * accel.max_depth + 4)


def intersect_rays(accel: AcceleratedMesh, origins, directions, t_max=np.inf,
                   ray_eps: float = DEFAULT_RAY_EPS):
    """Closest hit for a batch of rays.

    Returns ``(t, face, u, v)`` arrays; misses have ``t = inf`` and ``face = -1``.
    Barycentrics of the hit are ``(1 - u - v, u, v)``.
    """
    origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(directions)), dtype=np.float64)
    directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    origins = origins.reshape(-1, 3)
    t_max = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64),
                                                 (len(directions),)))
    return _closest_many(origins, directions, float(ray_eps), t_max, *_arrays(accel))


def intersect(accel: AcceleratedMesh, ray, t_max: float = np.inf,
              ray_eps: float = DEFAULT_RAY_EPS) -> Hit | None:
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    o, d = ray.origin, ray.direction
    t, f, u, v = _closest(float(o[0]), float(o[1]), float(o[2]), float(d[0]), float(d[1]), float(d[2]),
                          float(ray_eps), float(t_max), *_arrays(accel))
    if f < 0:
        return None
    n = np.cross(accel.e1[f], accel.e2[f])
    length = np.linalg.norm(n)
    return Hit(float(t), int(f), (1.0 - u - v, float(u), float(v)), n / length if length > 0 else n)


def occluded_segments(accel: AcceleratedMesh, origins, targets, epsilon: float):
    """Vectorised :func:`is_occluded` over segment pairs."""
    targets = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 3)
    origins = np.ascontiguousarray(np.broadcast_to(origins, targets.shape), dtype=np.float64)
    return _occluded_many(origins, targets, float(epsilon), *_arrays(accel))


def is_occluded(accel: AcceleratedMesh, start, end, epsilon: float) -> bool:
    """True when a triangle crosses the segment strictly inside ``(eps, |end-start| - eps)``."""
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if np.array_equal(start, end):
        raise ValueError("segment endpoints coincide")
    return bool(occluded_segments(accel, start[None], end[None], epsilon)[0])


def default_epsilon(accel: AcceleratedMesh) -> float:
    """Self-occlusion epsilon: 1e-4 of the scene bounding-box diagonal."""
    return 1e-4 * accel.scene_diameter()


def set_num_threads(n: int | None) -> int:
    """Cap the worker threads used by the traversal kernels; returns the count in use."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if not n else max(1, min(int(n), limit))
    numba.set_num_threads(n)
    return n
