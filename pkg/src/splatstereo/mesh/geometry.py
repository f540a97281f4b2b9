"""Triangle meshes: loading, saving and largest-cluster filtering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from ..errors import EmptyMesh, MalformedHeader, SizeMismatch, TruncatedBody
from .ply import read_ply, write_ply

logger = logging.getLogger(__name__)

_XYZ = ("x", "y", "z")


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ValueError("face index out of range")
        if self.faces.size and np.any((self.faces[:, 0] == self.faces[:, 1]) & (self.faces[:, 1] == self.faces[:, 2])):
            raise ValueError("degenerate face with three identical indices")
        for name, arr in self.attributes.items():
            if len(arr) != n:
                raise SizeMismatch(f"attribute {name!r} has {len(arr)} entries for {n} vertices")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.vertices[self.faces]

    def bbox_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def face_normals(self, normalize=True) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals; zero for isolated vertices."""
        fn = self.face_normals(normalize=False)  # length = 2 * area
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], fn)
        length = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, length, out=np.zeros_like(acc), where=length > 0)

    def submesh(self, face_ids) -> TriangleMesh:
        """Keep the given faces and drop vertices nobody references."""
        faces = self.faces[np.sort(np.asarray(face_ids, dtype=np.int64))]
        used, inverse = np.unique(faces, return_inverse=True)
        attrs = {k: v[used] for k, v in self.attributes.items()}
        return TriangleMesh(self.vertices[used], inverse.reshape(-1, 3), attrs)


def _fan(polygons):
    tris = []
    for poly in polygons:
        poly = [int(i) for i in poly]
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    return tris


def _drop_collapsed(faces):
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    bad = (faces[:, 0] == faces[:, 1]) & (faces[:, 1] == faces[:, 2])
    if bad.any():
        logger.warning("dropping %d faces with three identical vertex indices", int(bad.sum()))
    return faces[~bad]


def load_mesh(path) -> TriangleMesh:
    """Load a PLY (ascii / binary little-endian) or OBJ triangle mesh."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return _load_obj(path)
    elements, _ = read_ply(path)
    if "vertex" not in elements:
        raise MalformedHeader(f"{path}: no vertex element")
    vert = elements["vertex"]
    for axis in _XYZ:
        if axis not in vert:
            raise MalformedHeader(f"{path}: vertex element lacks {axis!r}")
    vertices = np.stack([vert[a].astype(np.float64) for a in _XYZ], axis=1)
    attributes = {k: v for k, v in vert.items() if k not in _XYZ and np.ndim(v) == 1}

    faces = np.zeros((0, 3), dtype=np.int64)
    face_el = elements.get("face", {})
    idx = face_el.get("vertex_indices", face_el.get("vertex_index"))
    if idx is not None:
        if isinstance(idx, np.ndarray) and idx.ndim == 2 and idx.shape[1] == 3:
            faces = idx.astype(np.int64)
        else:
            faces = np.asarray(_fan(idx), dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise TruncatedBody(f"{path}: face index out of range")
    return TriangleMesh(vertices, _drop_collapsed(faces), attributes)


def _load_obj(path) -> TriangleMesh:
    verts, polys = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, line in enumerate(f, start=1):
            toks = line.split()
            if not toks:
                continue
            try:
                if toks[0] == "v":
                    verts.append([float(t) for t in toks[1:4]])
                elif toks[0] == "f":
                    poly = []
                    for t in toks[1:]:
                        i = int(t.split("/")[0])
                        poly.append(i - 1 if i > 0 else len(verts) + i)
                    if len(poly) < 3:
                        raise ValueError("face with fewer than 3 vertices")
                    polys.append(poly)
            except (ValueError, IndexError) as exc:
                raise MalformedHeader(f"{path}:{lineno}: {exc}") from None
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(_fan(polys), dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise TruncatedBody(f"{path}: face index out of range")
    return TriangleMesh(vertices, _drop_collapsed(faces))


def save_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    """Write ``mesh`` as PLY with float32 positions, int32 indices and its attributes."""
    vert = {a: mesh.vertices[:, i].astype(np.float32) for i, a in enumerate(_XYZ)}
    vert.update(mesh.attributes)
    write_ply(path, [("vertex", vert), ("face", {"vertex_indices": mesh.faces.astype(np.int32)})],
              binary=binary)


def connected_components(mesh: TriangleMesh) -> list[np.ndarray]:
    """Face components under vertex sharing, largest first.

    Ties in size are ordered by each component's smallest face index.
    """
    nf = mesh.num_faces
    if nf == 0:
        return []
    nv = mesh.num_vertices
    f = mesh.faces
    rows = np.concatenate([f[:, 0], f[:, 1]])
    cols = np.concatenate([f[:, 1], f[:, 2]])
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(nv, nv))
    _, vlabel = _cc(graph, directed=False)
    flabel = vlabel[f[:, 0]]
    # relabel by first occurrence so ties sort by smallest face index
    _, first, dense = np.unique(flabel, return_index=True, return_inverse=True)
    sizes = np.bincount(dense)
    order = sorted(range(len(sizes)), key=lambda c: (-sizes[c], first[c]))
    members = np.argsort(dense, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    groups = [members[bounds[c]:bounds[c + 1]] for c in range(len(sizes))]
    return [groups[c] for c in order]


def keep_largest_cluster(mesh: TriangleMesh) -> TriangleMesh:
    """Largest vertex-connected face cluster; unreferenced vertices are dropped."""
    comps = connected_components(mesh)
    if not comps:
        raise EmptyMesh("mesh has no faces")
    return mesh.submesh(comps[0])
