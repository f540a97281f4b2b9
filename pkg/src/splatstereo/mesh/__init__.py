from .bvh import (
    AcceleratedMesh,
    Hit,
    build_bvh,
    default_epsilon,
    intersect,
    intersect_rays,
    is_occluded,
    occluded_segments,
    set_num_threads,
)
from .geometry import TriangleMesh, connected_components, keep_largest_cluster, load_mesh, save_mesh

__all__ = [
    "AcceleratedMesh", "Hit", "TriangleMesh", "build_bvh", "connected_components", "default_epsilon",
    "intersect", "intersect_rays", "is_occluded", "keep_largest_cluster", "load_mesh",
    "occluded_segments", "save_mesh", "set_num_threads",
]
