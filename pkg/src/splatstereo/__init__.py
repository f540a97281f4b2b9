"""Stereo training-set synthesis from 3D reconstructions.

Consumes COLMAP sparse models, triangle meshes and Gaussian-splat scenes and
produces rectified stereo pairs with pseudo ground-truth disparity, together
with mesh observability ranking and bad-tau evaluation.
"""

import os

import numba

# The bundled TBB is too old for numba and only produces a warning; use the
# portable workqueue pool unless the user picked a layer explicitly.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
