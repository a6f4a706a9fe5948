"""Hot loops with a compiled implementation and a numpy fallback.

The Cython extension is used when it was built; set
``STGEOM_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from ._fallback import raycast as raycast_python

raycast_compiled = None
if not os.environ.get("STGEOM_PURE_PYTHON"):
    try:
        from ._raycast import raycast as raycast_compiled
    except ImportError:
        raycast_compiled = None

BACKEND = "cython" if raycast_compiled is not None else "python"


def raycast(tris, fx, fy, cx, cy, H, W):
    """Nearest-hit depth ``[H, W]`` and triangle index (-1 for no hit).

    ``tris [M, 3, 3]`` are camera-space triangles; pixel ``(i, j)`` casts the
    ray ``((j - cx) / fx, (i - cy) / fy, 1)`` so the hit parameter is the
    z-depth. Ties keep the earlier triangle.
    """
    if raycast_compiled is not None:
        tris = np.ascontiguousarray(tris, dtype=np.float64)
        return raycast_compiled(tris, float(fx), float(fy), float(cx), float(cy), int(H), int(W))
    return raycast_python(tris, fx, fy, cx, cy, H, W)
