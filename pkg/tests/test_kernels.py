import os
import subprocess
import sys

import numpy as np
import pytest

from stgeom import kernels

needs_compiled = pytest.mark.skipif(kernels.raycast_compiled is None,
                                    reason="compiled kernel not built")


def ray_loop(tris, fx, fy, cx, cy, H, W):
    """Per-pixel Moller-Trumbore written without vectorisation."""
    depth = np.full((H, W), np.inf)
    ids = np.full((H, W), -1)
    for i in range(H):
        for j in range(W):
            d = np.array([(j - cx) / fx, (i - cy) / fy, 1.0])
            for m, (a, b, c) in enumerate(tris):
                e1, e2 = b - a, c - a
                p = np.cross(d, e2)
                det = e1 @ p
                if abs(det) <= 1e-12:
                    continue
                s = -a
                u = (s @ p) / det
                q = np.cross(s, e1)
                v = (d @ q) / det
                t = (e2 @ q) / det
                if u >= 0 and v >= 0 and u + v <= 1 and 1e-9 < t < depth[i, j]:
                    depth[i, j], ids[i, j] = t, m
    return depth, ids


def random_tris(rng, n):
    centre = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(2, 6, n)])
    return centre[:, None, :] + rng.normal(0, 0.8, (n, 3, 3))


def test_fallback_matches_loop(rng):
    tris = random_tris(rng, 6)
    d, ids = kernels.raycast_python(tris, 8.0, 8.0, 5.5, 5.5, 12, 12)
    rd, rids = ray_loop(tris, 8.0, 8.0, 5.5, 5.5, 12, 12)
    hit = np.isfinite(rd)
    np.testing.assert_array_equal(np.isfinite(d), hit)
    np.testing.assert_allclose(d[hit], rd[hit], rtol=1e-12)
    np.testing.assert_array_equal(ids, rids)


def test_single_triangle_depth():
    tri = np.array([[[-5.0, -5.0, 2.0], [5.0, -5.0, 2.0], [0.0, 5.0, 2.0]]])
    d, ids = kernels.raycast(tri, 4.0, 4.0, 1.5, 1.5, 4, 4)
    assert (ids == 0).all()
    np.testing.assert_allclose(d, 2.0, rtol=1e-14)
    d, ids = kernels.raycast(tri - [0, 0, 4.0], 4.0, 4.0, 1.5, 1.5, 4, 4)
    assert (ids == -1).all() and np.isinf(d).all()


@needs_compiled
def test_compiled_equals_fallback_bitwise(rng):
    for _ in range(5):
        tris = random_tris(rng, 10)
        a = kernels.raycast_compiled(np.ascontiguousarray(tris), 20.0, 18.0, 15.5, 15.5, 32, 32)
        b = kernels.raycast_python(tris, 20.0, 18.0, 15.5, 15.5, 32, 32)
        assert a[0].tobytes() == b[0].tobytes()
        np.testing.assert_array_equal(a[1], b[1])


def test_pure_python_switch():
    env = dict(os.environ, STGEOM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stgeom import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_scene_identical_under_both_backends(tmp_path):
    code = ("import hashlib; from stgeom.scenes import SceneConfig, generate_scene;"
            "s = generate_scene(SceneConfig(V=2, T=2, setting='multi-s', n_queries=4), 5);"
            "print(hashlib.sha256(s.frames.tobytes() + s.depth.tobytes()).hexdigest())")
    digests = []
    for pure in ("", "1"):
        env = dict(os.environ, STGEOM_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        digests.append(out.stdout.strip())
    assert digests[0] == digests[1]
