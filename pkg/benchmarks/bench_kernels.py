"""Compare the compiled and numpy ray-cast kernels on scene-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--size 32] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from stgeom import kernels
from stgeom.scenes.generator import SceneConfig, _place_objects, _scene_tris
from stgeom.scenes.geometry import look_at


def scene_triangles(size, seed=0):
    cfg = SceneConfig(H=size, W=size, n_objects=4)
    objs = _place_objects(cfg, np.random.default_rng(seed))
    tris, _ = _scene_tris(objs, 0)
    R, t = look_at([0.0, -0.7, 0.0], [0.0, 0.6, 4.2])
    return tris @ R.T + t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32, help="image side in pixels")
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats (best is kept)")
    args = ap.parse_args()
    tris = scene_triangles(args.size)
    f = 0.9 * args.size
    c = (args.size - 1) / 2.0
    call = (tris, f, f, c, c, args.size, args.size)
    ref = kernels.raycast_python(*call)
    print(f"{len(tris)} triangles, {args.size}x{args.size} pixels")
    t_py = min(timeit.repeat(lambda: kernels.raycast_python(*call), number=1, repeat=args.repeat))
    print(f"python  {t_py * 1e3:9.2f} ms")
    if kernels.raycast_compiled is None:
        print("compiled kernel not built; only the fallback was timed")
        return
    got = kernels.raycast_compiled(np.ascontiguousarray(tris), f, f, c, c, args.size, args.size)
    same = np.array_equal(got[0], ref[0]) and np.array_equal(got[1], ref[1])
    t_cy = min(timeit.repeat(lambda: kernels.raycast_compiled(*call), number=1,
                             repeat=args.repeat))
    print(f"cython  {t_cy * 1e3:9.2f} ms   speed-up {t_py / t_cy:6.1f}x   identical={same}")


if __name__ == "__main__":
    main()
