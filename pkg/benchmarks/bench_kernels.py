"""Compiled kernels vs the numpy fallback on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from egohoi import _kernels, pose3d, synth
from egohoi._kernels import fallback


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads():
    scene = synth.generate_scene(0, 3, 200, 21)
    frames = synth.render_detections(scene, sigma=1.0)
    src = [pose3d.detections_from_json(f) for f in frames if f["set"] == "without_object"]
    # one batch holding every joint of every frame
    stacks = [pose3d._stack(fr, scene.cameras) for fr in src]
    cam_objs = stacks[0][0]
    cams = pose3d.camera_rows(cam_objs)
    uv = np.concatenate([s[1] for s in stacks], axis=1)
    w = np.concatenate([s[2] for s in stacks], axis=1)
    x0 = pose3d.initial_joints(cam_objs, uv, w, (w > 0).sum(0) >= 2)
    tri_args = (np.ascontiguousarray(uv), np.ascontiguousarray(w), cams,
                np.ascontiguousarray(x0), 100, 1e-10, 1e-10, 1e-3, 10.0, 10.0)

    rng = np.random.default_rng(0)
    hoi = (rng.random(100_000) < 0.5).astype(np.uint8)
    img = rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)
    return {
        "triangulate 200x21 joints": lambda m: m.triangulate_points(*tri_args),
        "window majority 100k, w=15": lambda m: m.window_majority(hoi, 7),
        "chroma key 640x480": lambda m: m.chroma_key(img, 90.0, 150.0, 0.35, 0.2),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    native = _kernels.native
    if native is None:
        print("compiled core not available; only the fallback is timed")
    print(f"{'kernel':32s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in workloads().items():
        t_py = _best(lambda: fn(fallback), args.repeat) * 1e3
        if native is None:
            print(f"{name:32s} {'-':>10s} {t_py:10.2f} {'-':>8s}")
            continue
        t_c = _best(lambda: fn(native), args.repeat) * 1e3
        print(f"{name:32s} {t_c:10.2f} {t_py:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
