"""Time each hot kernel under the numba and numpy backends, then a full
tracking run on the dense throughput scene.

    python benchmarks/bench_kernels.py [--repeat N] [--frames N]
"""
import argparse
import time

import numpy as np

from fusetrack import kernels
from fusetrack.evalharness.scenario import generate, throughput_scenario
from fusetrack.tracker import Tracker


def random_boxes(rng, n):
    b = np.empty((n, 7))
    b[:, 0] = rng.uniform(-15, 15, n)
    b[:, 1] = rng.uniform(0.5, 1.0, n)
    b[:, 2] = rng.uniform(5, 60, n)
    b[:, 3] = rng.uniform(-np.pi, np.pi, n)
    b[:, 4:7] = rng.uniform(1.0, 4.0, (n, 3))
    return b


def cases(rng):
    a, b = random_boxes(rng, 30), random_boxes(rng, 30)
    img_a = np.sort(rng.uniform(0, 1000, (40, 4)).reshape(40, 2, 2), axis=1).transpose(0, 2, 1).reshape(40, 4)
    img_b = np.sort(rng.uniform(0, 1000, (40, 4)).reshape(40, 2, 2), axis=1).transpose(0, 2, 1).reshape(40, 4)
    K = np.array([[721.5, 0, 609.6], [0, 721.5, 172.9], [0, 0, 1.0]])
    corners = kernels.box_corners(a)
    vals = rng.random((30, 30))
    mean, cov = np.r_[a[0], 0.1, 0.0, 0.2], np.diag(rng.uniform(0.5, 10, 10))
    return {
        "box_corners 30": lambda: kernels.box_corners(a),
        "project_corners 30": lambda: kernels.project_corners(corners, np.eye(3), np.zeros(3), K, 1242.0, 375.0),
        "iou2d_matrix 40x40": lambda: kernels.iou2d_matrix(img_a, img_b),
        "scaled_distance 30x30": lambda: kernels.scaled_distance_matrix(a, b),
        "iou3d_matrix 30x30": lambda: kernels.iou3d_matrix(a, b),
        "greedy_scan 30x30": lambda: kernels.greedy_scan(vals, 0.5, True),
        "kf_predict": lambda: kernels.kf_predict(mean, cov, np.full(10, 1e-2)),
        "kf_update": lambda: kernels.kf_update(mean, cov, a[1], np.ones(7)),
    }


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        times.append((time.perf_counter() - t0) / repeat)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--frames", type=int, default=300)
    args = ap.parse_args()

    results = {}
    for name in ("numba", "numpy"):
        kernels.use_backend(name)
        t0 = time.perf_counter()
        kernels.warmup()
        warm = time.perf_counter() - t0
        timings = {k: best_of(f, args.repeat) for k, f in cases(np.random.default_rng(0)).items()}
        sc = throughput_scenario(args.frames)
        frames = generate(sc)[0].frames
        t0 = time.perf_counter()
        Tracker(sc.rig.cameras).run(frames)
        timings["tracker frames/s"] = args.frames / (time.perf_counter() - t0)
        results[name] = (warm, timings)

    print(f"{'kernel':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for k in results["numba"][1]:
        nb, npv = results["numba"][1][k], results["numpy"][1][k]
        if k.endswith("frames/s"):
            print(f"{k:<24}{nb:>12.1f}{npv:>12.1f}{nb / npv:>9.1f}x")
        else:
            print(f"{k:<24}{nb * 1e6:>12.2f}{npv * 1e6:>12.2f}{npv / nb:>9.1f}x")
    print(f"warmup s: numba {results['numba'][0]:.2f}, numpy {results['numpy'][0]:.2f}")


if __name__ == "__main__":
    main()
