"""Time the sparse echo kernel on each backend and check they agree.

    python benchmarks/bench_simulate.py            # 225 x 1400, N = 10240
    python benchmarks/bench_simulate.py --small    # 32 x 64 toy grid
"""
import argparse
import time

import numpy as np

from melidar import kernels, photon
from melidar._core_py import pixel_keys
from melidar.echoes import gaussian_kernel
from melidar.scene import make_scene, toy_scene
from melidar.simulate import rates_from_inputs, simulate, to_polar


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--small", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, nargs="+", default=[1])
    args = ap.parse_args()

    t0 = time.perf_counter()
    if args.small:
        scene = toy_scene(0, seed=1)
    else:
        scene = make_scene(1, width=1400, height=720, n_cars=12, n_people=8, x_range=(5.0, 60.0), seed=1)
    cfg = scene.config
    print(f"scene ready in {time.perf_counter() - t0:.2f}s")

    inp = to_polar(scene.rgb, scene.depth, scene.normals, cfg)
    rates = rates_from_inputs(inp, cfg)
    kernel = gaussian_kernel(cfg.kernel_size, cfg.kernel_sigma)
    tau = photon.ambient_tau_bound(float(rates.ambient_rate.max()), kernel, cfg.bins)
    h, w = inp.array.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    keys = pixel_keys(cfg.seed, np.maximum(inp.view, 0), rows, cols)
    sig, amb = rates.draw_params()
    print(f"grid {h}x{w}, N={cfg.bins}, K={cfg.k}, tau={tau:.3f}")

    results = {}
    for backend in kernels.available_backends():
        for t in args.threads:
            dt, out = best_of(lambda: kernels.sparse_echoes(rates.signal_bin, keys, sig, amb, kernel, cfg.k, tau,
                                                            cfg.nms_window, threads=t, backend=backend), args.repeat)
            results[(backend, t)] = out
            print(f"  kernel  {backend:<7} threads={t:<3} {dt * 1e3:9.1f} ms")
    ref = next(iter(results.values()))
    same = all(o[0].tobytes() == ref[0].tobytes() and o[1].tobytes() == ref[1].tobytes() for o in results.values())
    print(f"outputs identical across runs: {same}")

    for backend in kernels.available_backends():
        dt, res = best_of(lambda: simulate(scene.rgb, scene.depth, scene.normals, cfg, backend=backend), 1)
        print(f"  simulate {backend:<7} end to end {dt:7.2f} s, echoes per slot {res.frame.echo_counts().tolist()}")


if __name__ == "__main__":
    main()
