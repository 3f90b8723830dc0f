"""Compare the numba and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each case is timed as the best of ``repeat`` runs after one warm-up call
(the warm-up also absorbs numba compilation). Outputs are checked for
agreement before timing.
"""
import argparse
import time

import numpy as np

from halfcnn import network as nw
from halfcnn.kernels import get_backend

CASES = [
    # (label, input shape, filter shape)
    ("face block 1", (3, 256, 256), (5, 3, 11, 11)),
    ("face block 2", (5, 128, 128), (5, 5, 7, 7)),
    ("face block 3", (5, 64, 64), (5, 5, 5, 5)),
    ("synth block 1", (1, 64, 64), (4, 1, 7, 7)),
]


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    impls = {name: get_backend(name) for name in ("numpy", "numba")}
    print(f"{'case':<16} {'kernel':<16} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for label, xs, ws in CASES:
        x, w, b = rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=ws[0])
        dout = rng.normal(size=(ws[0],) + xs[1:])
        ref = impls["numpy"].conv_forward(x, w, b)
        assert np.allclose(impls["numba"].conv_forward(x, w, b), ref, atol=1e-9)
        pooled = ref[:, : ref.shape[1] // 2 * 2, : ref.shape[2] // 2 * 2]
        _, arg = impls["numpy"].maxpool_forward(pooled, 2)
        h, wd = pooled.shape[1:]
        g = rng.normal(size=arg.shape)
        jobs = {
            "conv forward": lambda m: m.conv_forward(x, w, b),
            "conv backward": lambda m: m.conv_backward(x, w, dout),
            "pool forward": lambda m: m.maxpool_forward(pooled, 2),
            "pool backward": lambda m: m.maxpool_backward(g, arg, h, wd),
        }
        for kname, job in jobs.items():
            t = {n: best_of(lambda: job(m), repeat) for n, m in impls.items()}
            print(f"{label:<16} {kname:<16} {1e3 * t['numpy']:>10.2f} {1e3 * t['numba']:>10.2f} "
                  f"{t['numpy'] / t['numba']:>7.2f}x")


def bench_network(repeat):
    """End-to-end objective + gradient on a face-sized input, per backend."""
    import halfcnn.layers as layers

    rng = np.random.default_rng(1)
    net = nw.build(nw.face_spec(3), seed=0)
    image = rng.uniform(size=(3, 256, 256))
    target = rng.uniform(0.1, 0.9, size=(1, 64, 64))
    mask = np.ones_like(target)
    saved = {k: getattr(layers.kernels, k) for k in ("conv_forward", "conv_backward",
                                                     "maxpool_forward", "maxpool_backward")}
    print("\nface network, one 256x256 sample, forward + backward")
    try:
        for name in ("numpy", "numba"):
            impl = get_backend(name)
            for k in saved:
                setattr(layers.kernels, k, getattr(impl, k))
            t = best_of(lambda: nw.sample_objective(net, image, target, mask), repeat)
            print(f"  {name:<6} {1e3 * t:9.1f} ms")
    finally:
        for k, v in saved.items():
            setattr(layers.kernels, k, v)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_network(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
