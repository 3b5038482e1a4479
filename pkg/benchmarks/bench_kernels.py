"""Time the recurrent kernels of every available backend.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the best-of-N wall time of one forward and one backward pass per
shape, and the speed-up of the compiled kernel over the numpy fallback.
"""
import argparse
import timeit

import numpy as np

from ealstm import kernels

SHAPES = [  # (T, B, H, G)
    (30, 256, 32, 3),
    (30, 256, 32, 4),
    (270, 256, 64, 3),
    (270, 64, 256, 3),
]


def bench(backend, T, B, H, G, repeat):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(0)
    zx = rng.normal(size=(T, B, G * H))
    U = rng.normal(0, 1 / np.sqrt(H), size=(G * H, H))
    istat = rng.uniform(size=(B, H)) if G == 3 else None
    dh = rng.normal(size=(B, H))
    fwd = k.recurrent_forward(zx, U, istat)
    t_f = min(timeit.repeat(lambda: k.recurrent_forward(zx, U, istat), number=1, repeat=repeat))
    t_b = min(timeit.repeat(lambda: k.recurrent_backward(*fwd, U, dh, istat), number=1, repeat=repeat))
    return t_f, t_b


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default: {kernels.BACKEND})")
    print(f"{'T':>4} {'B':>4} {'H':>4} {'gates':>5} {'backend':>8} {'forward ms':>11} {'backward ms':>12}")
    for T, B, H, G in SHAPES:
        times = {}
        for name in backends:
            times[name] = bench(name, T, B, H, G, args.repeat)
            f, b = times[name]
            print(f"{T:>4} {B:>4} {H:>4} {G:>5} {name:>8} {1e3 * f:>11.2f} {1e3 * b:>12.2f}")
        if len(times) == 2:
            (pf, pb), (cf, cb) = times["python"], times["cython"]
            print(f"{'':>28}speed-up forward x{pf / cf:.2f}, backward x{pb / cb:.2f}")


if __name__ == "__main__":
    main()
