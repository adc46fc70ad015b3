"""Compiled kernels versus their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Prints the best-of-repeat wall time per call for each backend, the speedup
and whether the two outputs are bitwise identical.
"""
import argparse
import timeit

import numpy as np

from impulse_qvi import _fallback

try:
    from impulse_qvi import _kernels
except ImportError:
    _kernels = None


def cases(scale):
    rng = np.random.default_rng(0)
    n = int(200_000 * scale)
    ctr = rng.integers(0, 2 ** 32, size=(n, 4), dtype=np.uint64).astype(np.uint32)
    key = (0x1234, 0xABCD)
    paths = np.arange(n, dtype=np.uint64)

    axes2 = [np.linspace(-1, 1, 201), np.linspace(0, 2, 101)]
    pts2 = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0, 2, n)])

    m, ncand, nsten = int(20_000 * scale), 8, 4
    u = rng.normal(size=m)
    idx = rng.integers(0, m, size=(m, ncand, nsten))
    w = rng.uniform(size=(m, ncand, nsten))
    add = -rng.uniform(size=(m, ncand))
    valid = rng.uniform(size=(m, ncand)) < 0.9

    return [
        (f"philox4x32 ({n} blocks)", "philox4x32", (ctr, key)),
        (f"philox_uniforms ({n} paths)", "philox_uniforms", (paths, 17, 3, key)),
        (f"interp_stencil 2-d ({n} points)", "interp_stencil", (axes2, pts2)),
        (f"gather_max ({m} x {ncand} x {nsten})", "gather_max", (u, idx, w, add, valid)),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply the problem sizes")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':42s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}  bitwise")
    for label, name, fargs in cases(args.scale):
        tp = best_time(getattr(_fallback, name), fargs, args.repeat)
        if _kernels is None:
            print(f"{label:42s} {tp * 1e3:8.2f}ms")
            continue
        fc = getattr(_kernels, name)
        tc = best_time(fc, fargs, args.repeat)
        ok = same(getattr(_fallback, name)(*fargs), fc(*fargs))
        print(f"{label:42s} {tp * 1e3:8.2f}ms {tc * 1e3:8.2f}ms {tp / tc:7.1f}x  {ok}")


if __name__ == "__main__":
    main()
