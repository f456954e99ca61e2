"""Time the compiled random kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--n 2000000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from multigen.kernels import get_backend


def bench(mod, name, n, repeat):
    key = mod.seed_key(2024)
    own = np.arange(n, dtype=np.int64)
    fam = own // 2
    calls = {
        "raw_bits": lambda: mod.raw_bits(key, own, 0),
        "normals": lambda: mod.normals(key, own, 0),
        "mixed_normals": lambda: mod.mixed_normals(key, own, fam, 2, 0.4),
    }
    out = {}
    for label, fn in calls.items():
        fn()  # warm up
        out[label] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    py = bench(get_backend("python"), "python", args.n, args.repeat)
    try:
        cy = bench(get_backend("cython"), "cython", args.n, args.repeat)
    except ImportError:
        cy = None
        print("compiled extension not built; showing fallback only")
    print(f"n = {args.n:,}, best of {args.repeat}")
    print(f"{'kernel':<15}{'python (s)':>12}{'cython (s)':>12}{'speedup':>10}")
    for label in py:
        if cy is None:
            print(f"{label:<15}{py[label]:>12.4f}")
        else:
            print(f"{label:<15}{py[label]:>12.4f}{cy[label]:>12.4f}{py[label] / cy[label]:>9.2f}x")


if __name__ == "__main__":
    main()
