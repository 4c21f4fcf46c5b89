"""Time the compiled and pure-Python Chu-Liu-Edmonds kernels on random score matrices.

    python3 benchmarks/bench_decode.py [--sizes 10 20 40 80] [--repeats 20]
"""

import argparse
import timeit

import numpy as np

from cssl_parser import decode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 40, 80])
    ap.add_argument("--repeats", type=int, default=20, help="matrices per size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if decode._ext is not None else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the Python kernel only")
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>4} " + " ".join(f"{b + ' ms':>12}" for b in backends) + (f" {'speedup':>8}" if len(backends) == 2 else ""))
    for n in args.sizes:
        mats = [rng.normal(size=(n + 1, n + 1)) for _ in range(args.repeats)]
        for m in mats:  # both kernels must agree before timing means anything
            if len(backends) == 2:
                assert decode.mst_decode(m, "python") == decode.mst_decode(m, "cython")
        ms = {}
        for b in backends:
            t = timeit.timeit(lambda: [decode.mst_decode(m, b) for m in mats], number=1)
            ms[b] = 1000 * t / len(mats)
        row = f"{n:>4} " + " ".join(f"{ms[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            row += f" {ms['python'] / ms['cython']:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
