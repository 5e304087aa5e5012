"""Timing comparison of the compiled and pure-numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--sizes 1000,10000,100000]
"""

import argparse
import time

import numpy as np

from privgnn.kernels import HAVE_COMPILED, _pykernels

BACKENDS = {"pure-numpy": _pykernels}
if HAVE_COMPILED:
    from privgnn.kernels import _ckernels

    BACKENDS["compiled"] = _ckernels


def random_graph_arrays(n, avg_degree, dim, seed):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(avg_degree, size=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = rng.integers(0, n, size=int(indptr[-1]), dtype=np.int64)
    x = np.ascontiguousarray(rng.standard_normal((n, dim)))
    return indptr, indices, x


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="1000,10000,100000")
    parser.add_argument("--avg-degree", type=int, default=25)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"backends: {', '.join(BACKENDS)} (compiled available: {HAVE_COMPILED})")
    header = f"{'kernel':<12} {'nodes':>8} " + "".join(
        f"{name:>14}" for name in BACKENDS
    )
    print(header + ("  speedup" if HAVE_COMPILED else ""))
    for n in sizes:
        indptr, indices, x = random_graph_arrays(n, args.avg_degree, args.dim, seed=0)
        for kernel in ("gather_sum", "unit_rows"):
            row = f"{kernel:<12} {n:>8} "
            times = {}
            for name, backend in BACKENDS.items():
                fn = getattr(backend, kernel)
                if kernel == "gather_sum":
                    times[name] = best_of(lambda: fn(indptr, indices, x), args.repeats)
                else:
                    times[name] = best_of(lambda: fn(x), args.repeats)
                row += f"{times[name] * 1e3:>12.2f}ms"
            if HAVE_COMPILED:
                row += f"  {times['pure-numpy'] / times['compiled']:>6.1f}x"
            print(row)
        # Backends must agree on the same inputs.
        outs = [b.gather_sum(indptr, indices, x) for b in BACKENDS.values()]
        if len(outs) == 2 and not np.allclose(outs[0], outs[1], atol=1e-10):
            raise SystemExit("backend results diverge")


if __name__ == "__main__":
    main()
