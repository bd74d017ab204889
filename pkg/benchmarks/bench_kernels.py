"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--lengths 10 40 80 200] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from depsan import _kernels_py

try:
    from depsan import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def random_parents(rng, n):
    order = rng.permutation(n)
    parents = np.full(n, -1, dtype=np.int64)
    for pos in range(1, n):
        parents[order[pos]] = order[rng.integers(0, pos)]
    return parents


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lengths", type=int, nargs="+", default=[10, 40, 80, 200])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = {"python": _kernels_py}
    if _kernels_c is not None:
        backends["cython"] = _kernels_c
    else:
        print("compiled extension not built; timing the fallback only")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'n':>6}" + "".join(f"{b + ' (us)':>16}" for b in backends) + f"{'speedup':>10}")
    for n in args.lengths:
        parents = random_parents(rng, n)
        dist = _kernels_py.tree_distances(parents)
        for name, call in (("tree_distances", lambda m: m.tree_distances(parents)),
                           ("gauss_matrix", lambda m: m.gauss_matrix(dist, 1.0))):
            ref = call(_kernels_py)
            times = {}
            for b, mod in backends.items():
                assert np.allclose(call(mod), ref, rtol=1e-15, atol=0), f"{b} disagrees on {name}"
                times[b] = best_of(lambda: call(mod), args.repeat, args.number) * 1e6
            speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
            print(f"{name:<16}{n:>6}" + "".join(f"{t:>16.2f}" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
