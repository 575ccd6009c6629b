"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and size with the median time of each backend
and the speedup.  Outputs are checked for agreement before timing.
"""
import argparse
import statistics
import time

import numpy as np

from mobistore import _kernels_py

try:
    from mobistore import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _min_plus_case(rng, layers, width):
    W = rng.normal(size=(layers - 1, width, width))
    W[rng.uniform(size=W.shape) < 0.2] = np.inf
    return W, rng.normal(size=width)


def _soc_case(rng, n, z):
    D = rng.uniform(0.0, 0.6, (n, n))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0.0)
    limits = 0.011 * (1.0 - D)
    return rng.normal(30.0, 10.0, n), D, 2.0, limits, 0.05 / z, z, np.ones(n, dtype=bool)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels_c is None:
        print("compiled extension not importable; build it with `pip install -e . --no-build-isolation`")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'size':>16}{'cython s':>12}{'numpy s':>12}{'speedup':>10}")
    for layers, width in ((24, 50), (24, 150), (24, 300)):
        W, term = _min_plus_case(rng, layers, width)
        c, p = _kernels_c.backward_min_plus(W, term), _kernels_py.backward_min_plus(W, term)
        np.testing.assert_allclose(c[0], p[0])
        tc = _median_time(lambda: _kernels_c.backward_min_plus(W, term), args.repeat)
        tp = _median_time(lambda: _kernels_py.backward_min_plus(W, term), args.repeat)
        print(f"{'backward_min_plus':<18}{f'{layers}x{width}':>16}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")
    for n, z in ((3, 50), (3, 100), (6, 100)):
        case = _soc_case(rng, n, z)
        np.testing.assert_allclose(_kernels_c.soc_edge_weights(*case), _kernels_py.soc_edge_weights(*case))
        tc = _median_time(lambda: _kernels_c.soc_edge_weights(*case), args.repeat)
        tp = _median_time(lambda: _kernels_py.soc_edge_weights(*case), args.repeat)
        print(f"{'soc_edge_weights':<18}{f'n={n} z={z}':>16}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
