"""Wall-clock comparison of the compiled kernels and the pure-Python fallback.

Both backends are fed the same keys, so the benchmark also confirms they
return identical output.  Run with ``python3 benchmarks/bench_kernels.py``.
"""

import argparse
import time

import numpy as np

from localstab import _kernels

KEY = _kernels.python_backend.make_key(2024, 0)


def cases(scale: float):
    n = lambda base: max(1, int(base * scale))
    return {
        "jackson tandem": ("jackson_run", lambda b: b.jackson_run(
            np.array([1.5, 0.0]), np.array([1.0, 2.0]), np.array([[0.0, 1.0], [0.0, 0.0]]),
            np.zeros(2, dtype=np.int64), float(n(20_000)), KEY)),
        "fcfs n-system": ("fcfs_run", lambda b: b.fcfs_run(
            [0.4, 0.3], [0.5, 0.5], np.array([[1, 0], [1, 1]], dtype=np.int8),
            [-1, -1], [], [], [0, 1], 0, n(50_000), KEY)),
        "csma n=5 k=2": ("csma_run", lambda b: b.csma_run(5, 2, -1.0, [0] * 5, n(50_000), KEY)),
        "counterexample": ("counterexample_run", lambda b: b.counterexample_run(
            0.3, n(200_000), 0, 0, False, [], KEY, False)),
    }


def _same(a, b) -> bool:
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--scale", type=float, default=1.0, help="multiply every workload size")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    py, cy = _kernels.python_backend, _kernels.compiled_backend
    if cy is None:
        print("compiled backend not available; only the Python timings are shown")
    print(f"{'kernel':18s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s}  identical")
    for name, (_, fn) in cases(args.scale).items():
        tp, op = timed(lambda: fn(py), args.repeat)
        if cy is None:
            print(f"{name:18s} {tp:10.3f} {'-':>11s} {'-':>9s}  -")
            continue
        tc, oc = timed(lambda: fn(cy), args.repeat)
        print(f"{name:18s} {tp:10.3f} {tc:11.4f} {tp / tc:8.1f}x  {_same(op, oc)}")


if __name__ == "__main__":
    main()
