"""The compiled and pure-Python kernels must agree bit for bit."""

import numpy as np
import pytest

from localstab import _kernels

py = _kernels.python_backend
cy = _kernels.compiled_backend
needs_cy = pytest.mark.skipif(cy is None, reason="compiled kernels not built")
KEY = py.make_key(123, 4)


def _eq(a, b):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _eq(x, y)
    elif isinstance(a, (list, np.ndarray)):
        assert np.array_equal(np.asarray(a), np.asarray(b))
    else:
        assert a == b


@needs_cy
@pytest.mark.parametrize("n", [-7, 0, 3, 2**40])
def test_rng_parity(n):
    assert cy.make_key(5, 6) == py.make_key(5, 6)
    for sub in range(3):
        assert cy.uniform(KEY, n, sub) == py.uniform(KEY, n, sub)


@needs_cy
def test_jackson_parity():
    nu = np.array([1.5, 0.2, 0.0])
    mu = np.array([1.0, 2.0, 1.5])
    P = np.array([[0.0, 0.7, 0.2], [0.0, 0.0, 0.5], [0.1, 0.0, 0.0]])
    args = (nu, mu, P, np.array([0, 3, 1]), 200.0, KEY)
    _eq(cy.jackson_run(*args), py.jackson_run(*args))


@needs_cy
def test_fcfs_parity():
    comp = np.array([[1, 0, 1], [1, 1, 0], [0, 1, 1]], dtype=np.int8)
    args = ([0.7, 0.5, 0.6], [0.5, 0.4, 0.6], comp, [-1, -1, -1], [], [], [0, 1, 2], 0, 3000, KEY)
    _eq(cy.fcfs_run(*args), py.fcfs_run(*args))


@needs_cy
@pytest.mark.parametrize("lam", [-1.0, 0.45])
def test_csma_parity(lam):
    _eq(cy.csma_run(5, 2, lam, [0, 2, 0, 1, 0], 3000, KEY), py.csma_run(5, 2, lam, [0, 2, 0, 1, 0], 3000, KEY))
    assert list(cy.csma_priorities(KEY, 17, 6)) == list(py.csma_priorities(KEY, 17, 6))


@needs_cy
@pytest.mark.parametrize("conditional", [False, True])
def test_counterexample_parity(conditional):
    args = (0.3, 20000, 0, 0, conditional, [10, 5000, 20000], KEY, True)
    _eq(cy.counterexample_run(*args), py.counterexample_run(*args))
    for u in (0.0, 0.5, 1 - 2**-53):
        assert cy.heavy_jump(u, 0.3) == py.heavy_jump(u, 0.3)


def test_priorities_are_permutations():
    for t in range(200):
        p = py.csma_priorities(KEY, t, 5)
        assert sorted(p) == list(range(5))


def test_priorities_uniform_over_orders():
    from collections import Counter
    from scipy import stats
    c = Counter(tuple(py.csma_priorities(KEY, t, 3)) for t in range(12000))
    assert len(c) == 6
    assert stats.chisquare(list(c.values())).pvalue > 1e-3


def test_heavy_jump_law():
    u = np.linspace(0, 1, 10001, endpoint=False)
    jumps = np.array([py.heavy_jump(x, 0.4) for x in u])
    for m in (1, 2, 5, 50):
        assert np.mean(jumps >= m) == pytest.approx(m**-0.4, abs=2e-3)
    assert py.heavy_jump(1 - 2**-53, 0.01) == py.JUMP_CAP


def test_backend_selection():
    assert _kernels.BACKEND in ("cython", "python")
    if cy is not None:
        assert _kernels.BACKEND == "cython" or __import__("os").environ.get("LOCALSTAB_BACKEND") == "python"


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / "benchmarks" / "bench_kernels.py"
    mod = runpy.run_path(str(path), run_name="bench")
    mod["main"](["--scale", "0.01", "--repeat", "1"])
    out = capsys.readouterr().out
    assert "csma n=5 k=2" in out and "False" not in out
