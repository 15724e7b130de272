import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localstab.core import Trajectory, make_driver
from localstab.jackson import JacksonSpec, simulate_jackson
from localstab.stats import (EmpiricalDistribution, chi_square_test, decode_state, encode_state,
                             geometric_fit_test, growth_rate, returns_to_zero, tail_exponent,
                             time_average, to_json, tv_distance, tv_noise_floor)


def _law(draw_weights):
    w = np.asarray(draw_weights, dtype=float)
    return w / w.sum()


weights = st.lists(st.floats(0.01, 10.0), min_size=4, max_size=4)


def test_tv_examples():
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance({"a": 1.0}, {"b": 1.0}) == 1.0
    assert tv_distance([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.25)


def test_tv_rejects_unnormalised():
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.4], [0.5, 0.5])


@given(weights, weights, weights)
def test_tv_metric_properties(a, b, c):
    p, q, r = _law(a), _law(b), _law(c)
    d = tv_distance(p, q)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert d == pytest.approx(tv_distance(q, p))
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, r) <= d + tv_distance(q, r) + 1e-12


def test_encode_roundtrip():
    s = (3, -1, 2**40)
    assert decode_state(encode_state(s)) == s


@given(st.lists(st.integers(0, 5), min_size=1, max_size=50),
       st.lists(st.integers(0, 5), min_size=1, max_size=50))
def test_merge_equals_pooled(a, b):
    ea = EmpiricalDistribution.from_states(a)
    eb = EmpiricalDistribution.from_states(b)
    pooled = EmpiricalDistribution.from_states(a + b)
    merged = (ea + eb).probabilities()
    for k, v in pooled.probabilities().items():
        assert merged[k] == pytest.approx(v)
    assert (ea + eb).total == len(a) + len(b)


def test_empirical_distribution_invariants():
    e = EmpiricalDistribution.from_states([[0, 1], [0, 1], [2, 0]])
    assert e.total == 3
    assert e.probability((0, 1)) == pytest.approx(2 / 3)
    assert sum(e.probabilities().values()) == pytest.approx(1.0)
    assert e.marginal(0) == pytest.approx({0: 2 / 3, 2: 1 / 3})


def test_csv_roundtrip(tmp_path):
    e = EmpiricalDistribution.from_states([[1, 2], [1, 2], [0, 0]])
    e.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "state,count,probability"
    assert lines[1].startswith("0|0,1,")


def test_growth_rate_examples():
    t = np.arange(100.0)
    assert growth_rate(Trajectory(t, np.full(100, 7))) == pytest.approx(0.0)
    assert growth_rate(Trajectory(t, t.astype(int))) == pytest.approx(1.0)


def test_growth_rate_linear_in_trajectories():
    t = np.arange(50.0)
    a = Trajectory(t, (3 * t).astype(int))
    b = Trajectory(t, (2 * t + (t % 3)).astype(int))
    assert growth_rate(a + b) == pytest.approx(growth_rate(a) + growth_rate(b))


def test_growth_rate_empty_window():
    with pytest.raises(ValueError):
        growth_rate(Trajectory([0.0], [[1]]))


def test_growth_rate_overloaded_mm1():
    spec = JacksonSpec([1.5], [1.0], [[0.0]])
    tr = simulate_jackson(spec, 20_000.0, make_driver(3))
    assert abs(growth_rate(tr) - 0.5) < 0.05


def test_time_average_weights_by_holding_time():
    tr = Trajectory([0.0, 1.0, 4.0, 5.0], [[0], [1], [0], [1]])
    e = time_average(tr)
    assert e.probability((0,)) == pytest.approx(2 / 5)
    assert e.probability((1,)) == pytest.approx(3 / 5)


def test_returns_to_zero():
    assert returns_to_zero([0, 1, 0, 0, 2, 1, 0]) == 2


def test_geometric_fit_exact_probabilities():
    rho = 0.5
    counts = {n: 1e6 * (1 - rho) * rho**n for n in range(60)}
    r = geometric_fit_test(counts, rho)
    assert r.statistic == pytest.approx(0.0, abs=1e-3)
    assert r.passed


def test_geometric_fit_detects_mismatch():
    x = np.random.default_rng(0).geometric(0.5, 10**5) - 1
    assert not geometric_fit_test(x, 0.9).passed


def test_geometric_fit_calibration():
    rng = np.random.default_rng(1)
    passes = sum(geometric_fit_test(rng.geometric(0.5, 10**5) - 1, 0.5).passed for _ in range(100))
    assert passes >= 95


def test_geometric_fit_range():
    with pytest.raises(ValueError):
        geometric_fit_test([0, 1], 1.0)


def test_chi_square_merges_sparse_bins():
    r = chi_square_test([10, 0, 0, 0], [0.97, 0.01, 0.01, 0.01])
    assert r.bins == 1 and r.dof == 0 and r.passed


def test_tail_exponent_pareto():
    u = np.random.default_rng(2).random(10**5)
    x = np.floor((1 - u) ** (-1 / 0.5))
    assert abs(tail_exponent(x) - 0.5) < 0.1


def test_tail_exponent_reflected_walk_returns():
    from localstab.coupling import sample_return_times
    t = sample_return_times(10**5, make_driver(4))
    assert abs(tail_exponent(t) - 0.5) < 0.1


def test_tail_exponent_errors():
    with pytest.raises(ValueError):
        tail_exponent(np.ones(5000))
    with pytest.raises(ValueError):
        tail_exponent(np.arange(1, 10))


def test_noise_floor_shrinks():
    p = [0.25, 0.25, 0.5]
    assert tv_noise_floor(p, 10**4) < tv_noise_floor(p, 10**2)


def test_to_json_rounds_and_sorts(tmp_path):
    text = to_json({"b": 1 / 3, "a": [np.float64(2.0), float("nan")], "c": np.int64(4)}, tmp_path / "x.json")
    d = json.loads(text)
    assert list(d) == ["a", "b", "c"]
    assert d["b"] == float(f"{1/3:.12g}") and d["a"][1] is None and d["c"] == 4
    assert (tmp_path / "x.json").read_text().strip() == text
