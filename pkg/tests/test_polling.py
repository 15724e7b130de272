import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localstab.core import make_driver
from localstab.polling import Exhaustive, Gated, Limited, PollingSpec, parse_policy, served_count, simulate_polling


def test_parse_policy():
    assert parse_policy("exhaustive") == Exhaustive()
    assert parse_policy("Gated") == Gated()
    assert parse_policy("limited:3") == Limited(3)
    assert parse_policy({"limited": 2}) == Limited(2)
    for bad in ("fifo", "limited:0", {"gated": 1}):
        with pytest.raises(ValueError):
            parse_policy(bad)


def test_served_count_chain():
    for x in range(101):
        chain = [served_count(Limited(l), x) for l in (1, 2, 5, 50)]
        chain += [served_count("gated", x), served_count("exhaustive", x)]
        assert chain == sorted(chain) and chain[-1] == x
    with pytest.raises(ValueError):
        served_count("gated", -1)


@given(st.integers(1, 20), st.integers(0, 200))
def test_served_count_monotone_in_queue(l, x):
    for p in (Limited(l), Gated(), Exhaustive()):
        assert 0 <= served_count(p, x) <= served_count(p, x + 1) <= x + 1


def test_spec_validation():
    with pytest.raises(ValueError):
        PollingSpec((0.1,), (1.0, 1.0), ("gated",))
    with pytest.raises(ValueError):
        PollingSpec((-0.1,), (1.0,), ("gated",))
    with pytest.raises(ValueError):
        PollingSpec((0.1,), (-1.0,), ("gated",))


def test_zero_rates_stay_empty():
    res = simulate_polling(PollingSpec((0.0, 0.0), (1.0, 1.0), ("gated", "limited:1")), 100, make_driver(1))
    assert res.trajectory.states.max() == 0
    assert res.verdicts() == ["stable", "stable"]
    assert res.epochs[-1] == pytest.approx(199.0)


def test_single_station_exhaustive_zero_walk():
    res = simulate_polling(PollingSpec((0.5,), (0.0,), ("exhaustive",)), 200_000, make_driver(2))
    assert abs(res.growth_rates[0]) < 0.01
    assert res.verdicts() == ["stable"]


def test_gated_serves_only_present_customers():
    spec = PollingSpec((0.9,), (0.0,), ("gated",))
    res = simulate_polling(spec, 50, make_driver(3), q0=[5])
    rec = res.trajectory.states[:, 0]
    # with zero walk time a gated visit lasts exactly as many units as customers found
    found, spent = rec[1:-1], np.diff(res.epochs[1:])
    busy = found > 0
    assert busy.sum() > 10
    assert np.allclose(spent[busy], found[busy])


def test_exhaustive_leaves_station_empty():
    spec = PollingSpec((0.3, 0.3), (0.5, 0.5), ("exhaustive", "exhaustive"))
    res = simulate_polling(spec, 2000, make_driver(4))
    assert res.verdicts() == ["stable", "stable"]


def test_limited_split():
    spec = PollingSpec((0.5, 0.1), (0.5, 0.5), ("limited:1", "limited:1"))
    res = simulate_polling(spec, 20_000, make_driver(6))
    assert res.verdicts() == ["unstable", "stable"]
    assert res.growth_rates[0] > 0.05


def test_deterministic():
    spec = PollingSpec((0.4, 0.2, 0.1), (0.2, 0.3, 0.1), ("gated", "limited:2", "exhaustive"))
    a = simulate_polling(spec, 500, make_driver(7))
    b = simulate_polling(spec, 500, make_driver(7))
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert np.array_equal(a.epochs, b.epochs)
