import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from localstab.core import make_driver
from localstab.jackson import (CRITICAL, STABLE, UNSTABLE, JacksonSpec, augmented_subnetwork,
                               product_form_prediction, simulate_jackson, simulate_jackson_counts,
                               solve_traffic, solve_traffic_from_above, traffic_map,
                               tv_to_product_geometric, verify_local_stability)
from localstab.stats import EmpiricalDistribution, time_average

TANDEM = JacksonSpec([1.5, 0.0], [1.0, 2.0], [[0.0, 1.0], [0.0, 0.0]])


def lcp_oracle(spec):
    """Guess the saturated set, solve the linear system, repeat until consistent."""
    I = spec.I
    sat = np.zeros(I, dtype=bool)
    for _ in range(4 * I + 4):
        A = np.eye(I) - spec.P.T @ np.diag(~sat)
        b = spec.nu + spec.P.T @ np.where(sat, spec.mu, 0.0)
        lam = np.linalg.solve(A, b)
        new = lam > spec.mu
        if np.array_equal(new, sat):
            return lam
        sat = new
    raise AssertionError("oracle did not settle")


@st.composite
def networks(draw, max_nodes=6):
    I = draw(st.integers(1, max_nodes))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    P = rng.random((I, I)) * (rng.random((I, I)) < 0.5)
    P *= rng.uniform(0.2, 0.95) / np.maximum(P.sum(axis=1, keepdims=True), 1e-9)
    return JacksonSpec(rng.uniform(0, 2, I), rng.uniform(0.3, 2, I), P)


def test_no_routing_example():
    sol = solve_traffic(JacksonSpec([0.5], [1.0], [[0.0]]))
    assert sol.lam.tolist() == [0.5] and sol.classes == (STABLE,) and sol.rho[0] == 0.5


def test_tandem_example():
    sol = solve_traffic(TANDEM)
    assert sol.lam == pytest.approx([1.5, 1.0])
    assert sol.classes == (UNSTABLE, STABLE)
    assert product_form_prediction(sol) == {1: pytest.approx(0.5)}


def test_critical_tandem_example():
    sol = solve_traffic(JacksonSpec([1.2, 0.0], [1.0, 1.0], [[0, 1], [0, 0]]))
    assert sol.lam == pytest.approx([1.2, 1.0])
    assert sol.classes == (UNSTABLE, CRITICAL)
    assert product_form_prediction(sol) == {}


def test_all_stable_prediction():
    sol = solve_traffic(JacksonSpec([0.5, 0.0], [1, 1], [[0, 1], [0, 0]]))
    assert product_form_prediction(sol) == {0: pytest.approx(0.5), 1: pytest.approx(0.5)}


def test_explicit_critical_assertion():
    sol = solve_traffic(JacksonSpec([0.5], [1.0], [[0.0]]), critical=[0])
    assert sol.classes == (CRITICAL,)


@pytest.mark.parametrize("bad", [
    dict(nu=[-1.0], mu=[1.0], P=[[0.0]]),
    dict(nu=[1.0], mu=[0.0], P=[[0.0]]),
    dict(nu=[1.0, 1.0], mu=[1.0, 1.0], P=[[0.0, 1.0], [1.0, 0.0]]),
    dict(nu=[1.0], mu=[1.0, 2.0], P=[[0.0]]),
    dict(nu=[1.0], mu=[1.0], P=[[-0.1]]),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        JacksonSpec.from_dict(bad)


@given(networks())
def test_traffic_matches_linear_oracle(spec):
    sol = solve_traffic(spec)
    assert sol.residual < 1e-10
    assert np.allclose(sol.lam, lcp_oracle(spec), rtol=1e-9, atol=1e-9)
    assert np.allclose(solve_traffic_from_above(spec), sol.lam, atol=1e-9)
    assert np.all(sol.lam >= spec.nu - 1e-12)
    assert np.all(sol.lam <= spec.nu + spec.P.T @ spec.mu + 1e-9)


@given(networks(4))
def test_iteration_from_below_is_nondecreasing(spec):
    lam = spec.nu.copy()
    for _ in range(50):
        new = traffic_map(spec, lam)
        assert np.all(new >= lam - 1e-12)
        lam = new


def test_augmented_subnetwork_examples():
    sub, keep = augmented_subnetwork(TANDEM, solve_traffic(TANDEM))
    assert keep == [1]
    assert sub.nu.tolist() == [1.0] and sub.mu.tolist() == [2.0]
    # three-node line, middle node unstable
    P = np.array([[0, 1.0, 0], [0.3, 0, 0.6], [0, 0, 0]])
    spec = JacksonSpec([0.2, 2.0, 0.1], [1.0, 1.0, 1.5], P)
    sol = solve_traffic(spec)
    assert sol.classes[1] == UNSTABLE and sol.stable == [0, 2]
    sub, keep = augmented_subnetwork(spec, sol)
    assert sub.nu == pytest.approx([0.2 + 0.3, 0.1 + 0.6])
    # the subnetwork's own solution reproduces the stable throughputs
    assert solve_traffic(sub).lam == pytest.approx(sol.lam[keep])


def test_augmented_all_stable_is_identity():
    spec = JacksonSpec([0.5, 0.0], [1, 1], [[0, 1], [0, 0]])
    sub, keep = augmented_subnetwork(spec, solve_traffic(spec))
    assert keep == [0, 1] and np.array_equal(sub.P, spec.P) and np.array_equal(sub.nu, spec.nu)


def test_simulation_empty_network_stays_empty():
    tr = simulate_jackson(JacksonSpec([0.0, 0.0], [1.0, 2.0], [[0, 1], [0, 0]]), 100.0, make_driver(0))
    assert not tr.states.any()


def test_mm1_idle_probability():
    tr = simulate_jackson(JacksonSpec([0.5], [1.0], [[0.0]]), 1e5, make_driver(1))
    assert abs(time_average(tr).probability((0,)) - 0.5) < 0.02


def test_conservation_and_reproducibility():
    spec = JacksonSpec([0.7, 0.2], [1.0, 1.0], [[0, 0.5], [0.3, 0]])
    tr, arr, dep = simulate_jackson_counts(spec, 500.0, make_driver(2), x0=[3, 1])
    assert tr.states[-1].sum() == 4 + arr - dep
    assert np.all(np.abs(np.diff(tr.states.sum(axis=1))) <= 1)
    tr2 = simulate_jackson(spec, 500.0, make_driver(2), x0=[3, 1])
    assert np.array_equal(tr.states, tr2.states) and np.array_equal(tr.times, tr2.times)


def test_all_stable_joint_law_product_form():
    spec = JacksonSpec([0.4, 0.1], [1.0, 1.0], [[0, 0.5], [0.2, 0]])
    sol = solve_traffic(spec)
    tr = simulate_jackson(spec, 3e5, make_driver(3))
    tv = tv_to_product_geometric(time_average(tr, 0.05), [sol.rho[0], sol.rho[1]])
    assert tv < 0.05


def test_tv_to_product_geometric_exact_law_is_zero():
    rho = [0.5]
    counts = {(n,): 0.5**(n + 1) for n in range(31)}
    counts[(31,)] = 0.5**31  # overflow mass
    emp = EmpiricalDistribution({EmpiricalDistribution.from_states([[k[0]]]).counts.popitem()[0]: v
                                 for k, v in counts.items()})
    assert tv_to_product_geometric(emp, rho) == pytest.approx(0.0, abs=1e-12)


def test_local_stability_report_small():
    rep = verify_local_stability(TANDEM, 300.0, 200, make_driver(4), tv_tol=0.1, growth_tol=0.1)
    assert rep.classes == [UNSTABLE, STABLE]
    assert set(rep.product_form) == {"empty", "large"}
    assert rep.growth["0"]["empty"]["predicted"] == pytest.approx(0.5)
    assert rep.passed


def test_local_stability_all_stable_reduces_to_product_form():
    spec = JacksonSpec([0.5], [1.0], [[0.0]])
    rep = verify_local_stability(spec, 200.0, 300, make_driver(5), tv_tol=0.1)
    assert rep.growth == {} and rep.product_form["empty"]["passed"]


def test_critical_signature():
    spec = JacksonSpec([1.2, 0.0], [1.0, 1.0], [[0, 1], [0, 0]])
    rep = verify_local_stability(spec, 1000.0, 300, make_driver(6), growth_tol=0.1)
    crit = rep.critical["1"]
    assert crit["signature"]
    first, last = crit["checkpoints"][0], crit["checkpoints"][-1]
    assert last["p"][0] < first["p"][0]
    assert last["mean_returns_to_zero"] > first["mean_returns_to_zero"]


def test_workers_do_not_change_results():
    a = verify_local_stability(TANDEM, 100.0, 8, make_driver(7), workers=1).to_dict()
    b = verify_local_stability(TANDEM, 100.0, 8, make_driver(7), workers=2).to_dict()
    assert a == b
