import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from localstab.core import Recursion, make_driver
from localstab.coupling import (ModulatedModel, benchmark_model, birth_death_model, cftp_sample, cftp_samples,
                                counterexample_path, erickson_estimate, reflected_walk, reproduce_at,
                                run_counterexample, sample_return_times, stationary_solve, verify_cftp,
                                verify_lemma1)
from localstab.stats import tv_distance


# ------------------------------------------------------------ stationary

def test_stationary_two_state():
    assert stationary_solve([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx([0.5, 0.5])


def test_stationary_birth_death():
    P = [[0.6, 0.4, 0.0], [0.6, 0.0, 0.4], [0.0, 0.6, 0.4]]
    pi = stationary_solve(P)
    ref = np.array([1, 2 / 3, 4 / 9])
    assert pi == pytest.approx(ref / ref.sum(), abs=1e-12)


def test_stationary_rejects_reducible():
    with pytest.raises(ValueError):
        stationary_solve(np.eye(3))


@given(st.integers(2, 8), st.integers(0, 2**31))
def test_stationary_is_invariant(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.random((n, n)) + 0.01
    P /= P.sum(axis=1, keepdims=True)
    pi = stationary_solve(P)
    assert pi @ P == pytest.approx(pi, abs=1e-12) and pi.sum() == pytest.approx(1.0)


def test_model_validation():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        ModulatedModel(P, np.eye(3), reflected_walk(0.7))
    with pytest.raises(ValueError):
        ModulatedModel([[0.0, 1.0], [1.0, 0.0]], np.eye(2), reflected_walk(0.7))  # periodic


# --------------------------------------------------------------- lemma 1

def test_modulated_benchmark_small():
    rep = verify_lemma1(benchmark_model(), 256, 5000, make_driver(1))
    assert rep["passed"], rep
    for s in rep["starts"]:
        assert s["x2_drift"] > 0
    assert rep["starts"][1]["tv"][0] > 0.1  # far from stationary after one step


def test_vacuous_modulation_matches_plain_mixing():
    P = benchmark_model().x1_kernel
    model = ModulatedModel(P, P, reflected_walk(0.3))
    rep = verify_lemma1(model, 16, 20_000, make_driver(2), starts=((0, 0),))
    pi = model.pi
    row = np.eye(len(pi))[0]
    exact = {}
    for n in range(1, 17):
        row = row @ P
        exact[n] = tv_distance(row, pi)
    for n, tv in zip(rep["checkpoints"], rep["starts"][0]["tv"]):
        assert tv == pytest.approx(exact[n], abs=0.02)


def test_modulated_warns_without_drift():
    with pytest.warns(UserWarning):
        verify_lemma1(ModulatedModel(benchmark_model().x1_kernel, np.eye(3), reflected_walk(0.2)),
                      64, 200, make_driver(3), starts=((0, 1000),))


# ------------------------------------------------------------------ CFTP

def test_cftp_contraction_couples_at_depth_one():
    def step(x, u):
        out = np.zeros_like(x)
        out[:, 1] = 1
        return out

    rec = Recursion(2, step, n_uniforms=2, monotone=False, name="contraction")
    r = cftp_sample(rec, 5, make_driver(4))
    assert (r.sample, r.coupling_time, r.levels_tried) == (0, 1, (1,))


def test_cftp_reproducible_at_double_depth():
    model = birth_death_model()
    rec = model.recursion()
    d = make_driver(5)
    for i in range(30):
        di = d.child(i)
        r = cftp_sample(rec, model.n_states - 1, di)
        assert reproduce_at(rec, model.n_states - 1, di, 2 * r.coupling_time) == r.sample
        assert r.levels_tried == tuple(2**j for j in range(len(r.levels_tried)))


def test_cftp_batch_equals_single():
    model = birth_death_model()
    rec = model.recursion()
    d = make_driver(6)
    batch = cftp_samples(rec, model.n_states - 1, d, 20)
    single = [cftp_sample(rec, model.n_states - 1, c) for c in d.children(20)]
    assert batch == single


def test_cftp_law_small():
    rep = verify_cftp(birth_death_model(), 5000, make_driver(7))
    assert rep["reproducible"] and rep["passed"], rep["chi_square"]


def test_cftp_depth_cap():
    model = birth_death_model()
    with pytest.raises(RuntimeError):
        cftp_sample(model.recursion(), model.n_states - 1, make_driver(8), max_depth=1)


# -------------------------------------------------------- return times

def first_passage_survival(n_max):
    """P(walk from 1 has not hit 0 by step n), by forward stepping of the killed walk."""
    size = n_max + 3
    p = np.zeros(size)
    p[1] = 1.0
    surv = []
    for _ in range(n_max):
        q = np.zeros(size)
        q[2:] += 0.5 * p[1:-1]
        q[:-1] += 0.5 * p[1:]
        q[0] = 0.0
        p = q
        surv.append(p.sum())
    return np.array(surv)


def test_return_time_law_matches_stepping():
    surv = first_passage_survival(401)  # surv[n-1] = P(T > n)
    t = sample_return_times(400_000, make_driver(9))
    assert np.mean(t == 1) == pytest.approx(0.5, abs=0.003)
    assert np.all((t == 1) | ((t % 2 == 0) & (t >= 2)))
    # P(t > 2m+2 | t > 1) = P(T > 2m+1)
    for m in (0, 1, 3, 10, 50, 199):
        emp = np.mean(t[t > 1] > 2 * m + 2)
        exact = surv[2 * m]
        assert emp == pytest.approx(exact, abs=4 * math.sqrt(exact * (1 - exact) / 200_000) + 1e-4)


def test_return_time_table_matches_stepping():
    from localstab.coupling import _g_table
    surv = first_passage_survival(401)
    g = _g_table()
    assert g[:200] == pytest.approx(surv[0:400:2], rel=1e-12)


def test_return_time_tail_is_half():
    t = sample_return_times(400_000, make_driver(10))
    tail = t[t > 1]
    x = np.array([1e2, 1e3, 1e4])
    p = np.array([np.mean(tail > v) for v in x])
    slope = np.polyfit(np.log(x), np.log(p), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)


# ------------------------------------------------------- counterexample

def test_counterexample_pathwise_rule():
    x1, x2 = counterexample_path(0.3, 20_000, make_driver(11))
    assert x1[0] == 0 and np.all(x1 >= 0) and np.all(x2 >= 0)


def test_conditional_run_drives_x1_to_zero():
    x1, x2 = counterexample_path(0.3, 2000, make_driver(12), conditional=True, x1_0=500)
    assert np.all(x2[1:] > 0)
    # one jump at the initial X2 = 0, then a unit decrease per step
    hit = int(np.argmax(x1 == 0))
    assert hit == 1 + x1[1] and np.all(x1[hit:] == 0)


def test_counterexample_small_run():
    out = run_counterexample(0.3, 20_000, 200, make_driver(13), horizons=[10_000, 20_000])
    h = out["hit_fraction"]
    assert 0.0 < h["10000"] <= h["20000"] < 1.0
    assert out["x1_median"]["20000"] > out["x1_median"]["10000"]
    with pytest.raises(ValueError):
        run_counterexample(0.6, 10, 2, make_driver(13))


def test_erickson_small_alpha_near_one():
    est = erickson_estimate(0.01, 200_000, make_driver(14))
    assert est["estimate"] == pytest.approx(1.0, abs=0.01)


def test_erickson_converges_at_moderate_alpha():
    d = make_driver(15)
    a = erickson_estimate(0.3, 500_000, d)["estimate"]
    b = erickson_estimate(0.3, 1_000_000, d)["estimate"]
    assert abs(b - a) / a < 0.05
    assert a > 1.0  # the criterion sum exceeds 1 for this alpha


def test_erickson_increases_with_alpha():
    d = make_driver(16)
    assert erickson_estimate(0.49, 200_000, d)["estimate"] > erickson_estimate(0.3, 200_000, d)["estimate"]
