"""Modulated chains: convergence harness, backward coupling, counterexample.

A modulated chain has a finite component ``X1`` and a component ``X2`` on
the non-negative integers.  While ``X2 > 0`` the first component moves by a
fixed ergodic kernel; at ``X2 = 0`` it may follow a different rule.  When
``X2`` drifts to infinity, ``X1`` converges in law to the stationary law of
that kernel.  This module checks the convergence statistically, draws exact
samples of the limit by monotone coupling from the past, and simulates a
heavy-tailed example in which the convergence fails.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg as _la
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .core import RandomDriver, Recursion, batch_uniform, map_replications
from .stats import chi_square_test, tail_exponent, tv_distance, tv_noise_floor

CFTP_MAX_DEPTH = 2**24


# ------------------------------------------------------------- stationary law

def stationary_solve(kernel) -> np.ndarray:
    """Stationary law of a finite irreducible stochastic matrix."""
    P = np.asarray(kernel, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("kernel must be square")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("kernel rows must be probability vectors")
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise ValueError("kernel is reducible")
    S = P.shape[0]
    A = P.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    pi = _la.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    res = float(np.max(np.abs(pi @ P - pi)))
    if res >= 1e-12:
        raise RuntimeError(f"stationary residual {res:.3g} too large")
    return pi


def _inverse_cdf(cum: np.ndarray, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    rows = cum[x]
    return np.minimum((u[:, None] >= rows).sum(axis=1), cum.shape[1] - 1)


# ---------------------------------------------------------- modulated model

def reflected_walk(up: float) -> Callable:
    """X2 rule: +1 with probability ``up``, else -1, reflected at 0."""

    def step(x1, x2, u):
        return np.where(u < up, x2 + 1, np.maximum(x2 - 1, 0))

    step.up = up
    return step


@dataclass
class ModulatedModel:
    """Joint chain on (X1, X2).

    ``x1_kernel`` drives X1 while X2 > 0 and ``boundary_kernel`` while
    X2 = 0 (the identity freezes X1).  ``x2_step(x1, x2, u)`` is a vectorised
    rule for X2.  Each step reads two uniforms: sub 0 for X1 by inversion,
    sub 1 for X2.
    """

    x1_kernel: np.ndarray
    boundary_kernel: np.ndarray
    x2_step: Callable
    name: str = "modulated"
    pi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.x1_kernel = np.asarray(self.x1_kernel, dtype=float)
        self.boundary_kernel = np.asarray(self.boundary_kernel, dtype=float)
        if self.boundary_kernel.shape != self.x1_kernel.shape:
            raise ValueError("boundary kernel must match the X1 kernel")
        if np.any(self.boundary_kernel < 0) or not np.allclose(self.boundary_kernel.sum(axis=1), 1.0):
            raise ValueError("boundary kernel rows must be probability vectors")
        self.pi = stationary_solve(self.x1_kernel)
        if _period(self.x1_kernel) != 1:
            raise ValueError("X1 kernel must be aperiodic")
        self._cum = np.cumsum(self.x1_kernel, axis=1)
        self._bcum = np.cumsum(self.boundary_kernel, axis=1)

    @property
    def n_states(self) -> int:
        return self.x1_kernel.shape[0]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x1 = x[:, 0]
        x2 = x[:, 1]
        inner = _inverse_cdf(self._cum, x1, u[:, 0])
        edge = _inverse_cdf(self._bcum, x1, u[:, 0])
        y1 = np.where(x2 > 0, inner, edge)
        y2 = self.x2_step(x1, x2, u[:, 1])
        return np.stack([y1, y2], axis=1).astype(np.int64)

    def recursion(self) -> Recursion:
        return Recursion(2, self.step, n_uniforms=2, monotone=False, name=self.name)


def _period(P: np.ndarray) -> int:
    A = (P > 0).astype(int)
    S = len(A)
    M = np.eye(S, dtype=int)
    returns = []
    for n in range(1, 2 * S * S + 1):
        M = np.minimum(M @ A, 1)
        if M[0, 0]:
            returns.append(n)
    return int(np.gcd.reduce(returns)) if returns else 0


def benchmark_model() -> ModulatedModel:
    """3-state ergodic X1, frozen at X2 = 0; X2 reflected walk with up 0.7."""
    P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
    return ModulatedModel(P, np.eye(3), reflected_walk(0.7), "benchmark")


def birth_death_model(size: int = 11, up: float = 0.3, down: float = 0.4, x2_up: float = 0.7) -> ModulatedModel:
    """Monotone X1 birth-death on {0..size-1}; X1 steps down while X2 = 0."""
    P = np.zeros((size, size))
    B = np.zeros((size, size))
    for i in range(size):
        P[i, min(i + 1, size - 1)] += up
        P[i, max(i - 1, 0)] += down
        P[i, i] += 1.0 - up - down
        B[i, max(i - 1, 0)] = 1.0
    return ModulatedModel(P, B, reflected_walk(x2_up), "birth-death")


# ------------------------------------------------- convergence harness

def _power_checkpoints(horizon: int) -> list[int]:
    cps = [1 << i for i in range(int(math.log2(horizon)) + 1) if (1 << i) <= horizon]
    if cps[-1] != horizon:
        cps.append(horizon)
    return cps


def verify_lemma1(model: ModulatedModel, horizon: int, replications: int, driver: RandomDriver,
                  starts=((0, 0), (0, 1000)), checkpoints=None, eps: float = 0.02) -> dict:
    """TV between the across-replication law of X1(n) and the stationary law.

    All replications of a start share child streams, so runs from different
    starts are driven by the same uniforms.
    """
    cps = sorted(set(checkpoints or _power_checkpoints(horizon)))
    keys = np.array([d.key for d in driver.children(replications)], dtype=np.uint64)
    pi = model.pi
    report = dict(pi=pi.tolist(), checkpoints=cps, eps=eps, starts=[], horizon=horizon,
                  replications=replications,
                  noise_floor=tv_noise_floor(pi, replications))
    drifts = []
    for x1_0, x2_0 in starts:
        x = np.tile(np.array([x1_0, x2_0], dtype=np.int64), (replications, 1))
        curve = []
        ci = 0
        for n in range(horizon):
            u = np.stack([batch_uniform(keys, n, 0), batch_uniform(keys, n, 1)], axis=1)
            x = model.step(x, u)
            while ci < len(cps) and cps[ci] == n + 1:
                emp = np.bincount(x[:, 0], minlength=model.n_states) / replications
                curve.append(tv_distance(emp, pi))
                ci += 1
        drift = float((x[:, 1].mean() - x2_0) / horizon)
        drifts.append(drift)
        report["starts"].append(dict(x1=x1_0, x2=x2_0, tv=curve, final_tv=curve[-1],
                                     x2_drift=drift, passed=bool(curve[-1] < eps)))
    if min(drifts) <= 0:
        warnings.warn("estimated X2 drift is not positive; the convergence premise may fail")
    report["passed"] = all(s["passed"] for s in report["starts"])
    return report


# -------------------------------------------------------------------- CFTP

@dataclass(frozen=True)
class CftpResult:
    sample: int
    coupling_time: int
    levels_tried: tuple


def _run_window(step, keys, depth, x1_top):
    """Run bottom, hat and top chains from time -depth to 0."""
    N = len(keys)
    bottom = np.zeros((N, 2), dtype=np.int64)
    hat = np.zeros((N, 2), dtype=np.int64)
    hat[:, 1] = 1
    top = np.zeros((N, 2), dtype=np.int64)
    top[:, 0] = x1_top
    top[:, 1] = 1
    # last time in [-depth, -1] with bottom X2 = 0; first time top met hat (1 = never)
    last_zero = np.full(N, -depth, dtype=np.int64)
    met = np.full(N, 1, dtype=np.int64)
    for t in range(-depth, 0):
        u = np.stack([batch_uniform(keys, t, 0), batch_uniform(keys, t, 1)], axis=1)
        bottom = step(bottom, u)
        hat = np.stack([step(hat, u)[:, 0], np.ones(N, dtype=np.int64)], axis=1)
        top = np.stack([step(top, u)[:, 0], np.ones(N, dtype=np.int64)], axis=1)
        if t + 1 < 0:
            last_zero = np.where(bottom[:, 1] == 0, t + 1, last_zero)
        met = np.where((met == 1) & (hat[:, 0] == top[:, 0]), t + 1, met)
    return bottom[:, 0], hat[:, 0], top[:, 0], met, last_zero


def cftp_samples(rec: Recursion, x1_top: int, driver: RandomDriver, n_samples: int,
                 max_depth: int = CFTP_MAX_DEPTH, start_depth: int = 1) -> list[CftpResult]:
    """Exact samples of the X1 limit law, one child stream per sample.

    Depths double from ``start_depth``.  A window is accepted when the top
    and hatted chains agree at time 0, the bottom joint chain agrees with
    them, and the bottom chain's X2 stayed positive from the time top and
    hat met until time 0.
    """
    if rec.state_dim != 2:
        raise ValueError("backward coupling needs a recursion on (X1, X2)")
    drivers = driver.children(n_samples)
    keys = np.array([d.key for d in drivers], dtype=np.uint64)
    results: list[CftpResult | None] = [None] * n_samples
    prev_hat = np.full(n_samples, -1, dtype=np.int64)
    levels: list[list[int]] = [[] for _ in range(n_samples)]
    active = np.arange(n_samples)
    depth = start_depth
    while active.size and depth <= max_depth:
        b, h, t, met, last_zero = _run_window(rec.step, keys[active], depth, x1_top)
        if np.any(h < prev_hat[active]):
            raise AssertionError("hatted chain decreased with depth; recursion is not monotone")
        prev_hat[active] = h
        for i in active:
            levels[i].append(depth)
        ok = (h == t) & (b == t) & (met <= 0) & (last_zero < met)
        for j in np.flatnonzero(ok):
            i = active[j]
            results[i] = CftpResult(int(t[j]), depth, tuple(levels[i]))
        active = active[~ok]
        depth *= 2
    if active.size:
        raise RuntimeError(f"{active.size} samples did not coalesce by depth {max_depth}")
    return results


def cftp_sample(rec: Recursion, x1_top: int, driver: RandomDriver, max_depth: int = CFTP_MAX_DEPTH,
                start_depth: int = 1) -> CftpResult:
    """Single exact sample driven by ``driver`` itself."""
    if rec.state_dim != 2:
        raise ValueError("backward coupling needs a recursion on (X1, X2)")
    keys = np.array([driver.key], dtype=np.uint64)
    levels = []
    prev = -1
    depth = start_depth
    while depth <= max_depth:
        b, h, t, met, last_zero = _run_window(rec.step, keys, depth, x1_top)
        if h[0] < prev:
            raise AssertionError("hatted chain decreased with depth; recursion is not monotone")
        prev = h[0]
        levels.append(depth)
        if h[0] == t[0] and b[0] == t[0] and met[0] <= 0 and last_zero[0] < met[0]:
            return CftpResult(int(t[0]), depth, tuple(levels))
        depth *= 2
    raise RuntimeError(f"no coalescence by depth {max_depth}")


def reproduce_at(rec: Recursion, x1_top: int, driver: RandomDriver, depth: int) -> int:
    """Time-0 value of the top chain started at ``-depth``."""
    keys = np.array([driver.key], dtype=np.uint64)
    _, _, t, _, _ = _run_window(rec.step, keys, depth, x1_top)
    return int(t[0])


def verify_cftp(model: ModulatedModel, n_samples: int, driver: RandomDriver, threshold: float = 0.01,
                reproduce: int | None = None) -> dict:
    """Chi-square of exact samples against the stationary law, plus a depth
    reproducibility check (recompute at twice the coupling time)."""
    rec = model.recursion()
    x1_top = model.n_states - 1
    res = cftp_samples(rec, x1_top, driver, n_samples)
    samples = np.array([r.sample for r in res])
    obs = np.bincount(samples, minlength=model.n_states)
    chi = chi_square_test(obs, model.pi, threshold)
    nus = np.array([r.coupling_time for r in res])
    n_rep = n_samples if reproduce is None else min(reproduce, n_samples)
    keys = np.array([d.key for d in driver.children(n_rep)], dtype=np.uint64)
    depths = 2 * nus[:n_rep]
    same = True
    for d in np.unique(depths):
        sel = np.flatnonzero(depths == d)
        _, _, t, _, _ = _run_window(rec.step, keys[sel], int(d), x1_top)
        same &= bool(np.array_equal(t, samples[sel]))
    return dict(chi_square=chi.to_dict(), histogram=obs.tolist(), pi=model.pi.tolist(),
                reproducible=same, reproduced=n_rep, coupling_time_mean=float(nus.mean()),
                coupling_time_max=int(nus.max()), passed=bool(chi.passed and same))


# ----------------------------------------------------------- counterexample

def _counterexample_rep(args):
    alpha, horizon, key, checkpoints, x1_0, x2_0 = args
    tau, cps, returns, _ = _kernels.counterexample_run(alpha, horizon, x1_0, x2_0, False,
                                                       checkpoints, key, False)
    return tau, cps, returns


def run_counterexample(alpha: float, horizon: int, replications: int, driver: RandomDriver,
                       horizons=None, x1_0: int = 0, x2_0: int = 0, workers: int = 1,
                       top_fraction: float = 0.1) -> dict:
    """Reflected walk X2 modulating X1 by -1 steps and Pareto jumps at X2 = 0.

    Reports the fraction of paths on which X1 has returned to 0 by each
    horizon, the growth of X1, and the tail exponent of X2's return times.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    horizons = sorted(set(horizons or [horizon // 4, horizon // 2, horizon]))
    if horizons[-1] > horizon:
        raise ValueError("reporting horizons exceed the simulated horizon")
    items = [(alpha, horizon, d.key, horizons, x1_0, x2_0) for d in driver.children(replications)]
    out = map_replications(_counterexample_rep, items, workers)
    taus = np.array([o[0] for o in out])
    x1 = np.array([o[1] for o in out], dtype=float)
    returns = np.concatenate([o[2] for o in out]) if out else np.zeros(0, dtype=np.int64)
    hit = {h: float(np.mean((taus > 0) & (taus <= h))) for h in horizons}
    try:
        tail = tail_exponent(returns, top_fraction)
    except ValueError:
        tail = float("nan")
    return dict(
        alpha=alpha, horizon=horizon, replications=replications,
        hit_fraction={str(h): v for h, v in hit.items()},
        x1_mean={str(h): float(m) for h, m in zip(horizons, x1.mean(axis=0))},
        x1_median={str(h): float(m) for h, m in zip(horizons, np.median(x1, axis=0))},
        n_return_times=int(returns.size), tail_exponent=tail,
    )


def counterexample_path(alpha: float, horizon: int, driver: RandomDriver, conditional: bool = False,
                        x1_0: int = 0, x2_0: int = 0):
    """Recorded (x1, x2) path; checks the -1 increments while X2 was positive."""
    _, _, _, path = _kernels.counterexample_run(alpha, horizon, x1_0, x2_0, conditional, [], driver.key, True)
    x1, x2 = path
    d1 = np.diff(x1)
    pos = x2[:-1] > 0
    expect = np.where(x1[:-1] > 0, -1, 0)
    if not np.array_equal(d1[pos], expect[pos]):
        raise AssertionError("X1 moved other than by -1 while X2 was positive")
    if np.any(d1[~pos] < 1):
        raise AssertionError("X1 failed to jump while X2 was at 0")
    return x1, x2


# ---------------------------------------------------- exact return times

_G_TABLE_SIZE = 1 << 20


def _g_table() -> np.ndarray:
    """g[m] = C(2m+2, m+1) / 4^(m+1), the chance a walk from 1 has not hit 0 by step 2m+1."""
    m = np.arange(_G_TABLE_SIZE - 1, dtype=float)
    ratios = (2 * m + 3) / (2 * m + 4)
    return np.concatenate([[0.5], 0.5 * np.cumprod(ratios)])


_G = None


def _g():
    global _G
    if _G is None:
        _G = _g_table()
    return _G


def _asymptotic_m(u: np.ndarray) -> np.ndarray:
    """Smallest m with g(m) <= u from C(2n,n)/4^n ~ (pi n)^-1/2 (1 - 1/(8n))."""
    n = 1.0 / (math.pi * u * u)
    for _ in range(3):
        n = (1.0 - 1.0 / (8.0 * n)) ** 2 / (math.pi * u * u)
    return np.ceil(n) - 1.0


def sample_return_times(n: int, driver: RandomDriver, offset: int = 0) -> np.ndarray:
    """Exact i.i.d. return times to 0 of the simple walk reflected at 0.

    With probability 1/2 the walk stays at 0 (time 1); otherwise it returns
    after 1 + T steps, T the hitting time of 0 from 1, sampled by inverting
    its tail. Returned as floats because the tail is unbounded.
    """
    idx = np.arange(offset, offset + n)
    stay = driver.uniforms(idx, 0) < 0.5
    u = 1.0 - driver.uniforms(idx, 1)
    g = _g()
    # g is decreasing: m = first index with g[m] <= u
    m = np.searchsorted(-g, -u, side="left").astype(float)
    deep = m >= len(g)
    if np.any(deep):
        m[deep] = _asymptotic_m(u[deep])
    t = 2.0 * m + 2.0
    return np.where(stay, 1.0, t)


def erickson_estimate(alpha: float, excursions: int, driver: RandomDriver, offset: int = 0) -> dict:
    """Monte-Carlo estimate of (1 - alpha) E[t^alpha] over return times t."""
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    t = sample_return_times(excursions, driver, offset)
    v = (1.0 - alpha) * t**alpha
    return dict(alpha=alpha, excursions=excursions, estimate=float(v.mean()),
                standard_error=float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan"))
