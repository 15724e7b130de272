"""Slotted CSMA line network with interference radius ``k``.

Nodes ``1..n`` sit on a line and relay messages to the right; node ``n``
delivers them out of the system.  In every slot the nodes receive a uniform
random priority order.  A node with a message transmits when no eligible node
within distance ``k`` has a higher priority.  Node 1 is fed either by
Bernoulli arrivals or by an infinite supply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import RandomDriver, Trajectory, map_replications
from .stats import growth_rate, returns_to_zero

GROWTH_THRESHOLD = 0.01
BOUNDED_CAP = 50
MIN_RETURNS = 100


@dataclass(frozen=True)
class CsmaSpec:
    n: int
    k: int
    lam: float = 0.0
    infinite_supply: bool = False
    horizon: int = 10**6

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one node")
        if self.k < 0:
            raise ValueError("interference radius must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("arrival probability must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    def with_lam(self, lam: float) -> "CsmaSpec":
        return CsmaSpec(self.n, self.k, lam, False, self.horizon)


def priorities(driver: RandomDriver, slot: int, n: int) -> list[int]:
    """Rank of each node in the slot's priority order (higher rank wins)."""
    return list(_kernels.csma_priorities(driver.key, slot, n))


def step_slot(spec: CsmaSpec, queues, driver: RandomDriver, slot: int):
    """One slot; returns ``(new_queues, transmitting nodes)`` (0-based)."""
    q = [int(v) for v in queues]
    if len(q) != spec.n or min(q) < 0:
        raise ValueError("queues must be a non-negative vector of length n")
    prio = priorities(driver, slot, spec.n)
    eligible = [q[v] > 0 or (v == 0 and spec.infinite_supply) for v in range(spec.n)]
    sent = set()
    for v in range(spec.n):
        if not eligible[v]:
            continue
        rivals = [w for w in range(max(0, v - spec.k), min(spec.n, v + spec.k + 1)) if w != v and eligible[w]]
        if all(prio[w] < prio[v] for w in rivals):
            sent.add(v)
    for v in sorted(sent):
        q[v] -= 1
        if v + 1 < spec.n:
            q[v + 1] += 1
    if spec.infinite_supply or driver.uniform(slot, 0) < spec.lam:
        q[0] += 1
    return q, sent


@dataclass
class CsmaResult:
    trajectory: Trajectory
    throughput: float
    growth_rates: np.ndarray
    max_queue: np.ndarray
    returns_to_zero: np.ndarray
    transmissions: np.ndarray
    departures: int
    arrivals: int
    spec: CsmaSpec = field(repr=False, default=None)

    def growing(self, threshold: float = GROWTH_THRESHOLD) -> list[bool]:
        return [bool(g > threshold) for g in self.growth_rates]

    def bounded(self, cap: int = BOUNDED_CAP, min_returns: int = MIN_RETURNS) -> list[bool]:
        return [bool(m < cap and r >= min_returns) for m, r in zip(self.max_queue, self.returns_to_zero)]

    def summary(self) -> dict:
        return dict(
            n=self.spec.n, k=self.spec.k, lam=None if self.spec.infinite_supply else self.spec.lam,
            infinite_supply=self.spec.infinite_supply, slots=len(self.trajectory) - 1,
            throughput=self.throughput, growth_rates=self.growth_rates.tolist(),
            max_queue=self.max_queue.tolist(), returns_to_zero=self.returns_to_zero.tolist(),
            growing=self.growing(), bounded=self.bounded(),
            departures=self.departures, arrivals=self.arrivals,
        )


def transmissions_from_path(spec: CsmaSpec, queues: np.ndarray, driver: RandomDriver) -> np.ndarray:
    """Recover per-slot transmission indicators from consecutive queue vectors.

    Node v's change is tx[v-1] - tx[v] (+ the arrival at node 1), so the
    indicators follow by a running difference from the left.
    """
    dq = np.diff(queues, axis=0)
    T = dq.shape[0]
    if spec.infinite_supply:
        arr = np.ones(T, dtype=np.int64)
    else:
        arr = (driver.uniforms(np.arange(T), 0) < spec.lam).astype(np.int64)
    tx = np.empty_like(dq)
    prev = arr
    for v in range(spec.n):
        tx[:, v] = prev - dq[:, v]
        prev = tx[:, v]
    return tx


def check_invariants(spec: CsmaSpec, queues: np.ndarray, tx: np.ndarray, departures: int, arrivals: int):
    if np.any(queues < 0):
        raise AssertionError("negative queue")
    if np.any((tx != 0) & (tx != 1)):
        raise AssertionError("a node sent more than one message in a slot")
    for d in range(1, spec.k + 1):
        if d < spec.n and np.any(tx[:, d:] & tx[:, :-d]):
            raise AssertionError(f"two transmitters at distance {d} <= k")
    if int(tx[:, -1].sum()) != departures:
        raise AssertionError("departure count mismatch")
    if int(queues[-1].sum()) - int(queues[0].sum()) != arrivals - departures:
        raise AssertionError("messages not conserved")


def simulate_csma(spec: CsmaSpec, driver: RandomDriver, q0=None, validate: bool = True,
                  burn_in_fraction: float = 0.5) -> CsmaResult:
    """Run ``spec.horizon`` slots.

    Under an infinite supply node 1's recorded queue counts one offered
    message per slot minus the messages it sent.
    """
    q0 = [0] * spec.n if q0 is None else [int(v) for v in q0]
    lam = -1.0 if spec.infinite_supply else float(spec.lam)
    queues, txc, dep, arr = _kernels.csma_run(spec.n, spec.k, lam, q0, int(spec.horizon), driver.key)
    if validate:
        tx = transmissions_from_path(spec, queues, driver)
        check_invariants(spec, queues, tx, int(dep), int(arr))
        if not np.array_equal(tx.sum(axis=0), txc):
            raise AssertionError("transmission counts disagree with the queue path")
    traj = Trajectory(np.arange(spec.horizon + 1), queues, "csma")
    half = int(burn_in_fraction * len(traj))
    rates = np.array([growth_rate(traj, v, burn_in_fraction) for v in range(spec.n)])
    rtz = np.array([returns_to_zero(queues[:, v], burn_in_fraction) for v in range(spec.n)])
    return CsmaResult(traj, dep / spec.horizon, rates, queues.max(axis=0), rtz, np.asarray(txc),
                      int(dep), int(arr), spec)


def saturation_pattern(spec: CsmaSpec, driver: RandomDriver, expected_growing: int,
                       growth_threshold: float = GROWTH_THRESHOLD, cap: int = BOUNDED_CAP,
                       min_returns: int = MIN_RETURNS) -> dict:
    """Check that nodes ``1..expected_growing`` grow and the others stay bounded."""
    res = simulate_csma(spec, driver)
    grow = res.growing(growth_threshold)
    bnd = res.bounded(cap, min_returns)
    ok = all(grow[:expected_growing]) and all(bnd[expected_growing:])
    out = res.summary()
    out.update(expected_growing=expected_growing, passed=bool(ok))
    return out


def _throughput(args):
    spec, driver = args
    return simulate_csma(spec, driver, validate=False).throughput


def throughput_estimate(spec: CsmaSpec, driver: RandomDriver, seeds: int = 30, workers: int = 1) -> dict:
    """Mean end-to-end throughput with a normal 95% interval across seeds."""
    vals = np.array(map_replications(_throughput, [(spec, d) for d in driver.children(seeds)], workers))
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return dict(mean=float(vals.mean()), ci95=1.96 * se, seeds=seeds, values=vals.tolist())


def _sweep_point(args):
    spec, driver, threshold = args
    res = simulate_csma(spec, driver, validate=False)
    return res.growth_rates.tolist(), res.throughput, res.growing(threshold)


def saturation_sweep(template: CsmaSpec, lambdas, driver: RandomDriver,
                     growth_threshold: float = GROWTH_THRESHOLD, workers: int = 1) -> dict:
    """Per arrival probability: growth rates, throughput and saturated nodes.

    Whether the saturated set grows with lambda is reported, not enforced.
    """
    lambdas = [float(x) for x in lambdas]
    if any(not 0.0 <= x <= 1.0 for x in lambdas):
        raise ValueError("arrival probabilities must lie in [0, 1]")
    items = [(template.with_lam(x), driver.child(i), growth_threshold) for i, x in enumerate(lambdas)]
    out = map_replications(_sweep_point, items, workers)
    rows = []
    for x, (rates, thr, grow) in zip(lambdas, out):
        rows.append(dict(lam=x, growth_rates=rates, throughput=thr,
                         saturated=[v + 1 for v, g in enumerate(grow) if g]))
    order = sorted(rows, key=lambda r: r["lam"])
    monotone = all(set(a["saturated"]) <= set(b["saturated"]) for a, b in zip(order, order[1:]))
    return dict(rows=rows, saturated_monotone=monotone)
