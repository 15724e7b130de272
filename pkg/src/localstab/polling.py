"""Cyclic polling with monotone per-visit service rules.

One server walks around stations ``1..K``.  On each visit it serves a number
of customers given by the station's policy, one time unit per customer,
then walks to the next station.  Customers arrive in independent Poisson
streams.  Some stations may blow up while the others stay stable; this
module diagnoses that split from simulated paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RandomDriver, Trajectory
from .csma import BOUNDED_CAP, GROWTH_THRESHOLD, MIN_RETURNS
from .stats import growth_rate, returns_to_zero


@dataclass(frozen=True)
class Exhaustive:
    """Serve until the queue is empty, arrivals during the visit included."""

    def served(self, x: int, d=None) -> int:
        return x


@dataclass(frozen=True)
class Gated:
    """Serve exactly the customers present when the server arrives."""

    def served(self, x: int, d=None) -> int:
        return x


@dataclass(frozen=True)
class Limited:
    """Serve at most ``l`` of the customers present."""

    l: int

    def __post_init__(self):
        if self.l < 1:
            raise ValueError("limit must be at least 1")

    def served(self, x: int, d=None) -> int:
        return min(x, self.l)


def parse_policy(spec) -> Exhaustive | Gated | Limited:
    """Accepts a policy object, ``"exhaustive"``, ``"gated"``, ``"limited:3"``
    or ``{"limited": 3}``."""
    if isinstance(spec, (Exhaustive, Gated, Limited)):
        return spec
    if isinstance(spec, dict) and len(spec) == 1:
        (name, val), = spec.items()
        if str(name).lower() == "limited":
            return Limited(int(val))
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s == "exhaustive":
            return Exhaustive()
        if s == "gated":
            return Gated()
        if s.startswith("limited"):
            _, _, arg = s.partition(":")
            return Limited(int(arg or 1))
    raise ValueError(f"unknown polling policy {spec!r}")


def served_count(policy, x: int, d=None) -> int:
    """Customers served at a visit that finds ``x`` waiting."""
    if x < 0:
        raise ValueError("queue length must be non-negative")
    return parse_policy(policy).served(int(x), d)


@dataclass(frozen=True)
class PollingSpec:
    rates: tuple
    walk_times: tuple
    policies: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        walks = tuple(float(w) for w in self.walk_times)
        pols = tuple(parse_policy(p) for p in self.policies)
        if not (len(rates) == len(walks) == len(pols) >= 1):
            raise ValueError("rates, walk times and policies need one entry per station")
        if any(r < 0 or not math.isfinite(r) for r in rates):
            raise ValueError("arrival rates must be non-negative")
        if any(w < 0 or not math.isfinite(w) for w in walks):
            raise ValueError("walk times must be non-negative")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "walk_times", walks)
        object.__setattr__(self, "policies", pols)

    @property
    def K(self) -> int:
        return len(self.rates)


class _Arrivals:
    """Poisson stream per station; the n-th interarrival of station i reads
    uniform index n of child stream i."""

    def __init__(self, spec: PollingSpec, driver: RandomDriver):
        self.rates = spec.rates
        self.drivers = driver.children(spec.K)
        self.count = [0] * spec.K
        self.next = [self._draw(i) for i in range(spec.K)]

    def _draw(self, i: int, base: float = 0.0) -> float:
        if self.rates[i] == 0.0:
            return math.inf
        u = self.drivers[i].uniform(self.count[i], 0)
        self.count[i] += 1
        return base - math.log1p(-u) / self.rates[i]

    def advance(self, q: list[int], t: float) -> None:
        for i in range(len(q)):
            while self.next[i] <= t:
                q[i] += 1
                self.next[i] = self._draw(i, self.next[i])

    def first(self) -> float:
        return min(self.next)


@dataclass
class PollingResult:
    trajectory: Trajectory  # time axis is the visit index
    epochs: np.ndarray  # continuous visit times
    growth_rates: np.ndarray  # per visit
    max_queue: np.ndarray
    returns_to_zero: np.ndarray

    def verdicts(self, growth_threshold: float = GROWTH_THRESHOLD, cap: int = BOUNDED_CAP,
                 min_returns: int = MIN_RETURNS) -> list[str]:
        out = []
        for g, m, r in zip(self.growth_rates, self.max_queue, self.returns_to_zero):
            if g > growth_threshold:
                out.append("unstable")
            elif m < cap and (r >= min_returns or m == 0):
                out.append("stable")
            else:
                out.append("undetermined")
        return out

    def summary(self, **kw) -> dict:
        return dict(growth_rates=self.growth_rates.tolist(), max_queue=self.max_queue.tolist(),
                    returns_to_zero=self.returns_to_zero.tolist(), verdicts=self.verdicts(**kw),
                    visits=len(self.trajectory) - 1, final_time=float(self.epochs[-1]))


def simulate_polling(spec: PollingSpec, cycles: int, driver: RandomDriver, q0=None,
                     burn_in_fraction: float = 0.5) -> PollingResult:
    """Visit stations cyclically for ``cycles`` rounds.

    Row ``v`` of the trajectory is the queue vector when the server reaches
    its ``v``-th station (row 0 is the initial state).  If every walk time is
    zero and the system is empty at the start of a round, the server waits
    there for the next arrival.
    """
    if cycles < 1:
        raise ValueError("need at least one cycle")
    K = spec.K
    q = [0] * K if q0 is None else [int(v) for v in q0]
    if len(q) != K or min(q) < 0:
        raise ValueError("initial queues must be non-negative, one per station")
    arr = _Arrivals(spec, driver)
    zero_walk = sum(spec.walk_times) == 0.0
    n_visits = cycles * K
    rec = np.zeros((n_visits + 1, K), dtype=np.int64)
    epochs = np.zeros(n_visits + 1)
    rec[0] = q
    t = 0.0
    for v in range(n_visits):
        k = v % K
        arr.advance(q, t)
        epochs[v + 1] = t
        rec[v + 1] = q
        if zero_walk and k == 0 and sum(q) == 0 and math.isfinite(arr.first()):
            t = arr.first()
            arr.advance(q, t)
        pol = spec.policies[k]
        m = pol.served(q[k])
        for _ in range(m):
            t += 1.0
            q[k] -= 1
            arr.advance(q, t)
        if isinstance(pol, Exhaustive):
            while q[k] > 0:
                t += 1.0
                q[k] -= 1
                arr.advance(q, t)
        t += spec.walk_times[k]
    traj = Trajectory(np.arange(n_visits + 1), rec, "polling")
    rates = np.array([growth_rate(traj, i, burn_in_fraction) for i in range(K)])
    # queue of station i observed at its own visits
    own = [rec[1 + i::K, i] for i in range(K)]
    rtz = np.array([returns_to_zero(o, burn_in_fraction) for o in own])
    return PollingResult(traj, epochs, rates, rec.max(axis=0), rtz)
