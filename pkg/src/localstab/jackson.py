"""Partly overloaded Jackson networks.

The modified traffic equations ``lam = nu + P^T (lam ^ mu)`` split the nodes
into a stable set (``lam_i < mu_i``) whose queues converge in law to a product
of geometric marginals, and a non-stable set whose queues grow at rate
``lam_i - mu_i``.  The unique solution of this linear complementarity problem
is computed here by monotone fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import RandomDriver, Trajectory, map_replications
from .stats import EmpiricalDistribution, decode_state, growth_rate, returns_to_zero, tv_noise_floor

STABLE, CRITICAL, UNSTABLE = "Stable", "Critical", "Unstable"


@dataclass(frozen=True)
class JacksonSpec:
    nu: np.ndarray
    mu: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        I = nu.shape[0]
        P = np.asarray(self.P, dtype=float)
        if P.size == 0 and I == 0:
            P = P.reshape(0, 0)
        if mu.shape != (I,) or P.shape != (I, I):
            raise ValueError("nu, mu and P have inconsistent shapes")
        if I == 0:
            raise ValueError("network has no nodes")
        if np.any(nu < 0) or not np.all(np.isfinite(nu)):
            raise ValueError("exogenous rates must be finite and non-negative")
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("service rates must be positive")
        if np.any(P < 0) or np.any(P.sum(axis=1) > 1 + 1e-12):
            raise ValueError("routing matrix must be non-negative and sub-stochastic")
        if spectral_radius(P) >= 1 - 1e-12:
            raise ValueError("routing matrix must have spectral radius < 1")
        for name, val in (("nu", nu), ("mu", mu), ("P", P)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def I(self) -> int:
        return self.nu.shape[0]

    @classmethod
    def from_dict(cls, d: dict) -> "JacksonSpec":
        nu = d["nu"]
        P = d.get("P")
        if P is None:
            P = np.zeros((len(nu), len(nu)))
        return cls(np.array(nu, dtype=float), np.array(d["mu"], dtype=float), np.array(P, dtype=float))


def spectral_radius(P) -> float:
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(P))))


@dataclass(frozen=True)
class TrafficSolution:
    lam: np.ndarray
    classes: tuple[str, ...]
    rho: dict[int, float]
    iterations: int
    residual: float

    @property
    def stable(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c == STABLE]

    @property
    def unstable(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c == UNSTABLE]

    @property
    def critical(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c == CRITICAL]

    @property
    def nonstable(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c != STABLE]


def traffic_map(spec: JacksonSpec, lam) -> np.ndarray:
    """One application of lam -> nu + P^T min(lam, mu)."""
    return spec.nu + spec.P.T @ np.minimum(lam, spec.mu)


def traffic_residual(spec: JacksonSpec, lam) -> float:
    return float(np.max(np.abs(np.asarray(lam) - traffic_map(spec, lam))))


def _iterate(spec, lam, tol, max_iter):
    for it in range(1, max_iter + 1):
        new = traffic_map(spec, lam)
        if np.max(np.abs(new - lam)) < tol:
            return new, it
        lam = new
    raise RuntimeError(f"traffic iteration did not converge in {max_iter} steps")


def classify(lam, mu, tol_crit: float = 1e-9, critical=()) -> tuple[str, ...]:
    labels = []
    for i, (l, m) in enumerate(zip(lam, mu)):
        if i in set(critical):
            labels.append(CRITICAL)
        elif l < m - tol_crit * m:
            labels.append(STABLE)
        elif l > m + tol_crit * m:
            labels.append(UNSTABLE)
        else:
            labels.append(CRITICAL)
    return tuple(labels)


def solve_traffic(spec: JacksonSpec, tol: float = 1e-12, max_iter: int = 1_000_000,
                  tol_crit: float = 1e-9, critical=()) -> TrafficSolution:
    """Solve the modified traffic equations from below, starting at ``nu``.

    ``critical`` lists nodes the caller asserts to be exactly critical; the
    floating-point test cannot tell ``lam_i == mu_i`` from a near miss.
    """
    lam, iters = _iterate(spec, spec.nu.copy(), tol, max_iter)
    classes = classify(lam, spec.mu, tol_crit, critical)
    rho = {i: float(lam[i] / spec.mu[i]) for i, c in enumerate(classes) if c == STABLE}
    return TrafficSolution(lam, classes, rho, iters, traffic_residual(spec, lam))


def solve_traffic_from_above(spec: JacksonSpec, tol: float = 1e-12,
                             max_iter: int = 1_000_000) -> np.ndarray:
    """Same fixed point, iterated downward from ``nu + P^T mu``."""
    lam, _ = _iterate(spec, spec.nu + spec.P.T @ spec.mu, tol, max_iter)
    return lam


def product_form_prediction(sol: TrafficSolution) -> dict[int, float]:
    """Geometric parameter of every stable node; empty when none is stable."""
    return dict(sol.rho)


def augmented_subnetwork(spec: JacksonSpec, sol: TrafficSolution) -> tuple[JacksonSpec, list[int]]:
    """Network on the stable nodes fed by the saturated outputs of the rest.

    Returns the restricted spec and the original indices of its nodes.
    """
    keep = sol.stable
    if not keep:
        raise ValueError("no stable nodes")
    drop = sol.nonstable
    nu = spec.nu[keep].copy()
    for j in drop:
        nu += spec.mu[j] * spec.P[j, keep]
    return JacksonSpec(nu, spec.mu[keep].copy(), spec.P[np.ix_(keep, keep)].copy()), keep


def simulate_jackson(spec: JacksonSpec, horizon: float, driver: RandomDriver, x0=None) -> Trajectory:
    """Uniformized simulation; the state is recorded at every clock tick."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x0 = np.zeros(spec.I, dtype=np.int64) if x0 is None else np.asarray(x0, dtype=np.int64)
    times, states, _, _ = _kernels.jackson_run(spec.nu, spec.mu, spec.P, x0, float(horizon), driver.key)
    return Trajectory(times, states, "jackson")


def simulate_jackson_counts(spec: JacksonSpec, horizon: float, driver: RandomDriver, x0=None):
    """Like :func:`simulate_jackson` but also returns (arrivals, departures)."""
    x0 = np.zeros(spec.I, dtype=np.int64) if x0 is None else np.asarray(x0, dtype=np.int64)
    times, states, n_arr, n_dep = _kernels.jackson_run(spec.nu, spec.mu, spec.P, x0, float(horizon), driver.key)
    return Trajectory(times, states, "jackson"), int(n_arr), int(n_dep)


def tv_to_product_geometric(emp: EmpiricalDistribution, rhos, truncation: int = 30) -> float:
    """TV between a law on the stable coordinates and prod (1-rho) rho^n.

    Both sides are truncated to values <= ``truncation`` per coordinate, the
    remaining mass lumped into a single overflow state.
    """
    rhos = np.asarray(rhos, dtype=float)
    probs = emp.probabilities()
    box_mass = float(np.prod(1.0 - rhos ** (truncation + 1)))
    abs_sum = 0.0
    seen_pred = 0.0
    emp_over = 0.0
    for key, p in probs.items():
        st = np.asarray(decode_state(key))
        if np.any(st > truncation) or np.any(st < 0):
            emp_over += p
            continue
        pred = float(np.prod((1.0 - rhos) * rhos ** st))
        seen_pred += pred
        abs_sum += abs(p - pred)
    abs_sum += box_mass - seen_pred
    abs_sum += abs(emp_over - (1.0 - box_mass))
    return 0.5 * abs_sum


def _value_at(times, values, t):
    return values[np.searchsorted(times, t, side="right") - 1]


def _replicate(args):
    spec, horizon, driver, x0, checkpoints, burn_in, watch = args
    traj = simulate_jackson(spec, horizon, driver, x0)
    growth = [growth_rate(traj, i, burn_in) for i in range(spec.I)]
    cps = []
    for c in checkpoints:
        row = _value_at(traj.times, traj.states, c)
        upto = traj.times <= c
        rets = [returns_to_zero(traj.states[upto, i]) for i in watch]
        cps.append((row.tolist(), rets))
    return traj.states[-1].tolist(), growth, cps


@dataclass
class JacksonReport:
    lam: list
    classes: list
    rho: dict
    growth: dict = field(default_factory=dict)
    product_form: dict = field(default_factory=dict)
    critical: dict = field(default_factory=dict)
    passed: bool = True

    def to_dict(self) -> dict:
        return dict(lam=self.lam, classes=self.classes, rho=self.rho, growth=self.growth,
                    product_form=self.product_form, critical=self.critical, passed=self.passed)


def _run_batch(spec, horizon, drivers, x0, checkpoints, burn_in, watch, workers):
    args = [(spec, horizon, d, x0, checkpoints, burn_in, watch) for d in drivers]
    return map_replications(_replicate, args, workers)


def verify_local_stability(spec: JacksonSpec, horizon: float, replications: int, driver: RandomDriver,
                           *, large_initial: int = 100, burn_in_fraction: float = 0.5,
                           truncation: int = 30, tv_tol: float = 0.05, growth_tol: float = 0.05,
                           checkpoints=None, critical=(), workers: int = 1) -> JacksonReport:
    """Check growth, product-form limit and initial-state independence.

    Every replication is run twice with the same noise: once from the empty
    network and once with ``large_initial`` customers at each stable node.
    """
    sol = solve_traffic(spec, critical=critical)
    stable, unstable, crit = sol.stable, sol.unstable, sol.critical
    if checkpoints is None:
        checkpoints = [horizon / 10.0, horizon / 2.0, float(horizon)]
    checkpoints = sorted(float(c) for c in checkpoints)
    drivers = driver.children(replications)
    x_small = np.zeros(spec.I, dtype=np.int64)
    x_large = x_small.copy()
    x_large[stable] = large_initial

    report = JacksonReport(sol.lam.tolist(), list(sol.classes), {str(k): v for k, v in sol.rho.items()})
    passed = True
    starts = {"empty": x_small}
    if stable:
        starts["large"] = x_large
    results = {name: _run_batch(spec, horizon, drivers, x0, checkpoints, burn_in_fraction, crit, workers)
               for name, x0 in starts.items()}

    for name, res in results.items():
        finals = np.array([r[0] for r in res], dtype=np.int64)
        growth = np.array([r[1] for r in res])
        for i in unstable:
            est = float(growth[:, i].mean())
            se = float(growth[:, i].std(ddof=1) / np.sqrt(len(growth))) if len(growth) > 1 else float("nan")
            pred = float(sol.lam[i] - spec.mu[i])
            ok = abs(est - pred) <= growth_tol
            report.growth.setdefault(str(i), {})[name] = dict(
                predicted=pred, estimate=est, se=se, tolerance=growth_tol, passed=ok)
            passed &= ok
        if stable:
            emp = EmpiricalDistribution.from_states(finals[:, stable])
            rhos = [sol.rho[i] for i in stable]
            tv = tv_to_product_geometric(emp, rhos, truncation)
            marg = []
            for i in stable:
                r = sol.rho[i]
                marg.append([(1 - r) * r ** n for n in range(truncation + 1)])
            noise = tv_noise_floor(np.prod(np.meshgrid(*marg, indexing="ij"), axis=0).ravel(), replications) \
                if len(stable) <= 3 else None
            ok = tv < tv_tol
            report.product_form[name] = dict(nodes=stable, rho=rhos, tv=tv, tolerance=tv_tol,
                                             noise_floor=noise, passed=ok)
            passed &= ok
        if crit and name == "empty":
            for w, i in enumerate(crit):
                rows = []
                for ci, c in enumerate(checkpoints):
                    vals = np.array([r[2][ci][0][i] for r in res])
                    rets = np.array([r[2][ci][1][w] for r in res])
                    rows.append(dict(time=c, p=[float(np.mean(vals == n)) for n in range(5)],
                                     mean_returns_to_zero=float(rets.mean())))
                signature = (rows[-1]["p"][0] < rows[0]["p"][0]
                             and rows[-1]["mean_returns_to_zero"] > rows[0]["mean_returns_to_zero"])
                report.critical[str(i)] = dict(checkpoints=rows, signature=signature)
                passed &= signature
    report.passed = bool(passed)
    return report
