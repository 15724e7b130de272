"""Empirical laws, total variation, growth rates and tail estimates."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import stats as _sps

from .core import Trajectory


def encode_state(state) -> bytes:
    """Canonical key: little-endian int64 bytes of the state vector."""
    return np.asarray(state, dtype="<i8").reshape(-1).tobytes()


def decode_state(key: bytes) -> tuple[int, ...]:
    return tuple(int(v) for v in np.frombuffer(key, dtype="<i8"))


@dataclass
class EmpiricalDistribution:
    """Counts over encoded discrete states.

    Counts are usually integers; time-weighted occupation measures store
    durations instead.  Distributions from different replications of the
    same model merge by adding counts.
    """

    counts: dict = field(default_factory=dict)

    @classmethod
    def from_states(cls, states) -> "EmpiricalDistribution":
        arr = np.asarray(states, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] == 0:
            return cls()
        uniq, cnt = np.unique(arr, axis=0, return_counts=True)
        return cls({encode_state(u): int(c) for u, c in zip(uniq, cnt)})

    @classmethod
    def from_weighted(cls, states, weights) -> "EmpiricalDistribution":
        arr = np.asarray(states, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[:, None]
        uniq, inv = np.unique(arr, axis=0, return_inverse=True)
        tot = np.bincount(inv.reshape(-1), weights=np.asarray(weights, dtype=float),
                          minlength=len(uniq))
        return cls({encode_state(u): float(w) for u, w in zip(uniq, tot)})

    @property
    def total(self) -> float:
        return sum(self.counts.values())

    def probability(self, state) -> float:
        key = state if isinstance(state, bytes) else encode_state(state)
        total = self.total
        return self.counts.get(key, 0) / total if total else 0.0

    def probabilities(self) -> dict:
        total = self.total
        if total <= 0:
            raise ValueError("empty distribution")
        return {k: v / total for k, v in self.counts.items()}

    def marginal(self, coordinate: int) -> dict[int, float]:
        out: dict[int, float] = {}
        for k, p in self.probabilities().items():
            v = decode_state(k)[coordinate]
            out[v] = out.get(v, 0.0) + p
        return out

    def merge(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        merged = Counter(self.counts)
        merged.update(other.counts)
        return EmpiricalDistribution(dict(merged))

    __add__ = merge

    def to_csv(self, path, label=None) -> None:
        """Write ``state,count,probability`` rows; states joined with ``|``."""
        probs = self.probabilities()
        rows = sorted((decode_state(k), v) for k, v in self.counts.items())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "count", "probability"])
            for st, c in rows:
                name = label(st) if label else "|".join(map(str, st))
                w.writerow([name, _fmt(c), _fmt(probs[encode_state(st)])])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _as_probabilities(p) -> dict:
    if isinstance(p, EmpiricalDistribution):
        return p.probabilities()
    if isinstance(p, Mapping):
        probs = {k: float(v) for k, v in p.items()}
    else:
        probs = dict(enumerate(np.asarray(p, dtype=float).tolist()))
    s = sum(probs.values())
    if any(v < 0 for v in probs.values()) or abs(s - 1.0) > 1e-9:
        raise ValueError(f"distribution is not normalised (sum={s!r})")
    return probs


def tv_distance(p, q) -> float:
    """Total variation distance, half the l1 distance between two laws.

    Accepts mappings state -> probability, sequences over a common index, or
    :class:`EmpiricalDistribution` instances (normalised on the fly).
    """
    pp = _as_probabilities(p)
    qq = _as_probabilities(q)
    keys = set(pp) | set(qq)
    return 0.5 * sum(abs(pp.get(k, 0.0) - qq.get(k, 0.0)) for k in keys)


def time_average(traj: Trajectory, burn_in_fraction: float = 0.0,
                 coordinates=None) -> EmpiricalDistribution:
    """Occupation measure weighted by holding times (the last state is open)."""
    t = traj.times
    states = traj.states if coordinates is None else traj.states[:, list(coordinates)]
    cut = t[0] + burn_in_fraction * (t[-1] - t[0])
    hold = np.diff(t)
    keep = t[:-1] >= cut
    return EmpiricalDistribution.from_weighted(states[:-1][keep], hold[keep])


def growth_rate(traj: Trajectory, coordinate: int = 0, burn_in_fraction: float = 0.5) -> float:
    """Least-squares slope of one coordinate against time after burn-in."""
    t = np.asarray(traj.times, dtype=float)
    if len(t) == 0:
        raise ValueError("empty trajectory")
    cut = t[0] + burn_in_fraction * (t[-1] - t[0])
    mask = t >= cut
    if mask.sum() < 2:
        raise ValueError("post burn-in window holds fewer than two points")
    x = t[mask]
    y = np.asarray(traj.states[mask, coordinate], dtype=float)
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise ValueError("degenerate time window")
    return float(np.dot(xc, y - y.mean()) / denom)


def returns_to_zero(values, burn_in_fraction: float = 0.0) -> int:
    """Number of entries into 0 (a positive value followed by 0)."""
    v = np.asarray(values)
    start = int(burn_in_fraction * len(v))
    v = v[start:]
    return int(np.count_nonzero((v[1:] == 0) & (v[:-1] > 0)))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    passed: bool
    threshold: float
    bins: int

    def to_dict(self) -> dict:
        return dict(statistic=self.statistic, dof=self.dof, p_value=self.p_value,
                    passed=self.passed, threshold=self.threshold, bins=self.bins)


def chi_square_test(observed, probabilities, threshold: float = 0.01,
                    min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson test of ordered categories; sparse bins merge with neighbours.

    Bins are accumulated left to right until each reaches ``min_expected``;
    a short remainder is folded into the last full bin.
    """
    obs = np.asarray(observed, dtype=float)
    prob = np.asarray(probabilities, dtype=float)
    if obs.shape != prob.shape:
        raise ValueError("observed and probabilities differ in length")
    n = obs.sum()
    if n <= 0:
        raise ValueError("no observations")
    exp = n * prob / prob.sum()
    o_bins, e_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if o_bins:
            o_bins[-1] += o_acc
            e_bins[-1] += e_acc
        else:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
    o_b = np.array(o_bins)
    e_b = np.array(e_bins)
    stat = float(np.sum((o_b - e_b) ** 2 / e_b))
    dof = len(o_b) - 1
    p = float(_sps.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return ChiSquareResult(stat, dof, p, p > threshold, threshold, len(o_b))


def _value_counts(samples) -> dict[int, float]:
    if isinstance(samples, EmpiricalDistribution):
        out: dict[int, float] = {}
        for k, c in samples.counts.items():
            v = decode_state(k)
            if len(v) != 1:
                raise ValueError("expected a one-dimensional distribution")
            out[v[0]] = out.get(v[0], 0) + c
        return out
    if isinstance(samples, Mapping):
        return {int(k): float(v) for k, v in samples.items()}
    arr = np.asarray(samples, dtype=np.int64).reshape(-1)
    vals, cnt = np.unique(arr, return_counts=True)
    return dict(zip(vals.tolist(), cnt.tolist()))


def geometric_fit_test(samples, rho: float, threshold: float = 0.01) -> ChiSquareResult:
    """Chi-square test of samples on {0,1,...} against P(n) = (1-rho) rho^n.

    Bins are 0..m individually, where m is the last value with expected count
    >= 5, plus one tail bin {n > m}.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    counts = _value_counts(samples)
    if any(v < 0 for v in counts):
        raise ValueError("geometric samples must be non-negative")
    n = sum(counts.values())
    m = 0
    while n * (1 - rho) * rho ** (m + 1) >= 5.0:
        m += 1
    probs = [(1 - rho) * rho ** j for j in range(m + 1)] + [rho ** (m + 1)]
    obs = [counts.get(j, 0.0) for j in range(m + 1)]
    obs.append(sum(c for v, c in counts.items() if v > m))
    return chi_square_test(obs, probs, threshold)


def tail_exponent(samples, top_fraction: float = 0.1, min_samples: int = 1000) -> float:
    """Hill estimate of a in P(X > x) ~ x^-a from the top order statistics."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))[::-1]
    if len(x) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(x)}")
    if np.any(x <= 0):
        raise ValueError("samples must be positive")
    k = int(top_fraction * len(x))
    if k < 1:
        raise ValueError("top fraction selects no order statistics")
    threshold = x[k]
    s = float(np.sum(np.log(x[:k] / threshold)))
    if s <= 0.0:
        raise ValueError("degenerate sample: no spread above the threshold")
    return k / s


def tv_noise_floor(probabilities, n: int) -> float:
    """Expected TV between a law and its n-sample empirical law (normal approx.)."""
    p = np.asarray(list(probabilities), dtype=float)
    return float(0.5 * np.sum(np.sqrt(2.0 * p * (1 - p) / (math.pi * n))))


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, int, np.floating, np.integer))
                        and not isinstance(v, bool) else v for v in r])


def _round_floats(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f) or math.isinf(f):
            return None
        return float(f"{f:.12g}")
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Mapping):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round_floats(v) for v in obj]
    return obj


def to_json(obj, path=None) -> str:
    """JSON with floats rounded to 12 significant digits."""
    text = json.dumps(_round_floats(obj), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
