"""Skill-based multi-server queue under FCFS-ALIS.

Customers of types ``c`` arrive as Poisson streams; server ``s`` serves any
type it is compatible with, exponentially at rate ``mu_s``.  A free server
takes the longest-waiting compatible customer; an arriving customer goes to
the longest-idle compatible server.

The Markov state is the permutation of servers (busy ones in the order of
the customers they serve, then idle ones from shortest to longest idle) with
the queue lengths ``n_j`` behind each busy server.  This module provides the
subset conditions for ergodicity and complete resource pooling (evaluated in
exact rational arithmetic), the product-form stationary weights, the limiting
law of an overloaded system with complete resource pooling, the decomposition
of a system without it, and an event simulator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .core import RandomDriver, Trajectory, map_replications
from .stats import EmpiricalDistribution, decode_state, encode_state, growth_rate, tv_distance

MAX_ENUMERATION = 20
GAP_CAP = 20


class ConditionMismatch(RuntimeError):
    """Raised if equivalent subset-condition families disagree."""


@dataclass(frozen=True)
class MatchingSpec:
    """Bipartite compatibility system.

    ``compat[s][c]`` is true when server ``s`` can serve type ``c``.
    """

    lam: tuple
    mu: tuple
    compat: tuple
    type_names: tuple = ()
    server_names: tuple = ()

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        mu = tuple(float(v) for v in self.mu)
        comp = np.asarray(self.compat, dtype=bool)
        I, J = len(lam), len(mu)
        if comp.shape != (J, I):
            raise ValueError(f"compat must have shape (servers, types) = {(J, I)}, got {comp.shape}")
        if I == 0 or J == 0:
            raise ValueError("need at least one type and one server")
        if J > 127:
            raise ValueError("at most 127 servers are supported")
        if any(not math.isfinite(v) or v <= 0 for v in lam):
            raise ValueError("arrival rates must be positive")
        if any(not math.isfinite(v) or v <= 0 for v in mu):
            raise ValueError("service rates must be positive")
        if not comp.any(axis=0).all():
            raise ValueError("every customer type needs a compatible server")
        if not comp.any(axis=1).all():
            raise ValueError("every server needs a compatible customer type")
        tn = tuple(self.type_names) or tuple(f"c{i + 1}" for i in range(I))
        sn = tuple(self.server_names) or tuple(f"s{j + 1}" for j in range(J))
        if len(tn) != I or len(sn) != J:
            raise ValueError("name lists do not match the rate vectors")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "compat", tuple(tuple(bool(x) for x in row) for row in comp))
        object.__setattr__(self, "type_names", tn)
        object.__setattr__(self, "server_names", sn)

    @classmethod
    def from_adjacency(cls, lam: dict, mu: dict, adjacency: dict) -> "MatchingSpec":
        """Build from ``{type: rate}``, ``{server: rate}``, ``{server: [types]}``."""
        types = list(lam)
        servers = list(mu)
        comp = [[c in set(adjacency.get(s, ())) for c in types] for s in servers]
        unknown = {c for s in adjacency for c in adjacency[s]} - set(types)
        if unknown or set(adjacency) - set(servers):
            raise ValueError(f"adjacency refers to unknown names: {sorted(map(str, unknown))}")
        return cls(tuple(lam[c] for c in types), tuple(mu[s] for s in servers), comp,
                   tuple(map(str, types)), tuple(map(str, servers)))

    @property
    def I(self) -> int:
        return len(self.lam)

    @property
    def J(self) -> int:
        return len(self.mu)

    @property
    def total_lam(self) -> float:
        return sum(self.lam)

    @property
    def total_mu(self) -> float:
        return sum(self.mu)

    @property
    def alpha(self) -> tuple:
        t = self.total_lam
        return tuple(v / t for v in self.lam)

    @property
    def beta(self) -> tuple:
        t = self.total_mu
        return tuple(v / t for v in self.mu)

    def scaled(self, total_lam: float) -> "MatchingSpec":
        """Same type mix, total arrival rate ``total_lam``."""
        return MatchingSpec(tuple(a * total_lam for a in self.alpha), self.mu, self.compat,
                            self.type_names, self.server_names)

    def restrict(self, types: Iterable[int], servers: Iterable[int]) -> "MatchingSpec":
        types, servers = sorted(types), sorted(servers)
        comp = [[self.compat[s][c] for c in types] for s in servers]
        return MatchingSpec(tuple(self.lam[c] for c in types), tuple(self.mu[s] for s in servers), comp,
                            tuple(self.type_names[c] for c in types),
                            tuple(self.server_names[s] for s in servers))

    # bitmask helpers ---------------------------------------------------
    def _server_mask_of_type(self) -> list[int]:
        return [sum(1 << s for s in range(self.J) if self.compat[s][c]) for c in range(self.I)]

    def _type_mask_of_server(self) -> list[int]:
        return [sum(1 << c for c in range(self.I) if self.compat[s][c]) for s in range(self.J)]


def _bits(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def _mask(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def _union_table(masks: Sequence[int], n: int) -> list[int]:
    """table[m] = OR of masks[i] over the bits i of m."""
    out = [0] * (1 << n)
    for m in range(1, 1 << n):
        low = (m & -m).bit_length() - 1
        out[m] = out[m & (m - 1)] | masks[low]
    return out


def _sum_table(values: Sequence[Fraction], n: int) -> list[Fraction]:
    out = [Fraction(0)] * (1 << n)
    for m in range(1, 1 << n):
        low = (m & -m).bit_length() - 1
        out[m] = out[m & (m - 1)] + values[low]
    return out


def _check_size(spec: MatchingSpec):
    if spec.I > MAX_ENUMERATION or spec.J > MAX_ENUMERATION:
        raise ValueError(f"subset enumeration is capped at {MAX_ENUMERATION} types and servers")


def servers_of(spec: MatchingSpec, types: Iterable[int]) -> frozenset[int]:
    """S(C): servers compatible with at least one type in C."""
    types = set(types)
    return frozenset(s for s in range(spec.J) if any(spec.compat[s][c] for c in types))


def types_of(spec: MatchingSpec, servers: Iterable[int]) -> frozenset[int]:
    """C(S): types compatible with at least one server in S."""
    servers = set(servers)
    return frozenset(c for c in range(spec.I) if any(spec.compat[s][c] for s in servers))


def unique_types(spec: MatchingSpec, servers: Iterable[int]) -> frozenset[int]:
    """U(S): types that only servers in S can serve."""
    outside = set(range(spec.J)) - set(servers)
    return frozenset(range(spec.I)) - types_of(spec, outside)


def subset_maps(spec: MatchingSpec, servers: Iterable[int] | None = None,
                types: Iterable[int] | None = None) -> dict:
    out = {}
    if types is not None:
        out["servers_of"] = servers_of(spec, types)
    if servers is not None:
        out["types_of"] = types_of(spec, servers)
        out["unique_types"] = unique_types(spec, servers)
    return out


@dataclass(frozen=True)
class ConditionCheck:
    holds: bool
    witness: tuple | None  # violating subset of the first family, by name
    families: tuple[bool, bool, bool]
    family_witnesses: tuple = ()

    def __bool__(self):
        return self.holds


def _first_violation(n: int, ok, masks_order) -> int | None:
    for m in masks_order:
        if not ok(m):
            return m
    return None


def _ordered_masks(n: int, include_empty: bool, include_full: bool) -> list[int]:
    full = (1 << n) - 1
    masks = [m for m in range(1 << n) if (m or include_empty) and (m != full or include_full)]
    return sorted(masks, key=lambda m: (bin(m).count("1"), _bits(m)))


def _families(spec: MatchingSpec, normalized: bool):
    _check_size(spec)
    I, J = spec.I, spec.J
    lam = [Fraction(v) for v in spec.lam]
    mu = [Fraction(v) for v in spec.mu]
    if normalized:
        tl, tm = sum(lam), sum(mu)
        lam = [v / tl for v in lam]
        mu = [v / tm for v in mu]
    L = _sum_table(lam, I)
    M = _sum_table(mu, J)
    S_of = _union_table(spec._server_mask_of_type(), I)
    C_of = _union_table(spec._type_mask_of_server(), J)
    fullC, fullS = (1 << I) - 1, (1 << J) - 1
    lam_tot, mu_tot = L[fullC], M[fullS]

    def U(smask):
        return fullC & ~C_of[fullS & ~smask]

    if normalized:
        f1 = (lambda c: L[c] < M[S_of[c]], _ordered_masks(I, False, False))
        f2 = (lambda s: M[s] < L[C_of[s]], _ordered_masks(J, False, False))
        f3 = (lambda s: M[s] > L[U(s)], _ordered_masks(J, False, False))
    else:
        # second family in complement form so that it is equivalent for lam != mu
        f1 = (lambda c: L[c] < M[S_of[c]], _ordered_masks(I, False, True))
        f2 = (lambda s: M[s] - L[C_of[s]] < mu_tot - lam_tot, _ordered_masks(J, True, False))
        f3 = (lambda s: M[s] > L[U(s)], _ordered_masks(J, False, True))
    out = []
    for ok, order in (f1, f2, f3):
        out.append(_first_violation(0, ok, order))
    return out


def _condition(spec: MatchingSpec, normalized: bool) -> ConditionCheck:
    v1, v2, v3 = _families(spec, normalized)
    verdicts = (v1 is None, v2 is None, v3 is None)
    if len(set(verdicts)) != 1:
        raise ConditionMismatch(f"subset-condition families disagree: {verdicts}")
    wit = None if v1 is None else tuple(spec.type_names[i] for i in _bits(v1))
    fw = (
        None if v1 is None else tuple(spec.type_names[i] for i in _bits(v1)),
        None if v2 is None else tuple(spec.server_names[i] for i in _bits(v2)),
        None if v3 is None else tuple(spec.server_names[i] for i in _bits(v3)),
    )
    return ConditionCheck(verdicts[0], wit, verdicts, fw)


def check_ergodic(spec: MatchingSpec) -> ConditionCheck:
    """Ergodicity of the FCFS-ALIS chain by brute-force subset enumeration.

    Families: lam_C < mu_S(C) for non-empty C; mu_S - lam_C(S) < mu - lam for
    S other than the full server set; mu_S > lam_U(S) for non-empty S.
    """
    return _condition(spec, normalized=False)


def check_crp(spec: MatchingSpec) -> ConditionCheck:
    """Complete resource pooling on normalised rates alpha, beta.

    Families, over proper non-empty subsets: alpha_C < beta_S(C),
    beta_S < alpha_C(S), beta_S > alpha_U(S).
    """
    return _condition(spec, normalized=True)


# ----------------------------------------------------------------- states

@dataclass(frozen=True)
class FcfsState:
    """``busy`` in order of their customers' arrival, ``gaps[j]`` customers
    waiting behind ``busy[j]``, ``idle`` from shortest to longest idle."""

    busy: tuple
    gaps: tuple
    idle: tuple

    def __post_init__(self):
        object.__setattr__(self, "busy", tuple(int(v) for v in self.busy))
        object.__setattr__(self, "gaps", tuple(int(v) for v in self.gaps))
        object.__setattr__(self, "idle", tuple(int(v) for v in self.idle))
        if len(self.gaps) != len(self.busy):
            raise ValueError("one gap per busy server")
        if any(g < 0 for g in self.gaps):
            raise ValueError("gaps must be non-negative")
        perm = self.busy + self.idle
        if sorted(perm) != list(range(len(perm))):
            raise ValueError("busy and idle servers must form a permutation")

    @property
    def permutation(self) -> tuple:
        return self.busy + self.idle

    @property
    def k(self) -> int:
        return len(self.busy)

    def encode(self) -> np.ndarray:
        """Integer vector ``[perm..., k, gaps padded to J]``."""
        J = len(self.permutation)
        return np.array(list(self.permutation) + [self.k] + list(self.gaps) + [0] * (J - self.k),
                        dtype=np.int64)

    @classmethod
    def decode(cls, vec) -> "FcfsState":
        vec = [int(v) for v in vec]
        J = (len(vec) - 1) // 2
        perm, k, gaps = vec[:J], vec[J], vec[J + 1:]
        return cls(tuple(perm[:k]), tuple(gaps[:k]), tuple(perm[k:]))

    def label(self, spec: MatchingSpec | None = None) -> str:
        name = (lambda s: spec.server_names[s]) if spec else (lambda s: f"s{s + 1}")
        parts = []
        for s, n in zip(self.busy, self.gaps):
            parts += [name(s), str(n)]
        parts += [name(s) for s in self.idle]
        return "(" + ",".join(parts) + ")"


def log_stationary_weight(spec: MatchingSpec, state: FcfsState) -> float:
    """Log of the unnormalised product-form weight of ``state``."""
    lw = 0.0
    prefix: list[int] = []
    for s, n in zip(state.busy, state.gaps):
        prefix.append(s)
        lam_u = sum(spec.lam[c] for c in unique_types(spec, prefix))
        mu_p = sum(spec.mu[t] for t in prefix)
        if n > 0:
            if lam_u == 0.0:
                return -math.inf
            lw += n * math.log(lam_u)
        lw -= (n + 1) * math.log(mu_p)
    perm = state.permutation
    for j in range(state.k, len(perm)):
        lam_c = sum(spec.lam[c] for c in types_of(spec, perm[j:]))
        lw -= math.log(lam_c)
    return lw


def stationary_weight(spec: MatchingSpec, state: FcfsState) -> float:
    return math.exp(log_stationary_weight(spec, state))


# -------------------------------------------------------------- limit law

@dataclass(frozen=True)
class LimitLaw:
    """Limit of (permutation, n_1..n_{J-1}) for an overloaded CRP system.

    For a permutation M, write b_j = beta of its first j servers and
    a_j = alpha of the types only they can serve.  The weight of gaps
    n_1..n_{J-1} is prod_j a_j^{n_j} / b_j^{n_j+1}; the factor of the last,
    growing gap is identically 1 because a_J = b_J = 1.
    """

    permutations: tuple
    a: np.ndarray  # (J!, J-1)
    b: np.ndarray  # (J!, J-1)
    B0: float

    @property
    def ratios(self) -> np.ndarray:
        return self.a / self.b

    def permutation_weights(self) -> np.ndarray:
        return np.prod(1.0 / (self.b - self.a), axis=1)

    def permutation_marginal(self) -> dict:
        w = self.permutation_weights() * self.B0
        return {p: float(x) for p, x in zip(self.permutations, w)}

    def pmf(self, perm, gaps) -> float:
        i = self.permutations.index(tuple(perm))
        g = np.asarray(gaps, dtype=float)
        return float(self.B0 * np.prod(self.a[i] ** g / self.b[i] ** (g + 1)))

    def conditional_gap_law(self, perm) -> np.ndarray:
        """Geometric ratio of each finite gap given the permutation."""
        return self.ratios[self.permutations.index(tuple(perm))]

    def table(self, truncation: int = GAP_CAP):
        """Rows (perm, gaps, probability); gap value ``truncation + 1`` is the overflow."""
        rows = []
        J1 = self.a.shape[1]
        for i, p in enumerate(self.permutations):
            pw = self.B0 * self.permutation_weights()[i]
            r = self.ratios[i]
            per_gap = []
            for j in range(J1):
                probs = [(1 - r[j]) * r[j] ** n for n in range(truncation + 1)]
                probs.append(r[j] ** (truncation + 1))
                per_gap.append(probs)
            for gaps in itertools.product(range(truncation + 2), repeat=J1):
                pr = pw * float(np.prod([per_gap[j][g] for j, g in enumerate(gaps)])) if J1 else pw
                rows.append((p, gaps, pr))
        return rows


def limit_law(spec: MatchingSpec) -> LimitLaw:
    if spec.total_lam <= spec.total_mu:
        raise ValueError("limit law needs an overloaded system (lambda > mu)")
    if spec.J < 2:
        raise ValueError("a single overloaded server has no non-trivial permutation law")
    if not check_crp(spec):
        raise ValueError("complete resource pooling fails; some gap sums diverge")
    alpha, beta = spec.alpha, spec.beta
    perms = tuple(itertools.permutations(range(spec.J)))
    a = np.zeros((len(perms), spec.J - 1))
    b = np.zeros((len(perms), spec.J - 1))
    for i, p in enumerate(perms):
        for j in range(spec.J - 1):
            prefix = p[:j + 1]
            a[i, j] = sum(alpha[c] for c in unique_types(spec, prefix))
            b[i, j] = sum(beta[s] for s in prefix)
    if np.any(a >= b):
        raise ValueError("a gap ratio is >= 1")
    z = float(np.sum(np.prod(1.0 / (b - a), axis=1)))
    return LimitLaw(perms, a, b, 1.0 / z)


def truncated_normalizer(law: LimitLaw, cutoff: int = 1000) -> float:
    """1/B0 by explicit summation of the weights over gaps <= cutoff."""
    n = np.arange(cutoff + 1, dtype=float)
    total = 0.0
    for i in range(len(law.permutations)):
        term = 1.0
        for j in range(law.a.shape[1]):
            # (a/b)^n / b avoids b^(n+1) underflowing to zero
            col = (law.a[i, j] / law.b[i, j]) ** n / law.b[i, j]
            term *= float(np.sum(col))
        total += term
    return total


# ---------------------------------------------------------- decomposition

@dataclass
class Decomposition:
    blocks: list = field(default_factory=list)  # [(type indices, server indices)]
    ratios: list = field(default_factory=list)
    ties: list = field(default_factory=list)

    def named(self, spec: MatchingSpec) -> list:
        return [([spec.type_names[c] for c in C], [spec.server_names[s] for s in S]) for C, S in self.blocks]


def decompose(spec: MatchingSpec) -> Decomposition:
    """Split types and servers into blocks that each pool completely.

    Block i takes the remaining type set C minimising beta_S(C) / alpha_C,
    with S(C) taken among the servers not yet assigned.  Ties go to the
    smallest set, then the lexicographically first; they are reported.
    """
    _check_size(spec)
    lam = [Fraction(v) for v in spec.lam]
    mu = [Fraction(v) for v in spec.mu]
    alpha = [v / sum(lam) for v in lam]
    beta = [v / sum(mu) for v in mu]
    rem_types = list(range(spec.I))
    rem_servers = set(range(spec.J))
    out = Decomposition()
    while rem_types:
        best = None
        cands = []
        for r in range(1, len(rem_types) + 1):
            for C in itertools.combinations(rem_types, r):
                S = servers_of(spec, C) & rem_servers
                ratio = sum((beta[s] for s in S), Fraction(0)) / sum((alpha[c] for c in C), Fraction(0))
                cands.append((ratio, C, S))
                if best is None or ratio < best[0]:
                    best = (ratio, C, S)
        minimizers = [c for c in cands if c[0] == best[0]]
        if len(minimizers) > 1:
            out.ties.append([list(m[1]) for m in minimizers])
        ratio, C, S = best
        sub = spec.restrict(C, S)
        if not check_crp(sub):
            raise RuntimeError(f"block {C} does not pool completely")
        out.blocks.append((list(C), sorted(S)))
        out.ratios.append(float(ratio))
        rem_types = [c for c in rem_types if c not in C]
        rem_servers -= set(S)
    return out


# ------------------------------------------------------------- simulation

@dataclass(frozen=True)
class DetailedState:
    """Kernel-level state: per-server customer sequence numbers (-1 idle),
    waiting customers (sequence number, type) in arrival order, idle order
    shortest-idle first, and the next sequence number."""

    busy_ids: tuple
    wait_ids: tuple
    wait_types: tuple
    idle: tuple
    next_seq: int

    @classmethod
    def empty(cls, spec: MatchingSpec, idle_order=None) -> "DetailedState":
        idle = tuple(range(spec.J)) if idle_order is None else tuple(idle_order)
        return cls((-1,) * spec.J, (), (), idle, 0)

    @classmethod
    def from_line(cls, spec: MatchingSpec, line, idle) -> "DetailedState":
        """``line`` lists, in arrival order, ``("s", server)`` for a customer
        in service and ``("c", type)`` for a waiting one."""
        busy = [-1] * spec.J
        wids, wtys = [], []
        for seq, (kind, x) in enumerate(line):
            if kind == "s":
                busy[x] = seq
            else:
                wids.append(seq)
                wtys.append(x)
        return cls(tuple(busy), tuple(wids), tuple(wtys), tuple(idle), len(line))


class FcfsTrajectory(Trajectory):
    """Trajectory whose states are encoded :class:`FcfsState` vectors."""

    def __init__(self, times, perm, k, gaps, events, final, J):
        states = np.concatenate([perm.astype(np.int64), k.astype(np.int64)[:, None], gaps], axis=1)
        super().__init__(times, states, "fcfs")
        self.perm = perm
        self.k = k
        self.gaps = gaps
        self.events = events
        self.final = final
        self.J = J

    def state(self, i: int) -> FcfsState:
        return FcfsState.decode(self.states[i])

    def last_gap(self) -> np.ndarray:
        """Queue behind the last busy server (0 when all servers are idle)."""
        idx = np.maximum(self.k.astype(np.int64) - 1, 0)
        out = self.gaps[np.arange(len(idx)), idx]
        return np.where(self.k > 0, out, 0)


def simulate_fcfs_alis(spec: MatchingSpec, n_events: int, driver: RandomDriver,
                       initial: DetailedState | None = None, validate: bool = True) -> FcfsTrajectory:
    """Uniformized event simulation at total rate sum(lam) + sum(mu)."""
    init = initial or DetailedState.empty(spec)
    comp = np.array(spec.compat, dtype=np.int8)
    times, perm, k, gaps, events, final = _kernels.fcfs_run(
        list(spec.lam), list(spec.mu), comp, list(init.busy_ids), list(init.wait_ids),
        list(init.wait_types), list(init.idle), int(init.next_seq), int(n_events), driver.key)
    busy, wid, wty, idle, seq = final
    fin = DetailedState(tuple(int(v) for v in busy), tuple(int(v) for v in wid),
                        tuple(int(v) for v in wty), tuple(int(v) for v in idle), int(seq))
    traj = FcfsTrajectory(times, perm, k, gaps, events, fin, spec.J)
    if validate:
        check_state_invariants(traj)
    return traj


def check_state_invariants(traj: FcfsTrajectory) -> None:
    """Every recorded state is a permutation with gaps only behind busy servers."""
    J = traj.J
    if not np.array_equal(np.sort(traj.perm, axis=1), np.broadcast_to(np.arange(J), traj.perm.shape)):
        raise AssertionError("recorded server order is not a permutation")
    k = traj.k.astype(np.int64)
    if np.any((k < 0) | (k > J)):
        raise AssertionError("busy count out of range")
    if np.any(traj.gaps < 0):
        raise AssertionError("negative gap")
    beyond = np.arange(J)[None, :] >= k[:, None]
    if np.any(traj.gaps[beyond] != 0):
        raise AssertionError("gap recorded behind an idle server")


def waiting_by_type(spec: MatchingSpec, state: DetailedState) -> np.ndarray:
    return np.bincount(np.asarray(state.wait_types, dtype=np.int64), minlength=spec.I)


def state_distribution(traj: FcfsTrajectory, burn_in_fraction: float = 0.0,
                       gap_cap: int = GAP_CAP) -> EmpiricalDistribution:
    """Per-event frequencies of encoded states, gaps capped at ``gap_cap + 1``.

    Under uniformization every event epoch carries the same expected holding
    time, so these frequencies estimate time averages.
    """
    start = int(burn_in_fraction * len(traj))
    st = traj.states[start:].copy()
    J = traj.J
    st[:, J + 1:] = np.minimum(st[:, J + 1:], gap_cap + 1)
    return EmpiricalDistribution.from_states(st)


def weight_ratio_check(spec: MatchingSpec, dist: EmpiricalDistribution, top: int = 8,
                       tol: float = 0.05, gap_cap: int = GAP_CAP) -> dict:
    """Compare frequency ratios of the most visited states with weight ratios.

    The most frequent state is the reference; ``top`` further states are
    compared.  States touching the overflow bucket are skipped.
    """
    items = sorted(dist.counts.items(), key=lambda kv: -kv[1])
    items = [(k, c) for k, c in items if max(decode_state(k)[len(decode_state(k)) // 2 + 1:] or (0,)) <= gap_cap]
    ref_key, ref_count = items[0]
    ref_state = FcfsState.decode(decode_state(ref_key))
    ref_lw = log_stationary_weight(spec, ref_state)
    rows = []
    ok = True
    for key, c in items[1:top + 1]:
        st = FcfsState.decode(decode_state(key))
        pred = math.exp(log_stationary_weight(spec, st) - ref_lw)
        emp = c / ref_count
        rel = abs(emp / pred - 1.0)
        rows.append(dict(state=st.label(spec), empirical_ratio=emp, weight_ratio=pred, rel_error=rel))
        ok &= rel <= tol
    worst = max((r["rel_error"] for r in rows), default=0.0)
    return dict(reference=ref_state.label(spec), rows=rows, tolerance=tol, max_rel_error=worst,
                passed=bool(ok))


def mm1_queue_law_tv(traj: FcfsTrajectory, rho: float, burn_in_fraction: float = 0.0,
                     truncation: int = 60) -> float:
    """TV between the per-event law of the number in a single-server system
    and the geometric law (1 - rho) rho^n."""
    start = int(burn_in_fraction * len(traj))
    n = traj.k[start:].astype(np.int64) + traj.gaps[start:, 0]
    vals, cnt = np.unique(np.minimum(n, truncation + 1), return_counts=True)
    emp = {int(v): c / cnt.sum() for v, c in zip(vals, cnt)}
    pred = {j: (1 - rho) * rho ** j for j in range(truncation + 1)}
    pred[truncation + 1] = rho ** (truncation + 1)
    return tv_distance(emp, pred)


def _final_perm(args):
    spec, n_events, driver = args
    traj = simulate_fcfs_alis(spec, n_events, driver)
    return tuple(int(v) for v in traj.perm[-1]), int(traj.k[-1]), [int(g) for g in traj.gaps[-1]]


def verify_overload(spec: MatchingSpec, n_events: int, replications: int, rep_events: int,
                    driver: RandomDriver, *, busy_tol: float = 0.999, growth_rel_tol: float = 0.05,
                    tv_tol: float = 0.03, b0_rel_tol: float = 1e-6, cutoff: int = 1000,
                    workers: int = 1) -> dict:
    """Overloaded CRP system: all servers busy eventually, last gap grows at
    lam - mu, and the permutation converges to the limiting law."""
    law = limit_law(spec)
    long = simulate_fcfs_alis(spec, n_events, driver.child(0))
    half = len(long) // 2
    busy_frac = float(np.mean(long.k[half:] == spec.J))
    last = Trajectory(long.times, long.last_gap()[:, None])
    rate = growth_rate(last, 0, 0.5)
    pred = spec.total_lam - spec.total_mu
    reps = map_replications(_final_perm, [(spec, rep_events, d) for d in driver.child(1).children(replications)],
                            workers)
    counts: dict = {}
    all_busy = 0
    for perm, k, _ in reps:
        counts[perm] = counts.get(perm, 0) + 1
        all_busy += k == spec.J
    emp = {p: c / replications for p, c in counts.items()}
    tv = tv_distance(emp, law.permutation_marginal())
    z_trunc = truncated_normalizer(law, cutoff)
    b0_rel = abs(1.0 / z_trunc - law.B0) / law.B0
    res = dict(
        all_busy_fraction=busy_frac, all_busy_tolerance=busy_tol, all_busy_passed=busy_frac >= busy_tol,
        last_gap_rate=rate, predicted_rate=pred, rate_rel_tolerance=growth_rel_tol,
        rate_passed=abs(rate - pred) <= growth_rel_tol * pred,
        permutation_tv=tv, tv_tolerance=tv_tol, permutation_passed=tv < tv_tol,
        replications_all_busy=all_busy / replications,
        B0=law.B0, B0_truncated=1.0 / z_trunc, B0_rel_error=b0_rel, B0_passed=b0_rel <= b0_rel_tol,
        limit_permutation_marginal={",".join(spec.server_names[s] for s in p): v
                                    for p, v in law.permutation_marginal().items()},
        empirical_permutation_marginal={",".join(spec.server_names[s] for s in p): v for p, v in emp.items()},
    )
    res["passed"] = bool(res["all_busy_passed"] and res["rate_passed"] and res["permutation_passed"]
                         and res["B0_passed"])
    return res


def divergent_types(spec: MatchingSpec, n_events: int, driver: RandomDriver, rel_tol: float = 0.05) -> list[int]:
    """Types whose waiting count per unit time exceeds ``rel_tol`` of their rate."""
    traj = simulate_fcfs_alis(spec, n_events, driver)
    w = waiting_by_type(spec, traj.final)
    T = traj.times[-1]
    return [c for c in range(spec.I) if w[c] / T > rel_tol * spec.lam[c]]


def estimate_thresholds(spec: MatchingSpec, n_events: int, driver: RandomDriver,
                        lo: float | None = None, hi: float | None = None, iters: int = 12) -> list:
    """Empirical onset of divergence for each decomposition block.

    Bisects on the total arrival rate (type mix fixed) for the smallest rate
    at which some type of the block keeps accumulating.  Simulation based
    and unverified; treat as exploratory.
    """
    dec = decompose(spec)
    lo = 0.05 * spec.total_mu if lo is None else lo
    hi = 3.0 * spec.total_mu if hi is None else hi
    out = []
    for b, (C, S) in enumerate(dec.blocks):
        a, z = lo, hi
        for it in range(iters):
            mid = 0.5 * (a + z)
            div = set(divergent_types(spec.scaled(mid), n_events, driver.child(1000 * b + it)))
            if div & set(C):
                z = mid
            else:
                a = mid
        out.append(dict(block=b, types=[spec.type_names[c] for c in C],
                        servers=[spec.server_names[s] for s in S], onset=0.5 * (a + z)))
    return out
