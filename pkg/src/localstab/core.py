"""Markov chains as stochastic recursions driven by indexed randomness.

A chain is written as ``X(n+1) = f(X(n), U_n)`` with ``U_n`` read from a
:class:`RandomDriver`.  The driver is counter based: ``U_n`` is a hash of
``(seed, stream_id, n)``, so the same uniform can be re-read for any index,
negative ones included.  Backward coupling depends on that.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SUB_MUL = 0xD6E8FEB86659FD93

_U64 = np.uint64
_C1 = _U64(0xBF58476D1CE4E5B9)
_C2 = _U64(0x94D049BB133111EB)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _C1
    z = (z ^ (z >> _U64(27))) * _C2
    return z ^ (z >> _U64(31))


def batch_uniform(keys, n, sub: int = 0) -> np.ndarray:
    """Vectorised ``uniform``: broadcasts over driver keys and indices."""
    keys = np.asarray(keys, dtype=np.uint64)
    idx = np.asarray(n, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64_np(keys + idx * _U64(_GOLDEN))
        h = _mix64_np(h ^ _U64((sub * _SUB_MUL) & _MASK))
    return (h >> _U64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class RandomDriver:
    """Deterministic source of uniforms on [0, 1) indexed by any integer."""

    seed: int
    stream_id: int = 0
    key: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "key", int(_kernels.make_key(self.seed, self.stream_id)))

    def uniform(self, n: int, sub: int = 0) -> float:
        return _kernels.uniform(self.key, n, sub)

    def uniforms(self, indices, sub: int = 0) -> np.ndarray:
        return batch_uniform(self.key, indices, sub)

    def child(self, k: int) -> "RandomDriver":
        """Independent stream number ``k`` derived from this one."""
        mixed = _kernels.python_backend.mix64(
            (self.stream_id * _GOLDEN + (k + 1) * _SUB_MUL) & _MASK)
        return RandomDriver(self.seed, mixed)

    def children(self, count: int) -> list["RandomDriver"]:
        return [self.child(k) for k in range(count)]


def make_driver(seed: int, stream_id: int = 0) -> RandomDriver:
    return RandomDriver(int(seed), int(stream_id))


@dataclass(frozen=True)
class Recursion:
    """A stochastic recursion ``x' = step(x, u)``.

    ``step`` is vectorised: it receives states of shape ``(N, state_dim)`` and
    uniforms of shape ``(N, n_uniforms)`` and returns new states of shape
    ``(N, state_dim)``.  It must not mutate its inputs.
    """

    state_dim: int
    step: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_uniforms: int = 1
    monotone: bool = False
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1 or self.n_uniforms < 1:
            raise ValueError("state_dim and n_uniforms must be positive")

    def uniforms_at(self, driver: RandomDriver, n: int) -> np.ndarray:
        return np.array([driver.uniform(n, s) for s in range(self.n_uniforms)])

    def batch_uniforms_at(self, keys, n: int) -> np.ndarray:
        return np.stack([batch_uniform(keys, n, s) for s in range(self.n_uniforms)], axis=-1)


@dataclass
class Trajectory:
    """Sample path: ``states[i]`` is the state at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray
    model_tag: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times)
        self.states = np.asarray(self.states)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def coordinate(self, i: int) -> np.ndarray:
        return self.states[:, i]

    def __add__(self, other: "Trajectory") -> "Trajectory":
        if not np.array_equal(self.times, other.times):
            raise ValueError("trajectories must share their time grid")
        return Trajectory(self.times, self.states + other.states, self.model_tag)


def iterate(rec: Recursion, x0: Sequence[int], driver: RandomDriver, n_steps: int) -> Trajectory:
    """Forward iteration; step t reads the uniforms at index t."""
    x = np.asarray(x0, dtype=np.int64).reshape(-1)
    if x.shape[0] != rec.state_dim:
        raise ValueError(f"x0 has dimension {x.shape[0]}, recursion expects {rec.state_dim}")
    states = np.empty((n_steps + 1, rec.state_dim), dtype=np.int64)
    states[0] = x
    for t in range(n_steps):
        u = rec.uniforms_at(driver, t)
        x = np.asarray(rec.step(x[None, :], u[None, :]), dtype=np.int64)[0]
        states[t + 1] = x
    return Trajectory(np.arange(n_steps + 1), states, rec.name)


@dataclass(frozen=True)
class MonotoneCheck:
    ok: bool
    witness: tuple | None = None  # (x, x_hat, u) with x >= x_hat but step(x,u) < step(x_hat,u)

    def __bool__(self):
        return self.ok


def check_monotone(rec: Recursion, driver: RandomDriver, box, sample_pairs: int = 10_000) -> MonotoneCheck:
    """Randomised search for a violation of order preservation.

    Draws ``sample_pairs`` ordered pairs ``x >= x_hat`` inside
    ``box = (lower, upper)`` and feeds both through ``step`` with the same
    uniforms.  A pass is evidence, not proof.
    """
    lo = np.broadcast_to(np.asarray(box[0], dtype=np.int64), (rec.state_dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=np.int64), (rec.state_dim,))
    if np.any(hi < lo):
        raise ValueError("empty box")
    d = rec.state_dim
    idx = np.arange(sample_pairs)
    x_hat = np.empty((sample_pairs, d), dtype=np.int64)
    x = np.empty((sample_pairs, d), dtype=np.int64)
    for c in range(d):
        width = hi[c] - lo[c] + 1
        x_hat[:, c] = lo[c] + np.floor(driver.uniforms(idx, c) * width).astype(np.int64)
        room = hi[c] - x_hat[:, c] + 1
        x[:, c] = x_hat[:, c] + np.floor(driver.uniforms(idx, d + c) * room).astype(np.int64)
    u = np.stack([driver.uniforms(idx, 2 * d + s) for s in range(rec.n_uniforms)], axis=1)
    y = np.asarray(rec.step(x, u))
    y_hat = np.asarray(rec.step(x_hat, u))
    bad = np.flatnonzero(np.any(y < y_hat, axis=1))
    if bad.size == 0:
        return MonotoneCheck(True)
    i = bad[0]
    return MonotoneCheck(False, (tuple(int(v) for v in x[i]), tuple(int(v) for v in x_hat[i]),
                                 tuple(float(v) for v in u[i])))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("LOCALSTAB_WORKERS", "1") or 1)
    return max(1, int(workers))


def map_replications(fn: Callable, items: Sequence, workers: int | None = 1) -> list:
    """Order-preserving map; a process pool when ``workers > 1``.

    Results depend only on each item, so serial and parallel runs agree.
    """
    workers = resolve_workers(workers)
    items = list(items)
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
