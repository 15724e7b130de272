"""Pure-Python simulation kernels.

These are the reference implementations; ``_ckernels.pyx`` mirrors them line
by line and must return bit-identical output for the same key.

Randomness is counter based: ``uniform(key, n, sub)`` is a pure function of the
driver key, the step index ``n`` (any signed 64-bit integer) and a small
sub-index.  Index schedules used by the kernels:

jackson_run
    event k: sub 0 holding time, sub 1 event choice, sub 2 routing
fcfs_run
    event k: sub 0 holding time, sub 1 event choice
csma_run
    slot t: sub 0 arrival, sub 1..n-1 Fisher-Yates swaps
counterexample_run
    step n (n >= 1): sub 0 sign of the walk increment, sub 1 jump size
"""

import math
from bisect import bisect_right

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_MUL = 0xD1B54A32D192ED03
SUB_MUL = 0xD6E8FEB86659FD93
INV53 = 1.0 / 9007199254740992.0
JUMP_CAP = 2 ** 61

BACKEND = "python"


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def make_key(seed, stream):
    # offset the seed so that seed 0 does not map to the fixed point 0 of mix64
    return mix64((mix64((seed + GOLDEN) & MASK) + (stream & MASK) * STREAM_MUL) & MASK)


def uniform(key, n, sub=0):
    h = mix64((key + (n & MASK) * GOLDEN) & MASK)
    h = mix64(h ^ (((sub & MASK) * SUB_MUL) & MASK))
    return (h >> 11) * INV53


def _pick(rates, total, target, last_pos):
    acc = 0.0
    for e in range(len(rates)):
        acc += rates[e]
        if target < acc:
            return e
    return last_pos


def _total(rates):
    total = 0.0
    for r in rates:
        total += r
    return total


def _last_positive(rates):
    last = -1
    for e, r in enumerate(rates):
        if r > 0.0:
            last = e
    return last


# ---------------------------------------------------------------- jackson

def jackson_run(nu, mu, P, x0, horizon, key, max_events=100_000_000):
    """Uniformized Jackson network; returns (times, states, n_arr, n_dep)."""
    import numpy as np

    I = len(nu)
    rates = [float(v) for v in nu] + [float(v) for v in mu]
    total = _total(rates)
    last_pos = _last_positive(rates)
    P = [[float(v) for v in row] for row in P]
    x = [int(v) for v in x0]
    times = [0.0]
    states = [list(x)]
    n_arr = 0
    n_dep = 0
    if total <= 0.0:
        return np.array(times), np.array(states, dtype=np.int64), 0, 0
    t = 0.0
    k = 0
    while k < max_events:
        t += -math.log1p(-uniform(key, k, 0)) / total
        if t > horizon:
            break
        e = _pick(rates, total, uniform(key, k, 1) * total, last_pos)
        if e < I:
            x[e] += 1
            n_arr += 1
        else:
            i = e - I
            if x[i] > 0:
                x[i] -= 1
                target = uniform(key, k, 2)
                acc = 0.0
                dest = -1
                row = P[i]
                for j in range(I):
                    acc += row[j]
                    if target < acc:
                        dest = j
                        break
                if dest >= 0:
                    x[dest] += 1
                else:
                    n_dep += 1
        times.append(t)
        states.append(list(x))
        k += 1
    return (np.array(times), np.array(states, dtype=np.int64).reshape(-1, I),
            n_arr, n_dep)


# ------------------------------------------------------------------- fcfs

def _fcfs_record(busy, fifo, heads, idle, J):
    order = sorted((busy[s], s) for s in range(J) if busy[s] >= 0)
    perm = [s for _, s in order] + list(idle)
    gaps = [0] * J
    nb = len(order)
    for j in range(nb):
        lo = order[j][0]
        hi = order[j + 1][0] if j + 1 < nb else None
        cnt = 0
        for c in range(len(fifo)):
            q = fifo[c]
            a = bisect_right(q, lo, heads[c])
            b = len(q) if hi is None else bisect_right(q, hi, heads[c])
            cnt += b - a
        gaps[j] = cnt
    return perm, nb, gaps


def fcfs_run(lam, mu, compat, busy0, wait_ids0, wait_types0, idle0, next_seq,
             n_events, key):
    """FCFS-ALIS skill-based queue, uniformized at rate sum(lam)+sum(mu).

    ``compat[s][c]`` is 1 when server s can serve type c.  Busy servers hold
    the arrival sequence number of their customer (-1 when idle); waiting
    customers are kept in one FIFO of sequence numbers per type, so FCFS
    selection is a min over the heads of the compatible FIFOs.

    Returns (times, perm, k, gaps, events, final) where ``final`` is
    (busy, wait_ids, wait_types, idle, next_seq).
    """
    import numpy as np

    I, J = len(lam), len(mu)
    rates = [float(v) for v in lam] + [float(v) for v in mu]
    total = _total(rates)
    last_pos = _last_positive(rates)
    types_of = [[c for c in range(I) if compat[s][c]] for s in range(J)]
    busy = [int(b) for b in busy0]
    fifo = [[] for _ in range(I)]
    for sid, c in zip(wait_ids0, wait_types0):
        fifo[int(c)].append(int(sid))
    heads = [0] * I
    idle = [int(s) for s in idle0]
    seq = int(next_seq)

    times = np.zeros(n_events + 1)
    perm_rec = np.zeros((n_events + 1, J), dtype=np.int8)
    k_rec = np.zeros(n_events + 1, dtype=np.int8)
    gap_rec = np.zeros((n_events + 1, J), dtype=np.int64)
    events = np.zeros(n_events, dtype=np.int32)

    perm, nb, gaps = _fcfs_record(busy, fifo, heads, idle, J)
    perm_rec[0] = perm
    k_rec[0] = nb
    gap_rec[0] = gaps
    t = 0.0
    for ev in range(n_events):
        t += -math.log1p(-uniform(key, ev, 0)) / total
        e = _pick(rates, total, uniform(key, ev, 1) * total, last_pos)
        events[ev] = e
        if e < I:
            c = e
            chosen = -1
            for pos in range(len(idle) - 1, -1, -1):
                if compat[idle[pos]][c]:
                    chosen = pos
                    break
            if chosen >= 0:
                s = idle.pop(chosen)
                busy[s] = seq
            else:
                fifo[c].append(seq)
            seq += 1
        else:
            s = e - I
            if busy[s] >= 0:
                best_c = -1
                best_id = -1
                for c in types_of[s]:
                    if heads[c] < len(fifo[c]):
                        sid = fifo[c][heads[c]]
                        if best_c < 0 or sid < best_id:
                            best_c = c
                            best_id = sid
                if best_c >= 0:
                    heads[best_c] += 1
                    busy[s] = best_id
                else:
                    busy[s] = -1
                    idle.insert(0, s)
        times[ev + 1] = t
        perm, nb, gaps = _fcfs_record(busy, fifo, heads, idle, J)
        perm_rec[ev + 1] = perm
        k_rec[ev + 1] = nb
        gap_rec[ev + 1] = gaps

    waiting = sorted((fifo[c][h], c) for c in range(I)
                     for h in range(heads[c], len(fifo[c])))
    final = (
        np.array(busy, dtype=np.int64),
        np.array([w[0] for w in waiting], dtype=np.int64),
        np.array([w[1] for w in waiting], dtype=np.int64),
        np.array(idle, dtype=np.int64),
        seq,
    )
    return times, perm_rec, k_rec, gap_rec, events, final


# ------------------------------------------------------------------- csma

def csma_priorities(key, t, n):
    """Rank of every node in slot t's uniform priority order (higher wins)."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(uniform(key, t, i) * (i + 1))
        order[i], order[j] = order[j], order[i]
    prio = [0] * n
    for r in range(n):
        prio[order[r]] = r
    return prio


def csma_run(n, k, lam, q0, slots, key):
    """Line network with interference radius k.  ``lam < 0`` means the first
    node has an infinite supply; its recorded queue then counts one offered
    message per slot minus what it has sent.

    Returns (queues, tx_counts, departures, arrivals).
    """
    import numpy as np

    q = [int(v) for v in q0]
    infinite = lam < 0.0
    rec = np.zeros((slots + 1, n), dtype=np.int64)
    rec[0] = q
    tx_counts = [0] * n
    departures = 0
    arrivals = 0
    tx = [0] * n
    for t in range(slots):
        prio = csma_priorities(key, t, n)
        for v in range(n):
            tx[v] = 0
            if q[v] > 0 or (v == 0 and infinite):
                win = 1
                lo = max(0, v - k)
                hi = min(n - 1, v + k)
                for w in range(lo, hi + 1):
                    if w != v and (q[w] > 0 or (w == 0 and infinite)) and prio[w] > prio[v]:
                        win = 0
                        break
                tx[v] = win
        for v in range(n):
            if tx[v]:
                q[v] -= 1
                tx_counts[v] += 1
                if v + 1 < n:
                    q[v + 1] += 1
                else:
                    departures += 1
        if infinite:
            q[0] += 1
            arrivals += 1
        elif uniform(key, t, 0) < lam:
            q[0] += 1
            arrivals += 1
        rec[t + 1] = q
    return rec, np.array(tx_counts, dtype=np.int64), departures, arrivals


# --------------------------------------------------------- counterexample

def heavy_jump(u, alpha):
    """Integer Pareto jump with P(psi >= m) = m**-alpha, from u in [0, 1)."""
    try:
        v = (1.0 - u) ** (-1.0 / alpha)
    except OverflowError:
        return JUMP_CAP
    if v >= JUMP_CAP:
        return JUMP_CAP
    return int(math.floor(v))


def counterexample_run(alpha, horizon, x1_0, x2_0, conditional, checkpoints,
                       key, record):
    """Reflected-walk modulated chain; see coupling.run_counterexample.

    Returns (tau, x1_at_checkpoints, return_times, path) where ``path`` is
    (x1, x2) arrays when ``record`` is true, else None.
    """
    import numpy as np

    x1 = int(x1_0)
    x2 = int(x2_0)
    tau = -1
    cps = [int(c) for c in checkpoints]
    cp_vals = np.zeros(len(cps), dtype=np.int64)
    ci = 0
    while ci < len(cps) and cps[ci] <= 0:
        cp_vals[ci] = x1
        ci += 1
    returns = []
    last_zero = 0 if x2 == 0 else -1
    if record:
        p1 = np.zeros(horizon + 1, dtype=np.int64)
        p2 = np.zeros(horizon + 1, dtype=np.int64)
        p1[0] = x1
        p2[0] = x2
    for n in range(1, horizon + 1):
        x2prev = x2
        u = uniform(key, n, 0)
        if conditional:
            if u >= 0.5 or x2prev <= 1:
                x2 = x2prev + 1
            else:
                x2 = x2prev - 1
        elif u >= 0.5:
            x2 = x2prev + 1
        elif x2prev > 0:
            x2 = x2prev - 1
        else:
            x2 = 0
        if x2prev > 0:
            if x1 > 0:
                x1 -= 1
        else:
            x1 += heavy_jump(uniform(key, n, 1), alpha)
            if x1 > JUMP_CAP:
                x1 = JUMP_CAP
        if tau < 0 and x1 == 0:
            tau = n
        if x2 == 0:
            if last_zero >= 0:
                returns.append(n - last_zero)
            last_zero = n
        while ci < len(cps) and cps[ci] == n:
            cp_vals[ci] = x1
            ci += 1
        if record:
            p1[n] = x1
            p2[n] = x2
    path = (p1, p2) if record else None
    return tau, cp_vals, np.array(returns, dtype=np.int64), path
