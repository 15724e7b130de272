# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Every function here must return exactly what its Python counterpart returns
for the same arguments; the test-suite compares them element for element.
"""

import numpy as np

from libc.math cimport log1p, pow, floor
from libc.stdint cimport uint64_t, int64_t

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MUL = 0xD1B54A32D192ED03ULL
cdef uint64_t SUB_MUL = 0xD6E8FEB86659FD93ULL
cdef double INV53 = 1.0 / 9007199254740992.0
cdef int64_t JUMP_CAP = 2305843009213693952  # 2**61


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, int64_t n, uint64_t sub) nogil:
    cdef uint64_t h = _mix64(key + (<uint64_t>n) * GOLDEN)
    h = _mix64(h ^ (sub * SUB_MUL))
    return <double>(h >> 11) * INV53


def mix64(z):
    return _mix64(<uint64_t>z)


def make_key(seed, stream):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t st = <uint64_t>(stream & 0xFFFFFFFFFFFFFFFF)
    return _mix64(_mix64(s + GOLDEN) + st * STREAM_MUL)


def uniform(key, n, sub=0):
    return _uniform(<uint64_t>key, <int64_t>n, <uint64_t>sub)


cdef inline int _pick(double[::1] rates, double target, int last_pos) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t e
    for e in range(rates.shape[0]):
        acc += rates[e]
        if target < acc:
            return <int>e
    return last_pos


cdef double _total(double[::1] rates):
    cdef double total = 0.0
    cdef Py_ssize_t e
    for e in range(rates.shape[0]):
        total += rates[e]
    return total


cdef int _last_positive(double[::1] rates):
    cdef int last = -1
    cdef Py_ssize_t e
    for e in range(rates.shape[0]):
        if rates[e] > 0.0:
            last = <int>e
    return last


# ---------------------------------------------------------------- jackson

def jackson_run(nu, mu, P, x0, double horizon, key, long long max_events=100_000_000):
    cdef Py_ssize_t I = len(nu)
    cdef double[::1] rates = np.concatenate(
        [np.asarray(nu, dtype=np.float64), np.asarray(mu, dtype=np.float64)])
    cdef double[:, ::1] Pm = np.array(P, dtype=np.float64, order="C").reshape(I, I)
    cdef int64_t[::1] x = np.array(x0, dtype=np.int64)
    cdef uint64_t ukey = <uint64_t>key
    cdef double total = _total(rates)
    cdef int last_pos = _last_positive(rates)
    cdef long long n_arr = 0, n_dep = 0
    cdef Py_ssize_t cap, k = 0, j, i, dest
    cdef int e
    cdef double t = 0.0, target, acc

    if total <= 0.0:
        return (np.zeros(1), np.asarray(x, dtype=np.int64).reshape(1, I).copy(), 0, 0)

    cap = <Py_ssize_t>(total * horizon + 10.0 * (total * horizon) ** 0.5 + 64)
    if cap > max_events + 1:
        cap = max_events + 1
    times_np = np.empty(cap)
    states_np = np.empty((cap, I), dtype=np.int64)
    cdef double[::1] times = times_np
    cdef int64_t[:, ::1] states = states_np
    times[0] = 0.0
    for j in range(I):
        states[0, j] = x[j]

    while k < max_events:
        t += -log1p(-_uniform(ukey, k, 0)) / total
        if t > horizon:
            break
        e = _pick(rates, _uniform(ukey, k, 1) * total, last_pos)
        if e < I:
            x[e] += 1
            n_arr += 1
        else:
            i = e - I
            if x[i] > 0:
                x[i] -= 1
                target = _uniform(ukey, k, 2)
                acc = 0.0
                dest = -1
                for j in range(I):
                    acc += Pm[i, j]
                    if target < acc:
                        dest = j
                        break
                if dest >= 0:
                    x[dest] += 1
                else:
                    n_dep += 1
        if k + 1 >= cap:
            cap = 2 * cap
            times_np = np.resize(times_np, cap)
            states_np = np.resize(states_np, (cap, I))
            times = times_np
            states = states_np
        times[k + 1] = t
        for j in range(I):
            states[k + 1, j] = x[j]
        k += 1
    return times_np[:k + 1].copy(), states_np[:k + 1].copy(), n_arr, n_dep


# ------------------------------------------------------------------- fcfs

cdef Py_ssize_t _count_le(int64_t[:, ::1] fifo, Py_ssize_t c, Py_ssize_t lo,
                          Py_ssize_t hi, int64_t value) nogil:
    # number of entries <= value in the sorted slice fifo[c, lo:hi], plus lo
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) // 2
        if fifo[c, mid] <= value:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef void _fcfs_record(int64_t[::1] busy, int64_t[:, ::1] fifo,
                       int64_t[::1] heads, int64_t[::1] tails,
                       int64_t[::1] idle, Py_ssize_t n_idle, Py_ssize_t J,
                       Py_ssize_t I, int64_t[::1] ord_id, int64_t[::1] ord_s,
                       signed char[:, ::1] perm_rec, signed char[::1] k_rec,
                       int64_t[:, ::1] gap_rec, Py_ssize_t row) nogil:
    cdef Py_ssize_t nb = 0, s, a, b, j, c, pos
    cdef int64_t tid, ts, cnt, lo, hi
    for s in range(J):
        if busy[s] >= 0:
            # insertion sort by customer sequence number
            pos = nb
            while pos > 0 and ord_id[pos - 1] > busy[s]:
                ord_id[pos] = ord_id[pos - 1]
                ord_s[pos] = ord_s[pos - 1]
                pos -= 1
            ord_id[pos] = busy[s]
            ord_s[pos] = s
            nb += 1
    for j in range(nb):
        perm_rec[row, j] = <signed char>ord_s[j]
    for j in range(n_idle):
        perm_rec[row, nb + j] = <signed char>idle[j]
    k_rec[row] = <signed char>nb
    for j in range(J):
        gap_rec[row, j] = 0
    for j in range(nb):
        lo = ord_id[j]
        cnt = 0
        for c in range(I):
            a = _count_le(fifo, c, heads[c], tails[c], lo)
            if j + 1 < nb:
                b = _count_le(fifo, c, heads[c], tails[c], ord_id[j + 1])
            else:
                b = tails[c]
            cnt += b - a
        gap_rec[row, j] = cnt


def fcfs_run(lam, mu, compat, busy0, wait_ids0, wait_types0, idle0, next_seq,
             Py_ssize_t n_events, key):
    cdef Py_ssize_t I = len(lam), J = len(mu)
    cdef double[::1] rates = np.concatenate(
        [np.asarray(lam, dtype=np.float64), np.asarray(mu, dtype=np.float64)])
    cdef signed char[:, ::1] cm = np.array(compat, dtype=np.int8, order="C").reshape(J, I)
    cdef uint64_t ukey = <uint64_t>key
    cdef double total = _total(rates)
    cdef int last_pos = _last_positive(rates)
    cdef int64_t[::1] busy = np.array(busy0, dtype=np.int64)
    cdef int64_t[::1] idle = np.zeros(J, dtype=np.int64)
    cdef Py_ssize_t n_idle = len(idle0)
    cdef int64_t[::1] heads = np.zeros(I, dtype=np.int64)
    cdef int64_t[::1] tails = np.zeros(I, dtype=np.int64)
    cdef int64_t[::1] ord_id = np.zeros(J, dtype=np.int64)
    cdef int64_t[::1] ord_s = np.zeros(J, dtype=np.int64)
    cdef int64_t seq = next_seq, best_id, sid
    cdef Py_ssize_t cap, ev, pos, chosen, s, c, best_c, q, m
    cdef int e
    cdef double t = 0.0

    wid = np.asarray(wait_ids0, dtype=np.int64)
    wty = np.asarray(wait_types0, dtype=np.int64)
    for q in range(n_idle):
        idle[q] = idle0[q]
    cap = len(wid) + 1024
    fifo_np = np.zeros((I, cap), dtype=np.int64)
    cdef int64_t[:, ::1] fifo = fifo_np
    for q in range(len(wid)):
        c = wty[q]
        fifo[c, tails[c]] = wid[q]
        tails[c] += 1

    times_np = np.zeros(n_events + 1)
    perm_np = np.zeros((n_events + 1, J), dtype=np.int8)
    k_np = np.zeros(n_events + 1, dtype=np.int8)
    gap_np = np.zeros((n_events + 1, J), dtype=np.int64)
    ev_np = np.zeros(n_events, dtype=np.int32)
    cdef double[::1] times = times_np
    cdef signed char[:, ::1] perm_rec = perm_np
    cdef signed char[::1] k_rec = k_np
    cdef int64_t[:, ::1] gap_rec = gap_np
    cdef int[::1] events = ev_np

    _fcfs_record(busy, fifo, heads, tails, idle, n_idle, J, I, ord_id, ord_s,
                 perm_rec, k_rec, gap_rec, 0)
    for ev in range(n_events):
        t += -log1p(-_uniform(ukey, ev, 0)) / total
        e = _pick(rates, _uniform(ukey, ev, 1) * total, last_pos)
        events[ev] = e
        if e < I:
            c = e
            chosen = -1
            pos = n_idle - 1
            while pos >= 0:
                if cm[idle[pos], c]:
                    chosen = pos
                    break
                pos -= 1
            if chosen >= 0:
                s = idle[chosen]
                for m in range(chosen, n_idle - 1):
                    idle[m] = idle[m + 1]
                n_idle -= 1
                busy[s] = seq
            else:
                if tails[c] >= cap:
                    cap = 2 * cap
                    fifo_np = np.concatenate(
                        [fifo_np, np.zeros((I, cap - fifo_np.shape[1]), dtype=np.int64)], axis=1)
                    fifo = fifo_np
                fifo[c, tails[c]] = seq
                tails[c] += 1
            seq += 1
        else:
            s = e - I
            if busy[s] >= 0:
                best_c = -1
                best_id = -1
                for c in range(I):
                    if cm[s, c] and heads[c] < tails[c]:
                        sid = fifo[c, heads[c]]
                        if best_c < 0 or sid < best_id:
                            best_c = c
                            best_id = sid
                if best_c >= 0:
                    heads[best_c] += 1
                    busy[s] = best_id
                else:
                    busy[s] = -1
                    m = n_idle
                    while m > 0:
                        idle[m] = idle[m - 1]
                        m -= 1
                    idle[0] = s
                    n_idle += 1
        times[ev + 1] = t
        _fcfs_record(busy, fifo, heads, tails, idle, n_idle, J, I, ord_id, ord_s,
                     perm_rec, k_rec, gap_rec, ev + 1)

    ids = []
    tys = []
    for c in range(I):
        for q in range(heads[c], tails[c]):
            ids.append(fifo[c, q])
            tys.append(c)
    ids_np = np.array(ids, dtype=np.int64)
    tys_np = np.array(tys, dtype=np.int64)
    order = np.argsort(ids_np, kind="stable")
    final = (
        np.asarray(busy, dtype=np.int64).copy(),
        ids_np[order],
        tys_np[order],
        np.asarray(idle, dtype=np.int64)[:n_idle].copy(),
        int(seq),
    )
    return times_np, perm_np, k_np, gap_np, ev_np, final


# ------------------------------------------------------------------- csma

cdef void _priorities(uint64_t key, int64_t t, Py_ssize_t n, int64_t[::1] order,
                      int64_t[::1] prio) nogil:
    cdef Py_ssize_t i, j, r
    cdef int64_t tmp
    for i in range(n):
        order[i] = i
    i = n - 1
    while i > 0:
        j = <Py_ssize_t>(_uniform(key, t, i) * (i + 1))
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp
        i -= 1
    for r in range(n):
        prio[order[r]] = r


def csma_priorities(key, t, n):
    order = np.zeros(n, dtype=np.int64)
    prio = np.zeros(n, dtype=np.int64)
    _priorities(<uint64_t>key, <int64_t>t, n, order, prio)
    return [int(v) for v in prio]


def csma_run(Py_ssize_t n, Py_ssize_t k, double lam, q0, Py_ssize_t slots, key):
    cdef uint64_t ukey = <uint64_t>key
    cdef int64_t[::1] q = np.array(q0, dtype=np.int64)
    cdef bint infinite = lam < 0.0
    rec_np = np.zeros((slots + 1, n), dtype=np.int64)
    cdef int64_t[:, ::1] rec = rec_np
    txc_np = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] tx_counts = txc_np
    cdef int64_t[::1] tx = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] order = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] prio = np.zeros(n, dtype=np.int64)
    cdef long long departures = 0, arrivals = 0
    cdef Py_ssize_t t, v, w, lo, hi
    cdef int win
    for v in range(n):
        rec[0, v] = q[v]
    for t in range(slots):
        _priorities(ukey, t, n, order, prio)
        for v in range(n):
            tx[v] = 0
            if q[v] > 0 or (v == 0 and infinite):
                win = 1
                lo = v - k if v - k > 0 else 0
                hi = v + k if v + k < n - 1 else n - 1
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
        elif _uniform(ukey, t, 0) < lam:
            q[0] += 1
            arrivals += 1
        for v in range(n):
            rec[t + 1, v] = q[v]
    return rec_np, txc_np, departures, arrivals


# --------------------------------------------------------- counterexample

cdef inline int64_t _heavy_jump(double u, double alpha) nogil:
    cdef double v = pow(1.0 - u, -1.0 / alpha)
    if v >= <double>JUMP_CAP:
        return JUMP_CAP
    return <int64_t>floor(v)


def heavy_jump(double u, double alpha):
    return _heavy_jump(u, alpha)


def counterexample_run(double alpha, Py_ssize_t horizon, x1_0, x2_0, bint conditional,
                       checkpoints, key, bint record):
    cdef uint64_t ukey = <uint64_t>key
    cdef int64_t x1 = x1_0, x2 = x2_0, x2prev, tau = -1, last_zero
    cdef int64_t[::1] cps = np.array(checkpoints, dtype=np.int64)
    cp_np = np.zeros(len(checkpoints), dtype=np.int64)
    cdef int64_t[::1] cp_vals = cp_np
    cdef Py_ssize_t ci = 0, ncp = cps.shape[0], n, nret = 0, rcap = 1024
    cdef double u
    ret_np = np.zeros(rcap, dtype=np.int64)
    cdef int64_t[::1] rets = ret_np
    cdef int64_t[::1] p1
    cdef int64_t[::1] p2
    if record:
        p1_np = np.zeros(horizon + 1, dtype=np.int64)
        p2_np = np.zeros(horizon + 1, dtype=np.int64)
        p1 = p1_np
        p2 = p2_np
        p1[0] = x1
        p2[0] = x2
    while ci < ncp and cps[ci] <= 0:
        cp_vals[ci] = x1
        ci += 1
    last_zero = 0 if x2 == 0 else -1
    for n in range(1, horizon + 1):
        x2prev = x2
        u = _uniform(ukey, n, 0)
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
            x1 += _heavy_jump(_uniform(ukey, n, 1), alpha)
            if x1 > JUMP_CAP:
                x1 = JUMP_CAP
        if tau < 0 and x1 == 0:
            tau = n
        if x2 == 0:
            if last_zero >= 0:
                if nret >= rcap:
                    rcap = 2 * rcap
                    ret_np = np.resize(ret_np, rcap)
                    rets = ret_np
                rets[nret] = n - last_zero
                nret += 1
            last_zero = n
        while ci < ncp and cps[ci] == n:
            cp_vals[ci] = x1
            ci += 1
        if record:
            p1[n] = x1
            p2[n] = x2
    path = (p1_np, p2_np) if record else None
    return int(tau), cp_np, ret_np[:nret].copy(), path
