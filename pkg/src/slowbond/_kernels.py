"""Compiled inner loops for the event-driven simulation and log replay."""

import numpy as np
from numba import njit

DONE = 0
NEED_UNIFORMS = 1
NEED_EVENT_SPACE = 2


@njit(cache=True, nogil=True)
def tree_size(n):
    p = 1
    while p < n:
        p *= 2
    return p


@njit(cache=True, nogil=True)
def tree_set(tree, p, i, rate):
    j = p + i
    tree[j] = rate
    j //= 2
    while j >= 1:
        tree[j] = tree[2 * j] + tree[2 * j + 1]
        j //= 2


@njit(cache=True, nogil=True)
def tree_build(tree, p, eta, bond_rates):
    n = eta.size
    tree[:] = 0.0
    for i in range(n):
        if eta[i] != eta[(i + 1) % n]:
            tree[p + i] = bond_rates[i]
    for j in range(p - 1, 0, -1):
        tree[j] = tree[2 * j] + tree[2 * j + 1]


@njit(cache=True, nogil=True)
def tree_select(tree, p, u):
    j = 1
    while j < p:
        left = tree[2 * j]
        if u < left:
            j = 2 * j
        else:
            u -= left
            j = 2 * j + 1
    if tree[j] > 0.0:
        return j - p
    # u rounded onto an empty leaf: take the last leaf with positive rate
    j = 1
    while j < p:
        if tree[2 * j + 1] > 0.0:
            j = 2 * j + 1
        else:
            j = 2 * j
    return j - p


@njit(cache=True, nogil=True)
def advance(eta, bond_rates, tree, p, clock, counters, horizon, record_times,
            snapshots, uniforms, ev_times, ev_bonds, log_events):
    """Run the chain until the horizon or until a buffer runs out.

    ``clock[0]`` is the current time; ``counters`` holds
    ``(next record index, next uniform index, logged events)``.  Returns one
    of DONE, NEED_UNIFORMS, NEED_EVENT_SPACE; the caller refills and calls
    again, and the trajectory is identical to an uninterrupted run.
    """
    n = eta.size
    n_rec = record_times.size
    rec = counters[0]
    upos = counters[1]
    nev = counters[2]
    t = clock[0]
    status = DONE
    while True:
        total = tree[1]
        if total <= 0.0:
            while rec < n_rec:
                snapshots[rec, :] = eta
                rec += 1
            status = DONE
            break
        if upos + 2 > uniforms.size:
            status = NEED_UNIFORMS
            break
        t_next = t - np.log(1.0 - uniforms[upos]) / total
        while rec < n_rec and record_times[rec] < t_next:
            snapshots[rec, :] = eta
            rec += 1
        if t_next > horizon:
            status = DONE
            break
        if log_events and nev >= ev_times.size:
            status = NEED_EVENT_SPACE
            break
        i = tree_select(tree, p, uniforms[upos + 1] * total)
        upos += 2
        t = t_next
        j = (i + 1) % n
        tmp = eta[i]
        eta[i] = eta[j]
        eta[j] = tmp
        left = (i - 1) % n
        if eta[left] != eta[i]:
            tree_set(tree, p, left, bond_rates[left])
        else:
            tree_set(tree, p, left, 0.0)
        if eta[j] != eta[(j + 1) % n]:
            tree_set(tree, p, j, bond_rates[j])
        else:
            tree_set(tree, p, j, 0.0)
        if log_events:
            ev_times[nev] = t
            ev_bonds[nev] = i
            nev += 1
    counters[0] = rec
    counters[1] = upos
    counters[2] = nev
    clock[0] = t
    return status


@njit(cache=True, nogil=True)
def replay_linear(eta0, ev_times, ev_bonds, weights, query_times, integrals, values):
    """Exact time integrals of linear functionals along a logged path.

    For each row ``w`` of ``weights`` and each query time ``s`` this fills
    ``integrals[k, q] = int_0^s sum_y w[y] eta_r(y) dr`` and the functional's
    value at ``s`` (right-continuous).  Query times must be sorted.
    """
    n = eta0.size
    K = weights.shape[0]
    eta = eta0.copy()
    cur = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for y in range(n):
            acc += weights[k, y] * eta[y]
        cur[k] = acc
    acc_int = np.zeros(K)
    t_prev = 0.0
    q = 0
    nq = query_times.size
    for e in range(ev_times.size):
        te = ev_times[e]
        while q < nq and query_times[q] < te:
            for k in range(K):
                integrals[k, q] = acc_int[k] + cur[k] * (query_times[q] - t_prev)
                values[k, q] = cur[k]
            q += 1
        if q >= nq:
            return
        for k in range(K):
            acc_int[k] += cur[k] * (te - t_prev)
        t_prev = te
        i = ev_bonds[e]
        j = (i + 1) % n
        d = eta[i] - eta[j]
        for k in range(K):
            cur[k] += (weights[k, j] - weights[k, i]) * d
        tmp = eta[i]
        eta[i] = eta[j]
        eta[j] = tmp
    while q < nq:
        for k in range(K):
            integrals[k, q] = acc_int[k] + cur[k] * (query_times[q] - t_prev)
            values[k, q] = cur[k]
        q += 1


@njit(cache=True, nogil=True)
def replay_active_sum(eta0, ev_times, ev_bonds, bond_weights, query_times, integrals):
    """Time integral of ``sum over active bonds of bond_weights[i]``.

    A bond is active when its two occupations differ.  Returns the largest
    value the integrand took on ``[0, last query]``.
    """
    n = eta0.size
    eta = eta0.copy()
    cur = 0.0
    for i in range(n):
        if eta[i] != eta[(i + 1) % n]:
            cur += bond_weights[i]
    peak = cur
    acc = 0.0
    t_prev = 0.0
    q = 0
    nq = query_times.size
    for e in range(ev_times.size):
        te = ev_times[e]
        while q < nq and query_times[q] < te:
            integrals[q] = acc + cur * (query_times[q] - t_prev)
            q += 1
        if q >= nq:
            return peak
        acc += cur * (te - t_prev)
        t_prev = te
        i = ev_bonds[e]
        j = (i + 1) % n
        left = (i - 1) % n
        right = j
        nxt = (j + 1) % n
        before = 0.0
        if eta[left] != eta[i]:
            before += bond_weights[left]
        if eta[right] != eta[nxt]:
            before += bond_weights[right]
        tmp = eta[i]
        eta[i] = eta[j]
        eta[j] = tmp
        after = 0.0
        if eta[left] != eta[i]:
            after += bond_weights[left]
        if eta[right] != eta[nxt]:
            after += bond_weights[right]
        cur += after - before
        if cur > peak:
            peak = cur
    while q < nq:
        integrals[q] = acc + cur * (query_times[q] - t_prev)
        q += 1
    return peak
