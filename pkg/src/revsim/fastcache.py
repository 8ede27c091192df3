"""Compiled twin of the cache-only replay for bulk experiments.

The Fig. 4 style experiments replay millions of accesses per policy, which is
too slow through the object-based engine in :mod:`revsim.cache`.  This module
re-implements exactly the same policies and the same job model with flat
arrays and doubly linked lists under numba.  Entries are unit sized and never
pinned here.  Tests hold both implementations to identical counters.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

POLICY_IDS = {"LRU": 0, "LIRS": 1, "ARC": 2, "BCL": 3, "DCL": 4}
NIL = -1


@njit(cache=True)
def _push(prev, nxt, head, tail, cnt, l, k):
    t = tail[l]
    prev[k] = t
    nxt[k] = NIL
    if t != NIL:
        nxt[t] = k
    else:
        head[l] = k
    tail[l] = k
    cnt[l] += 1


@njit(cache=True)
def _unlink(prev, nxt, head, tail, cnt, l, k):
    p = prev[k]
    n = nxt[k]
    if p != NIL:
        nxt[p] = n
    else:
        head[l] = n
    if n != NIL:
        prev[n] = p
    else:
        tail[l] = p
    cnt[l] -= 1


@njit(cache=True)
def _insert_before(prev, nxt, head, tail, cnt, l, k, at):
    if at == NIL:
        _push(prev, nxt, head, tail, cnt, l, k)
        return
    p = prev[at]
    prev[k] = p
    nxt[k] = at
    prev[at] = k
    if p != NIL:
        nxt[p] = k
    else:
        head[l] = k
    cnt[l] += 1


@njit(cache=True)
def _depreciate(k, amount, cost, stamp, prev, nxt, head, tail, cnt):
    new = cost[k] - amount
    if new < 0:
        new = 0
    if new == cost[k]:
        return
    _unlink(prev, nxt, head, tail, cnt, cost[k], k)
    cost[k] = new
    x = head[new]
    while x != NIL and stamp[x] < stamp[k]:
        x = nxt[x]
    _insert_before(prev, nxt, head, tail, cnt, new, k, x)


@njit(cache=True)
def _run(clients, keys, is_last, per, cap, pol, nkeys):
    n_acc = keys.shape[0]
    resident = np.zeros(nkeys, np.bool_)
    cost = np.zeros(nkeys, np.int64)
    used = 0
    hits = 0
    misses = 0
    evictions = 0

    # linked lists shared by every policy; list ids are policy specific
    nl = max(per + 2, 5)
    prev = np.full(nkeys, NIL, np.int64)
    nxt = np.full(nkeys, NIL, np.int64)
    head = np.full(nl, NIL, np.int64)
    tail = np.full(nl, NIL, np.int64)
    cnt = np.zeros(nl, np.int64)
    # second set of links (LIRS queue)
    qprev = np.full(nkeys, NIL, np.int64)
    qnxt = np.full(nkeys, NIL, np.int64)
    qhead = np.full(1, NIL, np.int64)
    qtail = np.full(1, NIL, np.int64)
    qcnt = np.zeros(1, np.int64)

    # BCL / DCL
    stamp = np.zeros(nkeys, np.int64)
    clock = 0
    pend_lru = np.full(nkeys, NIL, np.int64)
    pend_amt = np.zeros(nkeys, np.int64)
    pend_epoch = np.zeros(nkeys, np.int64)
    epoch = np.zeros(nkeys, np.int64)

    # LIRS: status 0 none, 1 LIR, 2 resident HIR, 3 non-resident HIR
    status = np.zeros(nkeys, np.int64)
    in_stack = np.zeros(nkeys, np.bool_)
    hir_size = max(1, int(math.ceil(cap / 100)))
    lir_size = max(1, cap - hir_size)
    nonres_cap = 2 * cap
    lir_count = 0
    nonres_count = 0

    # ARC: which list 0 none, 1 t1, 2 t2, 3 b1, 4 b2
    which = np.zeros(nkeys, np.int64)
    p_arc = 0.0
    drop_t1 = False
    incoming = NIL

    # jobs
    job_next = np.zeros(n_acc + 1, np.int64)
    job_owner = np.zeros(n_acc + 1, np.int64)
    job_r = np.zeros(n_acc + 1, np.int64)
    alive = np.zeros(n_acc + 1, np.int64)
    n_alive = 0
    n_jobs = 0
    steps = 0
    restarts = 0

    for i in range(n_acc):
        key = keys[i]
        client = clients[i]
        # ---- record_access
        if resident[key]:
            hits += 1
            if pol == 0:
                _unlink(prev, nxt, head, tail, cnt, 0, key)
                _push(prev, nxt, head, tail, cnt, 0, key)
            elif pol == 3 or pol == 4:
                if pol == 4:
                    epoch[key] += 1
                clock += 1
                stamp[key] = clock
                _unlink(prev, nxt, head, tail, cnt, cost[key], key)
                _push(prev, nxt, head, tail, cnt, cost[key], key)
            elif pol == 1:
                st = status[key]
                if st == 1:
                    was_bottom = head[0] == key
                    _unlink(prev, nxt, head, tail, cnt, 0, key)
                    _push(prev, nxt, head, tail, cnt, 0, key)
                    if was_bottom:
                        while head[0] != NIL:
                            b = head[0]
                            if status[b] == 1:
                                break
                            _unlink(prev, nxt, head, tail, cnt, 0, b)
                            in_stack[b] = False
                            if status[b] == 3:
                                status[b] = 0
                                nonres_count -= 1
                elif in_stack[key]:
                    _unlink(prev, nxt, head, tail, cnt, 0, key)
                    _push(prev, nxt, head, tail, cnt, 0, key)
                    status[key] = 1
                    lir_count += 1
                    _unlink(qprev, qnxt, qhead, qtail, qcnt, 0, key)
                    # demote bottom LIR
                    b = head[0]
                    _unlink(prev, nxt, head, tail, cnt, 0, b)
                    in_stack[b] = False
                    status[b] = 2
                    _push(qprev, qnxt, qhead, qtail, qcnt, 0, b)
                    lir_count -= 1
                    while head[0] != NIL:
                        b = head[0]
                        if status[b] == 1:
                            break
                        _unlink(prev, nxt, head, tail, cnt, 0, b)
                        in_stack[b] = False
                        if status[b] == 3:
                            status[b] = 0
                            nonres_count -= 1
                else:
                    _push(prev, nxt, head, tail, cnt, 0, key)
                    in_stack[key] = True
                    _unlink(qprev, qnxt, qhead, qtail, qcnt, 0, key)
                    _push(qprev, qnxt, qhead, qtail, qcnt, 0, key)
            else:
                if which[key] == 1:
                    _unlink(prev, nxt, head, tail, cnt, 1, key)
                    _push(prev, nxt, head, tail, cnt, 2, key)
                    which[key] = 2
                else:
                    _unlink(prev, nxt, head, tail, cnt, 2, key)
                    _push(prev, nxt, head, tail, cnt, 2, key)
        else:
            misses += 1
            if pol == 4:
                lru = pend_lru[key]
                if lru != NIL:
                    pend_lru[key] = NIL
                    if resident[lru] and epoch[lru] == pend_epoch[key]:
                        _depreciate(lru, pend_amt[key], cost, stamp, prev, nxt, head, tail, cnt)
            elif pol == 2:
                b1 = cnt[3]
                b2 = cnt[4]
                if which[key] == 3:
                    p_arc = min(float(cap), p_arc + max(b2 / b1, 1.0))
                elif which[key] == 4:
                    p_arc = max(0.0, p_arc - max(b1 / b2, 1.0))

            # ---- find or launch the producing job
            r = key // per
            best = NIL
            for a in range(n_alive):
                j = alive[a]
                if job_r[j] == r and job_next[j] <= key:
                    if best == NIL or job_next[j] > job_next[best]:
                        best = j
            if best != NIL:
                first = job_next[best]
            else:
                first = r * per
                restarts += 1
                best = n_jobs
                n_jobs += 1
                job_owner[best] = client
                job_r[best] = r
                alive[n_alive] = best
                n_alive += 1
            job_next[best] = key + 1
            steps += key - first + 1

            # ---- insert first .. key
            for k in range(first, key + 1):
                if resident[k]:
                    continue
                c_k = k - r * per + 1
                if pol == 2:
                    incoming = k
                    drop_t1 = False
                    if which[k] != 3 and which[k] != 4:
                        l1 = cnt[1] + cnt[3]
                        if l1 >= cap:
                            if cnt[1] < cap:
                                if cnt[3] > 0:
                                    g = head[3]
                                    _unlink(prev, nxt, head, tail, cnt, 3, g)
                                    which[g] = 0
                            else:
                                drop_t1 = True
                        else:
                            total = l1 + cnt[2] + cnt[4]
                            if total >= 2 * cap and cnt[4] > 0:
                                g = head[4]
                                _unlink(prev, nxt, head, tail, cnt, 4, g)
                                which[g] = 0
                while used + 1 > cap:
                    # ---- victim selection
                    if pol == 0:
                        v = head[0]
                    elif pol == 3 or pol == 4:
                        v = NIL
                        for l in range(nl):
                            h = head[l]
                            if h != NIL and (v == NIL or stamp[h] < stamp[v]):
                                v = h
                        lru = v
                        ch = NIL
                        for l in range(cost[lru]):
                            h = head[l]
                            if h != NIL and (ch == NIL or stamp[h] < stamp[ch]):
                                ch = h
                        if ch != NIL:
                            v = ch
                            if pol == 3:
                                _depreciate(lru, cost[v], cost, stamp, prev, nxt, head, tail, cnt)
                            else:
                                pend_lru[v] = lru
                                pend_amt[v] = cost[v]
                                pend_epoch[v] = epoch[lru]
                    elif pol == 1:
                        v = qhead[0]
                        if v == NIL:
                            v = head[0]
                            while status[v] != 1:
                                v = nxt[v]
                    else:
                        ghost = 0
                        if drop_t1 and cnt[1] > 0:
                            drop_t1 = False
                            v = head[1]
                        else:
                            drop_t1 = False
                            t1 = cnt[1]
                            if t1 > 0 and (t1 > p_arc or (which[incoming] == 4 and t1 == p_arc)):
                                v = head[1]
                                ghost = 3
                            else:
                                v = head[2]
                                ghost = 4
                                if v == NIL:
                                    v = head[1]
                                    ghost = 3
                    # ---- drop v
                    resident[v] = False
                    used -= 1
                    evictions += 1
                    if pol == 0:
                        _unlink(prev, nxt, head, tail, cnt, 0, v)
                    elif pol == 3 or pol == 4:
                        if pol == 4:
                            epoch[v] += 1
                        _unlink(prev, nxt, head, tail, cnt, cost[v], v)
                    elif pol == 1:
                        st = status[v]
                        if st == 2:
                            _unlink(qprev, qnxt, qhead, qtail, qcnt, 0, v)
                            if in_stack[v]:
                                status[v] = 3
                                nonres_count += 1
                                if nonres_count > nonres_cap:
                                    x = head[0]
                                    while x != NIL:
                                        if status[x] == 3:
                                            _unlink(prev, nxt, head, tail, cnt, 0, x)
                                            in_stack[x] = False
                                            status[x] = 0
                                            nonres_count -= 1
                                            break
                                        x = nxt[x]
                            else:
                                status[v] = 0
                        else:
                            was_bottom = head[0] == v
                            _unlink(prev, nxt, head, tail, cnt, 0, v)
                            in_stack[v] = False
                            status[v] = 0
                            lir_count -= 1
                            if was_bottom:
                                while head[0] != NIL:
                                    b = head[0]
                                    if status[b] == 1:
                                        break
                                    _unlink(prev, nxt, head, tail, cnt, 0, b)
                                    in_stack[b] = False
                                    if status[b] == 3:
                                        status[b] = 0
                                        nonres_count -= 1
                    else:
                        _unlink(prev, nxt, head, tail, cnt, which[v], v)
                        which[v] = 0
                        if ghost != 0:
                            _push(prev, nxt, head, tail, cnt, ghost, v)
                            which[v] = ghost
                # ---- add k
                resident[k] = True
                used += 1
                cost[k] = c_k
                if pol == 0:
                    _push(prev, nxt, head, tail, cnt, 0, k)
                elif pol == 3 or pol == 4:
                    if pol == 4:
                        pend_lru[k] = NIL
                    clock += 1
                    stamp[k] = clock
                    _push(prev, nxt, head, tail, cnt, c_k, k)
                elif pol == 1:
                    st = status[k]
                    if lir_count < lir_size:
                        if st == 3:
                            nonres_count -= 1
                        status[k] = 1
                        lir_count += 1
                        if in_stack[k]:
                            _unlink(prev, nxt, head, tail, cnt, 0, k)
                        _push(prev, nxt, head, tail, cnt, 0, k)
                        in_stack[k] = True
                    elif st == 3:
                        nonres_count -= 1
                        _unlink(prev, nxt, head, tail, cnt, 0, k)
                        _push(prev, nxt, head, tail, cnt, 0, k)
                        status[k] = 1
                        lir_count += 1
                        b = head[0]
                        _unlink(prev, nxt, head, tail, cnt, 0, b)
                        in_stack[b] = False
                        status[b] = 2
                        _push(qprev, qnxt, qhead, qtail, qcnt, 0, b)
                        lir_count -= 1
                        while head[0] != NIL:
                            b = head[0]
                            if status[b] == 1:
                                break
                            _unlink(prev, nxt, head, tail, cnt, 0, b)
                            in_stack[b] = False
                            if status[b] == 3:
                                status[b] = 0
                                nonres_count -= 1
                    else:
                        status[k] = 2
                        _push(prev, nxt, head, tail, cnt, 0, k)
                        in_stack[k] = True
                        _push(qprev, qnxt, qhead, qtail, qcnt, 0, k)
                else:
                    incoming = NIL
                    drop_t1 = False
                    w = which[k]
                    if w == 3 or w == 4:
                        _unlink(prev, nxt, head, tail, cnt, w, k)
                        _push(prev, nxt, head, tail, cnt, 2, k)
                        which[k] = 2
                    else:
                        _push(prev, nxt, head, tail, cnt, 1, k)
                        which[k] = 1

        # ---- retire the jobs of a finished client
        if is_last[i]:
            m = 0
            for a in range(n_alive):
                j = alive[a]
                if job_owner[j] != client:
                    alive[m] = j
                    m += 1
            n_alive = m

    return steps, restarts, hits, misses, evictions


def replay_cache_fast(pairs, steps_per_restart: int, capacity: int, policy: str = "DCL"):
    """Same contract as :func:`revsim.replay.replay_cache`; returns the five counters."""
    clients = np.fromiter((c for c, _ in pairs), np.int64, len(pairs))
    keys = np.fromiter((k for _, k in pairs), np.int64, len(pairs))
    is_last = np.zeros(len(pairs), np.bool_)
    seen = set()
    for i in range(len(pairs) - 1, -1, -1):
        c = pairs[i][0]
        if c not in seen:
            seen.add(c)
            is_last[i] = True
    nkeys = int(keys.max()) + steps_per_restart + 1 if len(keys) else 1
    return _run(clients, keys, is_last, steps_per_restart, capacity,
                POLICY_IDS[policy.upper()], nkeys)
