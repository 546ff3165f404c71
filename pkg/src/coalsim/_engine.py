"""Event-driven kernel shared by the spatial simulators.

Blocks live in flat arrays indexed by slot. Sites are kept in a hash map
from packed coordinates to a record holding the head of an intrusive list
of the active blocks there. Pair weights are integers: each active block
carries ``k - 1`` where ``k`` is the number of active blocks at its site, so
their sum is twice the number of co-located pairs and a Fenwick tree over
slots selects a uniformly random pair in O(log n).

Passive blocks walk but take no part in coalescence.
"""

import numpy as np
from numba import njit, types
from numba.typed import Dict

NO_NORM = np.iinfo(np.int64).max // 4
_OFF = np.int64(1) << 31


@njit(cache=True, inline="always")
def _key(x, y):
    return ((x + _OFF) << 32) | (y + _OFF)


@njit(cache=True, inline="always")
def _wrap(v, lo, length):
    if length <= 0:
        return v
    return lo + (v - lo) % length


@njit(cache=True)
def _fw_add(tree, i, delta):
    i += 1
    n = len(tree)
    while i < n:
        tree[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fw_find(tree, target):
    # smallest slot whose prefix sum exceeds target
    pos = 0
    n = len(tree)
    step = 1
    while step * 2 < n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt < n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    return pos


@njit(cache=True, inline="always")
def _smaller(lab, birth, a, b):
    return lab[a] < lab[b] or (lab[a] == lab[b] and birth[a] < birth[b])


@njit(cache=True)
def evolve_kernel(x, y, lab, birth, size, mnorm, eb, mask, active, alive,
                  clock, until, gamma, instant, migrate, rebirth,
                  region, kdx, kdy, kcum, simple, seed, max_events,
                  log_t, log_s, log_l, debug):
    """Advance the block arrays in place from ``clock`` to ``until``.

    region = (x_lo, x_len, y_lo, y_len); a non-positive length disables
    wrapping in that direction. Returns (clock, events, pair_weight,
    log_count, violations).
    """
    np.random.seed(seed)
    cap = len(x)
    x_lo, x_len, y_lo, y_len = region[0], region[1], region[2], region[3]

    nxt = np.full(cap, -1, dtype=np.int64)
    prv = np.full(cap, -1, dtype=np.int64)
    srec = np.full(cap, -1, dtype=np.int64)
    rec_head = np.full(cap + 1, -1, dtype=np.int64)
    rec_cnt = np.zeros(cap + 1, dtype=np.int64)
    rec_key = np.zeros(cap + 1, dtype=np.int64)
    free_recs = np.arange(cap, -1, -1).astype(np.int64)
    n_free = cap + 1
    sites = Dict.empty(key_type=types.int64, value_type=types.int64)
    tree = np.zeros(cap + 1, dtype=np.int64)
    w = np.zeros(cap, dtype=np.int64)
    alist = np.empty(cap, dtype=np.int64)
    apos = np.full(cap, -1, dtype=np.int64)
    n_alive = 0
    pw = 0  # sum of pair weights = 2 * number of active co-located pairs

    for b in range(cap):
        if not alive[b]:
            continue
        alist[n_alive] = b
        apos[b] = n_alive
        n_alive += 1
        if not active[b]:
            continue
        k = _key(x[b], y[b])
        if k in sites:
            r = sites[k]
        else:
            n_free -= 1
            r = free_recs[n_free]
            sites[k] = r
            rec_key[r] = k
            rec_head[r] = -1
            rec_cnt[r] = 0
        nxt[b] = rec_head[r]
        prv[b] = -1
        if rec_head[r] >= 0:
            prv[rec_head[r]] = b
        rec_head[r] = b
        rec_cnt[r] += 1
        srec[b] = r
    for b in range(cap):
        if alive[b] and active[b]:
            w[b] = rec_cnt[srec[b]] - 1
            if w[b] != 0:
                _fw_add(tree, b, w[b])
                pw += w[b]

    n_log = 0
    events = 0
    violations = 0
    n_start = n_alive
    coal_rate = 0.0 if instant else gamma

    while events < max_events and n_alive > 0:
        mig_rate = float(n_alive) if migrate else 0.0
        total = mig_rate + coal_rate * 0.5 * pw
        if total <= 0.0:
            clock = until
            break
        dt = np.random.exponential(1.0) / total
        if clock + dt > until:
            clock = until
            break
        clock += dt
        events += 1
        u = np.random.random() * total
        if u < mig_rate:
            b = alist[min(int(u), n_alive - 1)]
            if simple:
                c = int(np.random.random() * 4.0)
                sx = 1 if c == 0 else (-1 if c == 1 else 0)
                sy = 1 if c == 2 else (-1 if c == 3 else 0)
            else:
                j = np.searchsorted(kcum, np.random.random(), side="right")
                if j >= len(kcum):
                    j = len(kcum) - 1
                sx = kdx[j]
                sy = kdy[j]
            nx = _wrap(x[b] + sx, x_lo, x_len)
            ny = _wrap(y[b] + sy, y_lo, y_len)
            if not active[b]:
                x[b] = nx
                y[b] = ny
                continue
            if nx == x[b] and ny == y[b]:
                continue
            # unlink from the old site
            r = srec[b]
            if prv[b] >= 0:
                nxt[prv[b]] = nxt[b]
            else:
                rec_head[r] = nxt[b]
            if nxt[b] >= 0:
                prv[nxt[b]] = prv[b]
            rec_cnt[r] -= 1
            o = rec_head[r]
            while o >= 0:
                w[o] -= 1
                _fw_add(tree, o, -1)
                pw -= 1
                o = nxt[o]
            if w[b] != 0:
                _fw_add(tree, b, -w[b])
                pw -= w[b]
                w[b] = 0
            if rec_cnt[r] == 0:
                sites.pop(rec_key[r])
                free_recs[n_free] = r
                n_free += 1
            x[b] = nx
            y[b] = ny
            k = _key(nx, ny)
            if k in sites:
                r = sites[k]
            else:
                n_free -= 1
                r = free_recs[n_free]
                sites[k] = r
                rec_key[r] = k
                rec_head[r] = -1
                rec_cnt[r] = 0
            if instant and rec_cnt[r] > 0:
                # merge on arrival with the single resident block
                o = rec_head[r]
                if _smaller(lab, birth, b, o):
                    s_, l_ = b, o
                else:
                    s_, l_ = o, b
                size[s_] += size[l_]
                mnorm[s_] = min(mnorm[s_], mnorm[l_])
                eb[s_] = min(eb[s_], eb[l_])
                mask[s_] |= mask[l_]
                if n_log < len(log_t):
                    log_t[n_log] = clock
                    log_s[n_log] = s_
                    log_l[n_log] = l_
                n_log += 1
                if s_ == b:
                    # replace the resident in the site list
                    nxt[b] = nxt[o]
                    prv[b] = prv[o]
                    if prv[o] >= 0:
                        nxt[prv[o]] = b
                    else:
                        rec_head[r] = b
                    if nxt[o] >= 0:
                        prv[nxt[o]] = b
                    srec[b] = r
                    srec[o] = -1
                else:
                    srec[b] = -1
                alive[l_] = False
                p = apos[l_]
                last = alist[n_alive - 1]
                alist[p] = last
                apos[last] = p
                apos[l_] = -1
                n_alive -= 1
                continue
            nxt[b] = rec_head[r]
            prv[b] = -1
            if rec_head[r] >= 0:
                prv[rec_head[r]] = b
            rec_head[r] = b
            o = nxt[b]
            while o >= 0:
                w[o] += 1
                _fw_add(tree, o, 1)
                pw += 1
                o = nxt[o]
            w[b] = rec_cnt[r]
            if w[b] != 0:
                _fw_add(tree, b, w[b])
                pw += w[b]
            rec_cnt[r] += 1
            srec[b] = r
            if debug and instant and rec_cnt[r] > 1:
                violations += 1
        else:
            target = int((u - mig_rate) / (0.5 * coal_rate))
            if target >= pw:
                target = pw - 1
            b = _fw_find(tree, target)
            r = srec[b]
            pick = int(np.random.random() * (rec_cnt[r] - 1))
            if pick >= rec_cnt[r] - 1:
                pick = rec_cnt[r] - 2
            o = rec_head[r]
            while True:
                if o != b:
                    if pick == 0:
                        break
                    pick -= 1
                o = nxt[o]
            if _smaller(lab, birth, b, o):
                s_, l_ = b, o
            else:
                s_, l_ = o, b
            if debug:
                if size[s_] + size[l_] <= 0:
                    violations += 1
            size[s_] += size[l_]
            mnorm[s_] = min(mnorm[s_], mnorm[l_])
            eb[s_] = min(eb[s_], eb[l_])
            mask[s_] |= mask[l_]
            if n_log < len(log_t):
                log_t[n_log] = clock
                log_s[n_log] = s_
                log_l[n_log] = l_
            n_log += 1
            if rebirth:
                # the losing label's index returns as a singleton at this site
                birth[l_] = clock
                size[l_] = 1
                mnorm[l_] = NO_NORM
                eb[l_] = clock
                mask[l_] = 0
                if debug and n_alive != n_start:
                    violations += 1
                continue
            if prv[l_] >= 0:
                nxt[prv[l_]] = nxt[l_]
            else:
                rec_head[r] = nxt[l_]
            if nxt[l_] >= 0:
                prv[nxt[l_]] = prv[l_]
            rec_cnt[r] -= 1
            oo = rec_head[r]
            while oo >= 0:
                w[oo] -= 1
                _fw_add(tree, oo, -1)
                pw -= 1
                oo = nxt[oo]
            if w[l_] != 0:
                _fw_add(tree, l_, -w[l_])
                pw -= w[l_]
                w[l_] = 0
            srec[l_] = -1
            alive[l_] = False
            p = apos[l_]
            last = alist[n_alive - 1]
            alist[p] = last
            apos[last] = p
            apos[l_] = -1
            n_alive -= 1

    return clock, events, pw, n_log, violations


@njit(cache=True)
def pair_weight(x, y, alive, active):
    """Full recomputation of the pair weight from scratch."""
    d = Dict.empty(key_type=types.int64, value_type=types.int64)
    for b in range(len(x)):
        if alive[b] and active[b]:
            k = _key(x[b], y[b])
            d[k] = d.get(k, 0) + 1
    total = 0
    for k in d:
        c = d[k]
        total += c * (c - 1)
    return total
