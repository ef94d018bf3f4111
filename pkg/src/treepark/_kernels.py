"""Compiled inner loops.

Everything here works on flat depth-first arrays and takes a
``numpy.random.Generator`` so that a single seeded stream drives each call.
Random draws go through Walker alias tables: one uniform per draw.
"""
from __future__ import annotations

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)


def alias_table(probs) -> tuple[np.ndarray, np.ndarray]:
    """Vose's alias table for a finite probability vector."""
    p = np.asarray(probs, dtype=float)
    n = p.size
    q = p * (n / p.sum())
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if q[i] < 1.0]
    large = [i for i in range(n) if q[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = q[s]
        alias[s] = l
        q[l] = q[l] + q[s] - 1.0
        (small if q[l] < 1.0 else large).append(l)
    return prob, alias


@nb.njit(inline="always", **_JIT)
def alias_draw(rng, prob, alias):
    n = prob.shape[0]
    u = rng.random() * n
    i = int(u)
    if i >= n:
        i = n - 1
    if u - i < prob[i]:
        return i
    return alias[i]


@nb.njit(**_JIT)
def _grow(a):
    b = np.empty(2 * a.shape[0], a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(**_JIT)
def _explore(rng, prob, alias, jdeg, jcar, cap, rem, acc, top, size):
    """Depth-first generation from a saved stack state.

    Status 0: finished; 1: censored at ``cap`` (stack collapsed into a lower
    bound); 2: stack buffer full, caller must grow it and resume.  Buffers are
    never reassigned here, which keeps this loop fast.
    """
    limit = rem.shape[0] - 1
    while True:
        if rem[top] > 0:
            if size >= cap:
                while top > 0:
                    x = acc[top]
                    top -= 1
                    if x > 1:
                        acc[top] += x - 1
                return acc[0], 0, size, 1
            if top == limit:
                return 0, top, size, 2
            rem[top] -= 1
            size += 1
            j = alias_draw(rng, prob, alias)
            top += 1
            rem[top] = jdeg[j]
            acc[top] = jcar[j]
        else:
            x = acc[top]
            if top == 0:
                return x, 0, size, 0
            top -= 1
            if x > 1:
                acc[top] += x - 1


@nb.njit(**_JIT)
def gw_visits(rng, prob, alias, jdeg, jcar, cap, rem, acc):
    """Cars visiting the root of one unconditioned GW tree, generated depth-first.

    Only the ancestral stack is stored.  If the tree outgrows ``cap`` the
    unexplored part is dropped and the stack collapsed, which yields a lower
    bound on every visit count (parking is monotone in adding subtrees).

    Returns ``(x, size, censored, rem, acc)``; the work buffers may have grown.
    """
    j = alias_draw(rng, prob, alias)
    rem[0] = jdeg[j]
    acc[0] = jcar[j]
    top = 0
    size = 1
    while True:
        x, top, size, status = _explore(rng, prob, alias, jdeg, jcar, cap, rem, acc, top, size)
        if status != 2:
            return x, size, status == 1, rem, acc
        rem = _grow(rem)
        acc = _grow(acc)


@nb.njit(**_JIT)
def root_visits_batch(rng, prob, alias, jdeg, jcar, cap, reps):
    xs = np.empty(reps, np.int64)
    sizes = np.empty(reps, np.int64)
    cens = np.zeros(reps, np.bool_)
    rem = np.empty(256, np.int64)
    acc = np.empty(256, np.int64)
    for r in range(reps):
        x, s, c, rem, acc = gw_visits(rng, prob, alias, jdeg, jcar, cap, rem, acc)
        xs[r] = x
        sizes[r] = s
        cens[r] = c
    return xs, sizes, cens


@nb.njit(**_JIT)
def _walk(rng, prob, alias, cap, buf, n, s):
    limit = buf.shape[0]
    while True:
        if n == cap:
            return n, s, 1
        if n == limit:
            return n, s, 2
        d = alias_draw(rng, prob, alias)
        buf[n] = d
        n += 1
        s += d - 1
        if s == -1:
            return n, s, 0


@nb.njit(**_JIT)
def gw_degrees(rng, prob, alias, cap):
    """Children counts of one GW tree in depth-first order.

    Runs the Lukasiewicz walk until it first hits -1.  Returns
    ``(degrees, ok)``; ``ok`` is False if ``cap`` vertices were drawn first.
    """
    buf = np.empty(64, np.int64)
    n = 0
    s = 0
    while True:
        n, s, status = _walk(rng, prob, alias, cap, buf, n, s)
        if status != 2:
            return buf[:n].copy(), status == 0
        buf = _grow(buf)


@nb.njit(**_JIT)
def parents_from_degrees(deg):
    n = deg.shape[0]
    parent = np.empty(n, np.int64)
    stack_v = np.empty(16, np.int64)
    stack_r = np.empty(16, np.int64)
    top = -1
    for i in range(n):
        if top < 0:
            parent[i] = -1
        else:
            parent[i] = stack_v[top]
            stack_r[top] -= 1
            if stack_r[top] == 0:
                top -= 1
        if deg[i] > 0:
            top += 1
            if top == stack_v.shape[0]:
                stack_v = _grow(stack_v)
                stack_r = _grow(stack_r)
            stack_v[top] = i
            stack_r[top] = deg[i]
    return parent


@nb.njit(**_JIT)
def park_visits(parent, cars):
    n = parent.shape[0]
    acc = np.zeros(n, np.int64)
    visits = np.empty(n, np.int64)
    for i in range(n - 1, -1, -1):
        x = cars[i] + acc[i]
        visits[i] = x
        p = parent[i]
        if p >= 0 and x > 1:
            acc[p] += x - 1
    return visits


@nb.njit(**_JIT)
def component_labels(parent, parked):
    """Label parked vertices by their topmost parked ancestor's component."""
    n = parent.shape[0]
    label = np.full(n, -1, np.int64)
    count = 0
    for i in range(n):
        if parked[i]:
            p = parent[i]
            if p >= 0 and parked[p]:
                label[i] = label[p]
            else:
                label[i] = count
                count += 1
    return label, count


@nb.njit(**_JIT)
def depths(parent):
    n = parent.shape[0]
    d = np.zeros(n, np.int64)
    for i in range(1, n):
        d[i] = d[parent[i]] + 1
    return d


@nb.njit(**_JIT)
def subtree_sizes(parent):
    n = parent.shape[0]
    size = np.ones(n, np.int64)
    for i in range(n - 1, 0, -1):
        size[parent[i]] += size[i]
    return size


@nb.njit(**_JIT)
def spine_event_batch(rng, gw_tables, spine_tables, height, margin, cap, reps):
    """Is every spine vertex ``S_margin .. S_height`` of ``T(height)`` parked?

    The spine is processed from ``S_height`` (which carries an ordinary GW
    tree) down to ``S_margin``; vertices below ``S_margin`` cannot influence
    the event.  Grafted trees are streamed, and a censored grafted tree turns
    the upper bound on the affected visit counts into infinity.

    Status per replicate: 1 all parked, 0 some spine vertex free, -1 undecided.
    """
    prob, alias, jdeg, jcar = gw_tables
    sprob, salias, sdeg, scar = spine_tables
    status = np.empty(reps, np.int8)
    sizes = np.empty(reps, np.int64)
    rem = np.empty(256, np.int64)
    acc = np.empty(256, np.int64)
    for r in range(reps):
        low, s, c, rem, acc = gw_visits(rng, prob, alias, jdeg, jcar, cap, rem, acc)
        up_inf = c
        total = s
        all_low = low >= 1
        failed = (not all_low) and (not up_inf)
        i = height - 1
        while i >= margin and not failed:
            j = alias_draw(rng, sprob, salias)
            y = sdeg[j]
            nlow = scar[j] + (low - 1 if low > 1 else 0)
            for g in range(y - 1):
                xg, sg, cg, rem, acc = gw_visits(rng, prob, alias, jdeg, jcar, cap, rem, acc)
                total += sg
                if xg > 1:
                    nlow += xg - 1
                if cg:
                    up_inf = True
            total += 1
            low = nlow
            if low < 1:
                all_low = False
                if not up_inf:
                    failed = True
            i -= 1
        sizes[r] = total
        if failed:
            status[r] = 0
        elif all_low:
            status[r] = 1
        else:
            status[r] = -1
    return status, sizes
