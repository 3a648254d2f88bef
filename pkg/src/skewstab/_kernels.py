"""Compiled kernels for the bounded-Lipschitz norm of atomic measures on [0, 1].

For a signed atomic measure nu on [0, 1] the norm

    ||nu||_W = sup { int h dnu : Lip(h) <= 1, |h|_inf <= 1 }

is a chain linear program over the sorted support.  Its dual is a min-cost
flow along the support with a unit disposal cost at every atom.  Writing
D_k for the cumulative disposed mass up to atom k and F_k for the CDF of nu,
the dual becomes

    min_D  sum_k |D_k - D_{k-1}| + sum_k d_k |F_k - D_k|,   D_0 = 0, D_m = nu([0,1])

with d_k the gap between consecutive atoms.  Some optimal D only takes values
in {0, nu([0,1]), F_1, ..., F_{m-1}}, so a dynamic program over that finite
candidate set is exact.  Each step is an L1 distance transform done in two
linear passes, for O(m^2) work per measure.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def bl_norm(ys, ws):
    k = ys.shape[0]
    if k == 0:
        return 0.0
    order = np.argsort(ys, kind="mergesort")
    yy = np.empty(k)
    cp = np.zeros(k)
    cn = np.zeros(k)
    m = 0
    for idx in order:
        if m == 0 or ys[idx] != yy[m - 1]:
            yy[m] = ys[idx]
            m += 1
        # signs are summed apart so that equal parts cancel exactly
        if ws[idx] > 0.0:
            cp[m - 1] += ws[idx]
        else:
            cn[m - 1] -= ws[idx]
    cc = cp[:m] - cn[:m]

    pos = 0.0
    neg = 0.0
    for j in range(m):
        if cc[j] > 0.0:
            pos += cc[j]
        else:
            neg -= cc[j]
    # one-signed measures: h = +-1 is optimal
    if pos == 0.0 or neg == 0.0:
        return pos + neg
    total = pos - neg

    prefix = np.empty(m - 1)
    acc = 0.0
    for j in range(m - 1):
        acc += cc[j]
        prefix[j] = acc

    raw = np.empty(m + 1)
    raw[0] = 0.0
    raw[1] = total
    for j in range(m - 1):
        raw[j + 2] = prefix[j]
    raw.sort()
    cand = np.empty(m + 1)
    s_count = 0
    for j in range(m + 1):
        if s_count == 0 or raw[j] != cand[s_count - 1]:
            cand[s_count] = raw[j]
            s_count += 1

    cost = np.empty(s_count)
    d = yy[1] - yy[0]
    for s in range(s_count):
        cost[s] = abs(cand[s]) + d * abs(prefix[0] - cand[s])
    for e in range(1, m - 1):
        for s in range(1, s_count):
            alt = cost[s - 1] + (cand[s] - cand[s - 1])
            if alt < cost[s]:
                cost[s] = alt
        for s in range(s_count - 2, -1, -1):
            alt = cost[s + 1] + (cand[s + 1] - cand[s])
            if alt < cost[s]:
                cost[s] = alt
        d = yy[e + 1] - yy[e]
        for s in range(s_count):
            cost[s] += d * abs(prefix[e] - cand[s])

    best = np.inf
    for s in range(s_count):
        val = cost[s] + abs(total - cand[s])
        if val < best:
            best = val
    return best


@njit(cache=True)
def group_norms(offsets, ys, ws):
    n = offsets.shape[0] - 1
    out = np.zeros(n)
    for g in range(n):
        a = offsets[g]
        b = offsets[g + 1]
        if b > a:
            out[g] = bl_norm(ys[a:b], ws[a:b])
    return out


@njit(cache=True)
def diff_norms(off_a, ya, wa, off_b, yb, wb):
    """Per-group norm of A_g - B_g, one LP over the joint support."""
    n = off_a.shape[0] - 1
    out = np.zeros(n)
    for g in range(n):
        a0 = off_a[g]
        a1 = off_a[g + 1]
        b0 = off_b[g]
        b1 = off_b[g + 1]
        k = (a1 - a0) + (b1 - b0)
        if k == 0:
            continue
        ys = np.empty(k)
        ws = np.empty(k)
        j = 0
        for i in range(a0, a1):
            ys[j] = ya[i]
            ws[j] = wa[i]
            j += 1
        for i in range(b0, b1):
            ys[j] = yb[i]
            ws[j] = -wb[i]
            j += 1
        out[g] = bl_norm(ys, ws)
    return out


@njit(cache=True)
def cap_groups(bounds, ys, ws, cap):
    """Reduce every group ``ys[bounds[g]:bounds[g+1]]`` (sorted, one sign) to at most ``cap`` atoms.

    The ``cap`` heaviest atoms are kept; every other atom joins the nearest
    kept one, which moves to the weighted mean.  Returns the new arrays, the
    new group bounds and the transport cost of the moves.
    """
    n_groups = bounds.shape[0] - 1
    out_n = 0
    for g in range(n_groups):
        out_n += min(bounds[g + 1] - bounds[g], cap)
    oy = np.empty(out_n)
    ow = np.empty(out_n)
    ob = np.zeros(n_groups + 1, dtype=np.int64)
    moved = 0.0
    pos = 0
    for g in range(n_groups):
        a = bounds[g]
        b = bounds[g + 1]
        k = b - a
        if k <= cap:
            for i in range(a, b):
                oy[pos] = ys[i]
                ow[pos] = ws[i]
                pos += 1
            ob[g + 1] = pos
            continue
        order = np.argsort(-np.abs(ws[a:b]), kind="mergesort")
        keep = np.sort(order[:cap])
        ky = np.empty(cap)
        for j in range(cap):
            ky[j] = ys[a + keep[j]]
        sw = np.zeros(cap)
        sy = np.zeros(cap)
        slot = 0
        for i in range(k):
            y = ys[a + i]
            while slot < cap - 1 and abs(ky[slot + 1] - y) < abs(ky[slot] - y):
                slot += 1
            w = ws[a + i]
            sw[slot] += w
            sy[slot] += w * y
            moved += abs(w) * abs(y - ky[slot])
        for j in range(cap):
            oy[pos] = min(max(sy[j] / sw[j], 0.0), 1.0)
            ow[pos] = sw[j]
            pos += 1
        ob[g + 1] = pos
    return oy, ow, ob, moved
