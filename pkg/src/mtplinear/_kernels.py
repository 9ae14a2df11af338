"""Compiled inner loops for sampling and grid rasterization."""
from __future__ import annotations

import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _gcd(a, b):
    a = abs(a)
    b = abs(b)
    while b:
        a, b = b, a % b
    return a


@nb.njit(cache=True)
def _blocks_ok(v, blocks, block_len):
    for bi in range(blocks.shape[0]):
        g = 0
        for t in range(block_len[bi]):
            g = _gcd(g, v[blocks[bi, t]])
        if g != 1:
            return False
    return True


@nb.njit(cache=True)
def mc_hits(points, qs, radius, y, n, m, blocks, block_len, use_blocks):
    """Per point: 1 if some listed q has p with |q x_l + p_l - y_l| < radius(q) for all l.

    Phi is the identity.  ``points`` is (N, n*m) row-major in (i, l);
    ``radius`` is aligned with ``qs``.  Candidates p_l are every integer in the
    open window around y_l - q x_l, so radii above 1/2 are handled exactly.
    """
    N = points.shape[0]
    out = np.zeros(N, dtype=np.uint8)
    v = np.empty(n + m, dtype=np.int64)
    val = np.empty(m)
    lo = np.empty(m, dtype=np.int64)
    hi = np.empty(m, dtype=np.int64)
    cur = np.empty(m, dtype=np.int64)
    for s in range(N):
        x = points[s]
        for t in range(qs.shape[0]):
            r = radius[t]
            if r <= 0.0:
                continue
            empty = False
            for l in range(m):
                acc = -y[l]
                for i in range(n):
                    acc += qs[t, i] * x[i * m + l]
                val[l] = acc
                # integers p with |acc + p| < r
                lo[l] = math.floor(-acc - r) + 1
                hi[l] = math.ceil(-acc + r) - 1
                while lo[l] <= hi[l] and not abs(acc + lo[l]) < r:
                    lo[l] += 1
                while hi[l] >= lo[l] and not abs(acc + hi[l]) < r:
                    hi[l] -= 1
                if lo[l] > hi[l]:
                    empty = True
                    break
            if empty:
                continue
            if not use_blocks:
                out[s] = 1
                break
            for i in range(n):
                v[i] = qs[t, i]
            for l in range(m):
                cur[l] = lo[l]
            found = False
            while True:
                for l in range(m):
                    v[n + l] = cur[l]
                if _blocks_ok(v, blocks, block_len):
                    found = True
                    break
                l = 0
                while l < m:
                    cur[l] += 1
                    if cur[l] <= hi[l]:
                        break
                    cur[l] = lo[l]
                    l += 1
                if l == m:
                    break
            if found:
                out[s] = 1
                break
    return out


@nb.njit(cache=True)
def raster_slabs(grid, D, n, qs, shifts, radius):
    """Mark cells of the D^n grid on [0,1]^n meeting some open slab |q.x + c| < r.

    ``grid`` is a flat uint8 array of length D**n, index sum_i idx_i * D**(n-1-i).
    For each slab the axis with the largest |q_i| is resolved as an interval;
    the remaining axes are enumerated cell by cell.
    """
    h = 1.0 / D
    idx = np.zeros(n, dtype=np.int64)
    for t in range(qs.shape[0]):
        r = radius[t]
        if r <= 0.0:
            continue
        c = shifts[t]
        a = 0
        for i in range(1, n):
            if abs(qs[t, i]) > abs(qs[t, a]):
                a = i
        qa = qs[t, a]
        # enumerate the other axes
        for i in range(n):
            idx[i] = 0
        done = False
        while not done:
            # range of the partial form over the current cell of the other axes
            lo_sum = c
            hi_sum = c
            for i in range(n):
                if i == a:
                    continue
                u0 = qs[t, i] * idx[i] * h
                u1 = qs[t, i] * (idx[i] + 1) * h
                lo_sum += min(u0, u1)
                hi_sum += max(u0, u1)
            # need qa*xa in (-r - hi_sum, r - lo_sum)
            lo_v = (-r - hi_sum) / qa
            hi_v = (r - lo_sum) / qa
            if qa < 0:
                lo_v, hi_v = hi_v, lo_v
            i0 = int(math.floor(lo_v * D))
            i1 = int(math.ceil(hi_v * D)) - 1
            if i0 < 0:
                i0 = 0
            if i1 > D - 1:
                i1 = D - 1
            if i0 <= i1:
                base = 0
                stride_a = 1
                for i in range(n):
                    stride = 1
                    for _ in range(n - 1 - i):
                        stride *= D
                    if i == a:
                        stride_a = stride
                    else:
                        base += idx[i] * stride
                for j in range(i0, i1 + 1):
                    grid[base + j * stride_a] = 1
            # next cell of the other axes
            i = n - 1
            while True:
                if i < 0:
                    done = True
                    break
                if i == a:
                    i -= 1
                    continue
                idx[i] += 1
                if idx[i] < D:
                    break
                idx[i] = 0
                i -= 1
            if n == 1:
                done = True
    return grid


@nb.njit(cache=True)
def cells_meet_slabs(cells, D, n, m, qs, shifts, radius):
    """For each cell (rows of integer indices of length n*m), whether it meets some slab set.

    The set of a pair is {X : |sum_i q_i X[i,l] + c_l| < r for every l}; a box
    meets it iff every column's range of the form overlaps the open window.
    """
    h = 1.0 / D
    out = np.zeros(cells.shape[0], dtype=np.uint8)
    for s in range(cells.shape[0]):
        for t in range(qs.shape[0]):
            r = radius[t]
            if r <= 0.0:
                continue
            ok = True
            for l in range(m):
                lo_sum = shifts[t, l]
                hi_sum = shifts[t, l]
                for i in range(n):
                    u0 = qs[t, i] * cells[s, i * m + l] * h
                    u1 = qs[t, i] * (cells[s, i * m + l] + 1) * h
                    lo_sum += min(u0, u1)
                    hi_sum += max(u0, u1)
                if not (lo_sum < r and hi_sum > -r):
                    ok = False
                    break
            if ok:
                out[s] = 1
                break
    return out
