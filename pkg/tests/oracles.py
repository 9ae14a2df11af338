"""Independent reference computations shared by the test modules."""
import itertools
import math
from functools import reduce

import numpy as np
from scipy.optimize import minimize_scalar


def gcd_reference(v, blocks):
    return all(reduce(math.gcd, (abs(int(v[i - 1])) for i in b), 0) == 1 for b in blocks)


def naive_pair_count(n, m, Q, M, blocks=None):
    """Count (q, p) with 0 < |q| <= Q, |p| <= M |q| (sup norms), primitive on every block."""
    total = 0
    for q in itertools.product(range(-Q, Q + 1), repeat=n):
        h = max(abs(v) for v in q)
        if h == 0:
            continue
        L = int(math.floor(M * h))
        grid = np.array(list(itertools.product(range(-L, L + 1), repeat=m)), dtype=np.int64)
        grid = grid[np.abs(grid).max(axis=1) <= M * h]
        if blocks is not None:
            full = np.hstack([np.tile(np.array(q, dtype=np.int64), (len(grid), 1)), grid])
            keep = np.ones(len(grid), dtype=bool)
            for b in blocks:
                keep &= np.gcd.reduce(np.abs(full[:, [i - 1 for i in b]]), axis=1) == 1
            grid = grid[keep]
        total += len(grid)
    return total


def brute_dist(x, R):
    """Minimise the sup-of-columns Euclidean distance to the plane with a scalar search per column."""
    n, m = R.n, R.m
    X = np.asarray(x, dtype=float).reshape(n, m)
    q = np.asarray(R.q, dtype=float)
    worst = 0.0
    for col in range(m):
        target = -float(R.shift()[col])  # constraint q . z = target
        if n == 1:
            best = abs(X[0, col] - target / q[0])
        else:
            i = int(np.argmax(np.abs(q)))
            j = 1 - i

            def obj(t):
                z = np.empty(2)
                z[j] = t
                z[i] = (target - q[j] * t) / q[i]
                return float(np.sum((X[:, col] - z) ** 2))
            res = minimize_scalar(obj, bracket=(X[j, col] - 1, X[j, col] + 1), tol=1e-14)
            best = math.sqrt(max(res.fun, 0.0))
        worst = max(worst, best)
    return math.sqrt(n) * worst
