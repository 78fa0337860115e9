"""Compiled hot loops for the sparse solver paths.

The subset engine's criterion evaluation is a few hundred random CSR row
dots per iteration, and the greedy engine's selection is a handful of full
passes over the stacked criteria; both are dominated by interpreter and
dispatch overhead in pure numpy.  These kernels are bit-compatible with the
numpy implementations in :mod:`kaczlab.solvers` (same accumulation order,
same tie handling) and everything falls back to numpy when numba is
unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the fallback test
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def subset_best(rows, cols, rp, ri, rx, cp, ci, cx, b, z, x, aug, cn2, m):
    """Best stacked index over the sampled subset by the squared criteria.

    Mirrors the numpy path: rows win exact ties, ties within a block go to
    the smaller index, and a zero maximum reports index -1.
    """
    best = 0.0
    best_t = -1
    for idx in range(rows.shape[0]):
        i = rows[idx]
        dot = 0.0
        for p in range(rp[i], rp[i + 1]):
            dot += rx[p] * x[ri[p]]
        r = b[i] - z[i] - dot
        crit = r * r / aug[i]
        if crit > best:
            best = crit
            best_t = i
    for idx in range(cols.shape[0]):
        j = cols[idx]
        dot = 0.0
        for p in range(cp[j], cp[j + 1]):
            dot += cx[p] * z[ci[p]]
        crit = dot * dot / cn2[j]
        if crit > best:
            best = crit
            best_t = m + j
    return best_t, best


@njit(cache=True)
def greedy_draw(rr, rc, aug, cn2, base, u):
    """Greedy thresholded draw over the stacked residuals.

    Computes the criteria maxima and the squared-residual total, thresholds
    at max(eps_row, eps_col) * total, and picks the stacked index whose
    prefix mass first exceeds u * (total mass) -- exactly the cumsum /
    searchsorted(side="right") semantics of the numpy path, including the
    left-to-right accumulation order (rows first, then columns).

    Returns (t, max_row, max_col, total).  t = -1 signals a zero residual.
    """
    m = rr.shape[0]
    n = rc.shape[0]
    total = 0.0
    max_row = 0.0
    max_col = 0.0
    i_best = 0
    j_best = 0
    for i in range(m):
        v = rr[i]
        total += v * v
        crit = v * v / aug[i]
        if crit > max_row:
            max_row = crit
            i_best = i
    for j in range(n):
        v = rc[j]
        total += v * v
        crit = v * v / cn2[j]
        if crit > max_col:
            max_col = crit
            j_best = j
    if total <= 0.0:
        return -1, max_row, max_col, total
    eps_row = 0.5 * (max_row / total + base)
    eps_col = 0.5 * (max_col / total + base)
    eps = eps_row if eps_row >= eps_col else eps_col
    threshold = eps * total

    mass = 0.0
    for i in range(m):
        v = rr[i]
        if v * v / aug[i] >= threshold:
            mass += v * v
    for j in range(n):
        v = rc[j]
        if v * v / cn2[j] >= threshold:
            mass += v * v
    if mass <= 0.0:
        # rounding pushed the threshold past the max; keep the best index
        if max_row >= max_col:
            return i_best, max_row, max_col, total
        return m + j_best, max_row, max_col, total

    target = u * mass
    acc = 0.0
    last = -1
    for i in range(m):
        v = rr[i]
        if v * v / aug[i] >= threshold:
            acc += v * v
            last = i
            if acc > target:
                return i, max_row, max_col, total
    for j in range(n):
        v = rc[j]
        if v * v / cn2[j] >= threshold:
            acc += v * v
            last = m + j
            if acc > target:
                return m + j, max_row, max_col, total
    return last, max_row, max_col, total  # u == 1 edge: clamp to the end
