"""Exhaustive active-set enumeration oracle for tiny LPs.

Independent of the simplex path: every assignment of columns to
{lower, upper, free} is tried; the free block must be uniquely determined by
the equality system, and the best feasible candidate wins.  Only meant for a
handful of columns -- cost grows as 3^n.
"""

from __future__ import annotations

import itertools

import numpy as np

FEAS_TOL = 1e-9


def enumerate_lp(c, A, b, lower, upper, sense="max"):
    """Return (status, objective, x) by brute force.

    status is "optimal" or "infeasible"; bounds must all be finite.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = c.size
    m = A.shape[0] if A.size else 0
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("oracle requires finite bounds")

    best_obj = None
    best_x = None
    sgn = 1.0 if sense == "max" else -1.0
    for assign in itertools.product((0, 1, 2), repeat=n):
        fixed = [j for j in range(n) if assign[j] != 2]
        free = [j for j in range(n) if assign[j] == 2]
        x = np.zeros(n)
        for j in fixed:
            x[j] = lower[j] if assign[j] == 0 else upper[j]
        if free:
            if m == 0:
                continue  # underdetermined: every vertex has all columns at bounds
            AJ = A[:, free]
            rhs = b - A[:, fixed] @ x[fixed] if fixed else b.copy()
            if np.linalg.matrix_rank(AJ, tol=1e-10) < len(free):
                continue
            sol, *_ = np.linalg.lstsq(AJ, rhs, rcond=None)
            x[free] = sol
        if m and np.max(np.abs(A @ x - b)) > FEAS_TOL * (1.0 + np.abs(b).max()):
            continue
        if np.any(x < lower - FEAS_TOL) or np.any(x > upper + FEAS_TOL):
            continue
        obj = float(c @ x)
        if best_obj is None or sgn * obj > sgn * best_obj + 1e-12:
            best_obj = obj
            best_x = x.copy()
    if best_obj is None:
        return "infeasible", None, None
    return "optimal", best_obj, best_x


def enumerate_market_lp(lp):
    """Run the oracle on an assembled clearing LP."""
    A = lp.A.toarray() if lp.n_rows else np.zeros((0, lp.n_cols))
    return enumerate_lp(lp.c, A, lp.b, lp.lower, lp.upper, sense=lp.sense)
