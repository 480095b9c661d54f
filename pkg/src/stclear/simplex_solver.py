"""Bounded-variable revised simplex for equality-constrained LPs with box
bounds, plus an independent KKT verifier.

Nonbasic variables rest at their lower or upper bound (or at zero for free
columns), which keeps clearing LPs at their natural dimension instead of
adding slack rows.  The basis is held as a dense LU factorization refreshed
every `REFACTOR_EVERY` pivots, with product-form eta updates in between.
Phase 1 (auxiliary variables) runs only when b != 0; clearing primals have
b == 0 and start feasible at x = 0.

Orientation conventions, fixed by the market fixtures in the test suite:
  - `y` is the row dual of the internal minimization; for the max-sense
    clearing LP assembled with supply entering rows at +1, this is exactly
    the nodal clearing price vector.
  - `reduced_costs[j]` is the marginal change of the *reported* objective per
    unit increase of x_j, so a column at its upper bound in a max LP carries
    a nonnegative reduced cost equal to its capacity dual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve

from .clearing_lp import LinearProgram, VariableIndex

log = logging.getLogger("stclear.simplex")

REFACTOR_EVERY = 64

# nonbasic/basic markers
_AT_LOWER = 0
_AT_UPPER = 1
_BASIC = 2
_FREE = 3
_FIXED = 4


class SolverStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class NotOptimal(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    pivot_tolerance: float = 1e-9
    feasibility_tolerance: float = 1e-8
    optimality_tolerance: float = 1e-8
    max_iterations: int | None = None  # None -> 50 * (rows + cols)
    stall_threshold: int = 50  # consecutive degenerate pivots before Bland's rule

    def __post_init__(self):
        if min(self.pivot_tolerance, self.feasibility_tolerance, self.optimality_tolerance) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SolverResult:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int


@dataclass(frozen=True)
class KktReport:
    primal_residual: float
    bound_violation: float
    dual_violation: float
    cs_lower: float
    cs_upper: float
    duality_gap: float
    passed: bool


class _EtaLU:
    """Dense LU of the basis plus product-form eta updates."""

    def __init__(self, B: np.ndarray):
        self.lu = lu_factor(B, check_finite=False)
        self.etas: list[tuple[int, np.ndarray]] = []

    def solve(self, v: np.ndarray) -> np.ndarray:
        x = lu_solve(self.lu, v, check_finite=False)
        for r, eta in self.etas:
            xr = x[r]
            if xr != 0.0:
                x += eta * xr
        return x

    def solve_t(self, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        for r, eta in reversed(self.etas):
            v[r] += eta @ v
        return lu_solve(self.lu, v, trans=1, check_finite=False)

    def update(self, w: np.ndarray, r: int):
        pivot = w[r]
        eta = -w / pivot
        eta[r] = 1.0 / pivot - 1.0
        self.etas.append((r, eta))


class _Simplex:
    def __init__(self, lp: LinearProgram, cfg: SolverConfig):
        self.cfg = cfg
        self.n = lp.n_cols
        self.m = lp.n_rows
        lo = np.array(lp.lower, dtype=float)
        hi = np.array(lp.upper, dtype=float)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("NaN bounds")
        free = np.isneginf(lo)
        if np.any(~free & (lo != 0.0)):
            raise ValueError("lower bounds must be 0 or -inf")
        if np.any(hi < np.where(free, -np.inf, lo)):
            raise ValueError("upper bound below lower bound")

        self.b = np.array(lp.b, dtype=float)
        sign = np.where(self.b < 0, -1.0, 1.0)
        art = sp.diags(sign, format="csc", shape=(self.m, self.m)) if self.m else None
        A = lp.A.tocsc()
        self.W = sp.hstack([A, art], format="csc") if self.m else A.tocsc()
        self.WT = self.W.T.tocsr()
        N = self.n + self.m

        self.lo = np.concatenate([lo, np.zeros(self.m)])
        art_hi = np.where(np.abs(self.b) > 0, np.inf, 0.0)
        self.hi = np.concatenate([hi, art_hi])

        self.status = np.empty(N, dtype=np.int8)
        for j in range(self.n):
            if free[j]:
                self.status[j] = _FREE
            elif self.lo[j] == self.hi[j]:
                self.status[j] = _FIXED
            else:
                self.status[j] = _AT_LOWER
        self.status[self.n:] = _BASIC
        self.basis = np.arange(self.n, N)

        self.x = np.zeros(N)
        at_upper = self.status == _AT_UPPER
        self.x[at_upper] = self.hi[at_upper]
        self.x[self.n:] = np.abs(self.b)

        self.sense_mult = -1.0 if lp.sense == "max" else 1.0
        self.c_orig = np.array(lp.c, dtype=float)
        self.c2 = np.concatenate([self.sense_mult * self.c_orig, np.zeros(self.m)])
        self.c1 = np.zeros(N)
        self.c1[self.n:] = 1.0

        self.factor: _EtaLU | None = None
        self.iterations = 0
        limit = cfg.max_iterations
        self.max_iterations = limit if limit is not None else max(1, 50 * (self.m + self.n))
        self.bland = False
        self.stall = 0
        self._refactor()

    def _refactor(self):
        if self.m == 0:
            return
        B = self.W[:, self.basis].toarray()
        self.factor = _EtaLU(B)
        # recompute basic values from scratch to purge accumulated drift
        xn = self.x.copy()
        xn[self.basis] = 0.0
        rhs = self.b - self.W @ xn
        self.x[self.basis] = self.factor.solve(rhs)

    def _duals(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.m == 0:
            return np.zeros(0), c.copy()
        y = self.factor.solve_t(c[self.basis])
        return y, c - self.WT @ y

    def _loop(self, c: np.ndarray) -> SolverStatus:
        tol = self.cfg.optimality_tolerance
        ptol = self.cfg.pivot_tolerance
        while True:
            if self.iterations >= self.max_iterations:
                return SolverStatus.ITERATION_LIMIT
            if self.factor is not None and len(self.factor.etas) >= REFACTOR_EVERY:
                self._refactor()
            y, d = self._duals(c)

            can_up = ((self.status == _AT_LOWER) & (d < -tol)) | (
                (self.status == _FREE) & (d < -tol)
            )
            can_dn = ((self.status == _AT_UPPER) & (d > tol)) | (
                (self.status == _FREE) & (d > tol)
            )
            eligible = can_up | can_dn
            if not eligible.any():
                return SolverStatus.OPTIMAL
            if self.bland:
                q = int(np.argmax(eligible))
            else:
                viol = np.where(eligible, np.abs(d), 0.0)
                q = int(np.argmax(viol))
            sigma = 1.0 if can_up[q] else -1.0

            w = (
                self.factor.solve(self.W[:, q].toarray().ravel())
                if self.m
                else np.zeros(0)
            )
            sw = sigma * w
            xB = self.x[self.basis]
            loB = self.lo[self.basis]
            hiB = self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            pos = sw > ptol
            neg = sw < -ptol
            if pos.any():
                ratios[pos] = np.maximum(xB[pos] - loB[pos], 0.0) / sw[pos]
            if neg.any():
                ratios[neg] = np.maximum(hiB[neg] - xB[neg], 0.0) / (-sw[neg])
            rmin = float(ratios.min()) if self.m else np.inf
            own = self.hi[q] - self.x[q] if sigma > 0 else self.x[q] - self.lo[q]

            if rmin == np.inf and own == np.inf:
                return SolverStatus.UNBOUNDED

            if own < rmin:
                # entering column hits its opposite bound first: bound flip
                delta = own
                if self.m and delta > 0:
                    self.x[self.basis] = xB - sigma * delta * w
                self.x[q] = self.hi[q] if sigma > 0 else self.lo[q]
                self.status[q] = _AT_UPPER if sigma > 0 else _AT_LOWER
            else:
                # leaving ties break by lowest variable index (Bland-style);
                # this also pins the dual returned on degenerate optima
                window = rmin * (1.0 + 1e-12) + 1e-12
                cand = np.flatnonzero(ratios <= window)
                r_pos = int(cand[np.argmin(self.basis[cand])])
                delta = max(float(ratios[r_pos]), 0.0)
                leaving = int(self.basis[r_pos])
                self.x[self.basis] = xB - sigma * delta * w
                if sw[r_pos] > 0:
                    self.x[leaving] = self.lo[leaving]
                    self.status[leaving] = _AT_LOWER
                else:
                    self.x[leaving] = self.hi[leaving]
                    self.status[leaving] = _AT_UPPER
                self.x[q] = self.x[q] + sigma * delta
                self.basis[r_pos] = q
                self.status[q] = _BASIC
                self.factor.update(w, r_pos)

            if delta <= 1e-11:
                self.stall += 1
                if self.stall >= self.cfg.stall_threshold and not self.bland:
                    log.debug("stall of %d degenerate pivots; switching to Bland", self.stall)
                    self.bland = True
            else:
                self.stall = 0
                self.bland = False
            self.iterations += 1

    def run(self) -> tuple[SolverStatus, np.ndarray, np.ndarray]:
        if self.m and np.abs(self.b).max() > 0:
            st = self._loop(self.c1)
            if st is not SolverStatus.OPTIMAL:
                if st is SolverStatus.UNBOUNDED:  # phase-1 objective is bounded below
                    raise RuntimeError("phase-1 reported unbounded")
                return st, np.zeros(0), self.c2.copy()
            infeas = float(self.c1 @ self.x)
            if infeas > self.cfg.feasibility_tolerance * (1.0 + np.abs(self.b).sum()):
                return SolverStatus.INFEASIBLE, np.zeros(0), self.c2.copy()
            self.hi[self.n:] = 0.0
            nonbasic_art = np.setdiff1d(np.arange(self.n, self.n + self.m), self.basis)
            self.status[nonbasic_art] = _FIXED
            self.x[nonbasic_art] = 0.0
        st = self._loop(self.c2)
        self._refactor()
        y, d = self._duals(self.c2)
        return st, y, d


def solve(lp: LinearProgram, cfg: SolverConfig | None = None) -> SolverResult:
    """Solve an LP; mathematical outcomes come back as status codes, never
    exceptions."""
    cfg = cfg or SolverConfig()
    sx = _Simplex(lp, cfg)
    status, y, d = sx.run()
    x = sx.x[: sx.n].copy()
    if status is SolverStatus.INFEASIBLE:
        x = np.full(sx.n, np.nan)
    objective = float(sx.c_orig @ x) if status is SolverStatus.OPTIMAL else np.nan
    if lp.sense == "max":
        reduced = -d[: sx.n] if d.size else np.zeros(0)
    else:
        reduced = d[: sx.n] if d.size else np.zeros(0)
    if y.size != lp.n_rows:
        y = np.full(lp.n_rows, np.nan)
        reduced = np.full(lp.n_cols, np.nan)
    log.debug("solve: status=%s iters=%d obj=%s", status.value, sx.iterations, objective)
    return SolverResult(
        status=status,
        x=x,
        y=y,
        reduced_costs=np.asarray(reduced, dtype=float),
        objective=objective,
        iterations=sx.iterations,
    )


def verify_kkt(lp: LinearProgram, result: SolverResult, tol: float = 1e-8) -> KktReport:
    """Independent optimality check from (x, y) alone.

    Recomputes reduced costs from scratch, derives bound multipliers from
    their sign parts, and reports the worst primal residual, dual-sign
    violation, complementary-slackness products, and duality gap.
    """
    if result.status is not SolverStatus.OPTIMAL:
        raise NotOptimal(f"verify_kkt requires an optimal result, got {result.status}")
    x = np.asarray(result.x, dtype=float)
    y = np.asarray(result.y, dtype=float)
    c_int = -lp.c if lp.sense == "max" else lp.c

    primal = float(np.max(np.abs(lp.A @ x - lp.b))) if lp.n_rows else 0.0
    lo, hi = lp.lower, lp.upper
    bound = float(np.max(np.maximum(np.maximum(lo - x, x - hi), 0.0))) if lp.n_cols else 0.0

    d = c_int - (lp.A.T @ y if lp.n_rows else 0.0)
    d = np.asarray(d, dtype=float)
    mu = np.maximum(d, 0.0)  # multiplier for x >= lo
    nu = np.maximum(-d, 0.0)  # multiplier for x <= hi

    fin_lo = np.isfinite(lo)
    fin_hi = np.isfinite(hi)
    # a bound multiplier charged to an infinite bound is a dual violation
    dual = 0.0
    if np.any(~fin_lo):
        dual = max(dual, float(mu[~fin_lo].max(initial=0.0)))
    if np.any(~fin_hi):
        dual = max(dual, float(nu[~fin_hi].max(initial=0.0)))
    cs_lower = float(np.max(np.abs((x - lo)[fin_lo] * mu[fin_lo]), initial=0.0))
    cs_upper = float(np.max(np.abs((hi - x)[fin_hi] * nu[fin_hi]), initial=0.0))

    obj_int = float(c_int @ x)
    dual_obj = float(lp.b @ y) if lp.n_rows else 0.0
    dual_obj += float(lo[fin_lo] @ mu[fin_lo]) - float(hi[fin_hi] @ nu[fin_hi])
    gap = abs(obj_int - dual_obj)

    xs = float(np.max(np.abs(x), initial=0.0))
    money = 1.0 + abs(obj_int)
    passed = (
        primal <= tol * (1.0 + float(np.max(np.abs(lp.b), initial=0.0)) + xs)
        and bound <= tol * (1.0 + xs)
        and dual <= tol * (1.0 + float(np.max(np.abs(c_int), initial=0.0)))
        and cs_lower <= tol * money
        and cs_upper <= tol * money
        and gap <= tol * money
    )
    return KktReport(primal, bound, dual, cs_lower, cs_upper, gap, passed)


def capacity_duals(
    lp: LinearProgram,
    result: SolverResult,
    index: VariableIndex,
    tol: float = 1e-7,
) -> dict[str, float]:
    """Per-stakeholder capacity shadow price.

    Nonzero only at the upper bound (strong duality: an interior allocation
    has a zero capacity dual); read off the profit-oriented reduced cost.
    """
    if result.status is not SolverStatus.OPTIMAL:
        raise NotOptimal(f"capacity_duals requires an optimal result, got {result.status}")
    if lp.sense != "max":
        raise ValueError("capacity duals are defined for the max-sense clearing LP")
    out: dict[str, float] = {}
    for label, j in index.col_of.items():
        cap = lp.upper[j]
        if result.x[j] >= cap - tol * (1.0 + abs(cap)):
            out[label] = max(0.0, float(result.reduced_costs[j]))
        else:
            out[label] = 0.0
    return out
