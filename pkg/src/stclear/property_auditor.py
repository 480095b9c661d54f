"""Executable audits of the market's economic guarantees.

Each guarantee of the clearing mechanism becomes a pass/fail check with a
worst-case residual: profit nonnegativity, surplus dominance of the
space-time model over its quasi-steady-state restriction, competitive
equilibrium (KKT plus strong duality against the independently solved
explicit dual), revenue adequacy, cleared-price and capacity-price bounds,
the profit-requires-saturation rule, existence of a saturated player in any
non-dry market, and the price-volatility corridor pinned by interior
transporters.  Checks are stated as inequalities over the returned optimal
basis, never as uniqueness claims about prices, because clearing problems can
be degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clearing_lp import LinearProgram, assemble_dual
from .market_model import MarketInstance, validate
from .scenario_gen import restrict_to_qss
from .settlement import (
    ClearingSolution,
    Saturation,
    SettlementReport,
    aggregation_identity_check,
    clear,
    settle,
    stakeholder_prices,
)
from .simplex_solver import SolverConfig, SolverResult, SolverStatus, solve, verify_kkt

REL_TOL = 1e-6  # audits compare residuals against REL_TOL * (1 + magnitude)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    offender: str | None = None
    detail: str = ""


@dataclass(frozen=True)
class AuditReport:
    checks: tuple[CheckResult, ...]
    status: str  # "pass" | "fail" | "inconclusive"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _worst(rows, violation):
    """Max violation and the stakeholder attaining it."""
    worst = 0.0
    who = None
    for row in rows:
        v = violation(row)
        if v > worst:
            worst, who = v, row.id
    return worst, who


def audit_profit_nonnegativity(settlement: SettlementReport, tol: float = REL_TOL) -> CheckResult:
    scale = tol * (1.0 + abs(settlement.surplus))
    worst, who = _worst(settlement.stakeholders, lambda r: max(0.0, -r.profit))
    return CheckResult("profit_nonnegativity", worst <= scale, worst, who)


def audit_surplus_dominance(
    instance: MarketInstance, cfg: SolverConfig | None = None, tol: float = REL_TOL
) -> CheckResult:
    st = clear(instance, cfg)
    qss = clear(restrict_to_qss(instance), cfg)
    if st.status is not SolverStatus.OPTIMAL or qss.status is not SolverStatus.OPTIMAL:
        return CheckResult(
            "surplus_dominance", False, np.inf, None,
            f"solver status: st={st.status.value}, qss={qss.status.value}",
        )
    gap = qss.surplus - st.surplus
    scale = tol * (1.0 + abs(qss.surplus))
    return CheckResult(
        "surplus_dominance", gap <= scale, max(0.0, gap), None,
        f"st={st.surplus:.9g} qss={qss.surplus:.9g}",
    )


def audit_competitive_equilibrium(
    instance: MarketInstance,
    lp: LinearProgram,
    result: SolverResult,
    cfg: SolverConfig | None = None,
    tol: float = REL_TOL,
) -> CheckResult:
    kkt = verify_kkt(lp, result)
    dual = solve(assemble_dual(instance), cfg)
    if dual.status is not SolverStatus.OPTIMAL:
        return CheckResult(
            "competitive_equilibrium", False, np.inf, None,
            f"explicit dual solve: {dual.status.value}",
        )
    gap = abs(result.objective - dual.objective)
    scale = tol * (1.0 + abs(result.objective))
    passed = kkt.passed and gap <= scale
    return CheckResult(
        "competitive_equilibrium", passed, gap, None,
        f"kkt_passed={kkt.passed} duality_gap={gap:.3e}",
    )


def audit_revenue_adequacy(settlement: SettlementReport, tol: float = REL_TOL) -> CheckResult:
    """Payments from revenue sources balance payments to revenue sinks.

    Grand-total identity regrouped by bid sign: positive-bid consumer
    payments plus negative-bid suppliers' payments in (their revenue is
    negative, hence the flipped sign when moved across) equal what
    positive-bid suppliers, negative-bid consumers, transporters, and
    technologies collect.
    """
    lhs = rhs = mag = 0.0
    for r in settlement.stakeholders:
        v = r.price * r.allocation
        mag += abs(v)
        if r.kind == "consumer":
            if r.bid >= 0:
                lhs += v
            else:
                rhs += -v
        elif r.kind == "supplier":
            if r.bid < 0:
                lhs += -v
            else:
                rhs += v
        else:  # transporters and technologies collect
            rhs += v
    residual = abs(lhs - rhs)
    return CheckResult("revenue_adequacy", residual <= tol * (1.0 + mag), residual)


def audit_cleared_price_bounds(settlement: SettlementReport, tol: float = REL_TOL) -> CheckResult:
    """Every cleared stakeholder trades at a price no worse than its bid."""

    def violation(r):
        scale = 1.0 + abs(r.bid)
        if r.allocation <= 1e-7 * (1.0 + abs(r.capacity)):
            return 0.0
        if r.kind == "consumer":
            return max(0.0, (r.price - r.bid) / scale)
        return max(0.0, (r.bid - r.price) / scale)

    worst, who = _worst(settlement.stakeholders, violation)
    return CheckResult("cleared_price_bounds", worst <= tol, worst, who)


def audit_capacity_price_bounds(settlement: SettlementReport, tol: float = REL_TOL) -> CheckResult:
    """Price exceeds bid by at most the capacity dual; strictly-below-capacity
    stakeholders have a zero dual, pinching their price to the bid.

    The sharpened (dual-free) form applies to allocations strictly below
    capacity: a zero-capacity stakeholder is reported dry but its bound is
    active, so it is exempt.
    """

    def violation(r):
        scale = 1.0 + abs(r.bid) + abs(r.lambda_bar)
        if r.kind == "consumer":
            v = (r.bid - r.lambda_bar) - r.price
        else:
            v = r.price - (r.bid + r.lambda_bar)
        if r.allocation < r.capacity - 1e-7 * (1.0 + abs(r.capacity)):
            # lambda_bar is zero here by complementary slackness
            if r.kind == "consumer":
                v = max(v, r.bid - r.price - r.lambda_bar)
            else:
                v = max(v, r.price - r.bid - r.lambda_bar)
        return max(0.0, v / scale)

    worst, who = _worst(settlement.stakeholders, violation)
    return CheckResult("capacity_price_bounds", worst <= tol, worst, who)


def audit_profit_capacity_rule(settlement: SettlementReport, tol: float = REL_TOL) -> CheckResult:
    """Positive profit only at full capacity, and then at most the capacity
    dual times the capacity."""
    scale = tol * (1.0 + abs(settlement.surplus))

    def violation(r):
        if r.saturation is Saturation.AT_CAPACITY:
            return max(0.0, r.profit - r.lambda_bar * r.capacity)
        return max(0.0, r.profit)

    worst, who = _worst(settlement.stakeholders, violation)
    return CheckResult("profit_capacity_rule", worst <= scale, worst, who)


def audit_at_least_one_saturated(settlement: SettlementReport) -> CheckResult:
    """A non-dry market clears at least one player at capacity; skipped
    (passes vacuously) when nothing is allocated."""
    dry = all(r.saturation is Saturation.DRY for r in settlement.stakeholders)
    if dry:
        return CheckResult("at_least_one_saturated", True, 0.0, None, "market dry; skipped")
    saturated = any(r.saturation is Saturation.AT_CAPACITY for r in settlement.stakeholders)
    return CheckResult("at_least_one_saturated", saturated, 0.0 if saturated else 1.0)


def audit_volatility_corridor(
    settlement: SettlementReport, instance: MarketInstance, tol: float = REL_TOL
) -> CheckResult:
    """Strictly interior transporters price exactly at their bid; with a zero
    bid that forces both endpoint prices equal.  Saturated transporters are
    exempt: their capacity dual may open the corridor."""
    rows = {r.id: r for r in settlement.stakeholders if r.kind == "transporter"}
    worst = 0.0
    who = None
    for x in instance.transporters:
        r = rows[x.id]
        eps = 1e-7 * (1.0 + abs(x.capacity))
        if not (eps < r.allocation < x.capacity - eps):
            continue
        v = abs(r.price - x.bid) / (1.0 + abs(x.bid))
        if v > worst:
            worst, who = v, x.id
    return CheckResult("volatility_corridor", worst <= tol, worst, who)


def run_full_audit(
    instance: MarketInstance,
    cfg: SolverConfig | None = None,
    solution: ClearingSolution | None = None,
    tol: float = REL_TOL,
) -> AuditReport:
    """Solve, settle, and run every check plus the aggregation identities and
    an independent KKT pass.  A non-optimal solver status short-circuits:
    iteration limits are inconclusive, anything else is a failure.

    `tol` is the relative audit tolerance; the aggregation identities and the
    KKT pass run 10x and 100x tighter respectively.
    """
    checks: list[CheckResult] = []
    report = validate(instance)
    checks.append(
        CheckResult(
            "instance_valid", report.ok, float(len(report.violations)),
            None if report.ok else report.violations[0].subject,
        )
    )
    if not report.ok:
        return AuditReport(tuple(checks), "fail")

    sol = solution if solution is not None else clear(instance, cfg)
    if sol.status is not SolverStatus.OPTIMAL:
        name = "bounded_clearing" if sol.status is SolverStatus.UNBOUNDED else "solved_to_optimality"
        checks.append(CheckResult(name, False, np.inf, None, f"status={sol.status.value}"))
        status = "inconclusive" if sol.status is SolverStatus.ITERATION_LIMIT else "fail"
        return AuditReport(tuple(checks), status)
    checks.append(CheckResult("bounded_clearing", True, 0.0))

    settlement = settle(sol, instance)
    prices = stakeholder_prices(sol, instance)

    checks.append(audit_profit_nonnegativity(settlement, tol))
    checks.append(audit_surplus_dominance(instance, cfg, tol))
    checks.append(audit_competitive_equilibrium(instance, sol.lp, sol.result, cfg, tol))
    checks.append(audit_revenue_adequacy(settlement, tol))
    checks.append(audit_cleared_price_bounds(settlement, tol))
    checks.append(audit_capacity_price_bounds(settlement, tol))
    checks.append(audit_profit_capacity_rule(settlement, tol))
    checks.append(audit_at_least_one_saturated(settlement))
    checks.append(audit_volatility_corridor(settlement, instance, tol))

    agg = aggregation_identity_check(sol, prices, instance)
    agg_scale = 0.1 * tol * (1.0 + abs(sol.surplus))
    checks.append(
        CheckResult(
            "aggregation_identities", float(agg.max(initial=0.0)) <= agg_scale,
            float(agg.max(initial=0.0)),
        )
    )
    kkt = verify_kkt(sol.lp, sol.result, 0.01 * tol)
    checks.append(
        CheckResult(
            "kkt", kkt.passed,
            max(kkt.primal_residual, kkt.dual_violation, kkt.duality_gap),
        )
    )
    status = "pass" if all(c.passed for c in checks) else "fail"
    return AuditReport(tuple(checks), status)
