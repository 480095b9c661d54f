"""Settlement: from solver duals to market economics.

Turns a solved clearing LP into stakeholder-facing quantities: identity
prices (nodal price at the stakeholder's location, endpoint difference for
transporters, yield-weighted output-minus-input value for technologies),
profits, saturation classes, and the revenue-stream table whose grand total
is zero on every optimal solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .clearing_lp import LinearProgram, VariableIndex, assemble_primal
from .market_model import MarketInstance, sign_partition
from .simplex_solver import (
    NotOptimal,
    SolverConfig,
    SolverResult,
    SolverStatus,
    capacity_duals,
    solve,
)
from .stgraph import ArcClass, SpaceTimeNode, classify_arc

CLASS_TOL = 1e-7  # relative threshold for at-bound / dry classification


class UndefinedNodalPrice(RuntimeError):
    """A non-dry stakeholder sits on an unpriced node; internal error, since
    every stakeholder's presence creates its clearing row."""


class Saturation(Enum):
    AT_CAPACITY = "at_capacity"
    PARTIAL = "partial"
    DRY = "dry"


@dataclass(frozen=True)
class ClearingSolution:
    """Solved market: allocations, nodal prices, capacity duals, surplus.

    Prices are a mapping keyed by (space-time node, product); pairs with no
    participants have no row and therefore no entry (undefined price).
    Solver artifacts ride along for the auditors.
    """

    status: SolverStatus
    allocations: dict
    nodal_prices: dict
    capacity_duals: dict
    surplus: float
    lp: LinearProgram | None = field(default=None, repr=False, compare=False)
    result: SolverResult | None = field(default=None, repr=False, compare=False)
    index: VariableIndex | None = field(default=None, repr=False, compare=False)


def clear(instance: MarketInstance, cfg: SolverConfig | None = None) -> ClearingSolution:
    """Assemble the primal, solve it, and read duals off the solver."""
    lp, index = assemble_primal(instance)
    result = solve(lp, cfg)
    if result.status is not SolverStatus.OPTIMAL:
        return ClearingSolution(
            status=result.status,
            allocations={},
            nodal_prices={},
            capacity_duals={},
            surplus=np.nan,
            lp=lp,
            result=result,
            index=index,
        )
    allocations = {label: float(result.x[j]) for label, j in index.col_of.items()}
    prices = {key: float(result.y[i]) for key, i in index.row_of.items()}
    lam = capacity_duals(lp, result, index)
    return ClearingSolution(
        status=result.status,
        allocations=allocations,
        nodal_prices=prices,
        capacity_duals=lam,
        surplus=float(result.objective),
        lp=lp,
        result=result,
        index=index,
    )


def _price_at(solution: ClearingSolution, s: SpaceTimeNode, p: str, who: str) -> float:
    try:
        return solution.nodal_prices[(s, p)]
    except KeyError:
        raise UndefinedNodalPrice(f"no clearing price at {(s.node, s.time, p)} for {who}")


def stakeholder_prices(solution: ClearingSolution, instance: MarketInstance) -> dict:
    """Identity price per stakeholder: nodal price for suppliers/consumers,
    receiving-minus-base difference for transporters, yield-weighted output
    minus input value for technologies."""
    if solution.status is not SolverStatus.OPTIMAL:
        raise NotOptimal("settlement requires an optimal clearing solution")
    out: dict[str, float] = {}
    for x in instance.suppliers:
        out[x.id] = _price_at(solution, x.node, x.product, x.id)
    for x in instance.consumers:
        out[x.id] = _price_at(solution, x.node, x.product, x.id)
    for x in instance.transporters:
        out[x.id] = _price_at(solution, x.arc.receiving, x.product, x.id) - _price_at(
            solution, x.arc.base, x.product, x.id
        )
    for x in instance.technologies:
        val = 0.0
        for p, g in x.outputs.items():
            val += g * _price_at(solution, x.node, p, x.id)
        for p, g in x.inputs.items():
            val -= g * _price_at(solution, x.node, p, x.id)
        out[x.id] = val
    return out


def stakeholder_profits(
    solution: ClearingSolution, prices: dict, instance: MarketInstance
) -> dict:
    """Profit per stakeholder; consumers earn bid-minus-price (money saved),
    providers earn price-minus-bid.

    The same formulas apply unchanged to negative bids: a tipping-fee
    supplier profits when the clearing price sits above its (negative) bid,
    and a paid-to-consume player's "savings" are measured against what it
    asked to be paid.
    """
    alloc = solution.allocations
    out: dict[str, float] = {}
    for x in instance.suppliers:
        out[x.id] = (prices[x.id] - x.bid) * alloc[x.id]
    for x in instance.consumers:
        out[x.id] = (x.bid - prices[x.id]) * alloc[x.id]
    for x in instance.transporters:
        out[x.id] = (prices[x.id] - x.bid) * alloc[x.id]
    for x in instance.technologies:
        out[x.id] = (prices[x.id] - x.bid) * alloc[x.id]
    return out


def classify(solution: ClearingSolution, instance: MarketInstance) -> dict:
    """Saturation class per stakeholder.  Zero-capacity stakeholders count as
    dry even though their bound is technically active."""
    out: dict[str, Saturation] = {}
    for kind, x in _iter_stakeholders(instance):
        a = solution.allocations[x.id]
        tol = CLASS_TOL * (1.0 + abs(x.capacity))
        if x.capacity <= tol or a <= tol:
            out[x.id] = Saturation.DRY
        elif a >= x.capacity - tol:
            out[x.id] = Saturation.AT_CAPACITY
        else:
            out[x.id] = Saturation.PARTIAL
    return out


def _iter_stakeholders(instance: MarketInstance):
    for x in instance.suppliers:
        yield "supplier", x
    for x in instance.consumers:
        yield "consumer", x
    for x in instance.transporters:
        yield "transporter", x
    for x in instance.technologies:
        yield "technology", x


@dataclass(frozen=True)
class RevenueStreams:
    """Revenue totals by stakeholder class: consumers negative (payments in),
    providers positive (payments out); the grand total nets to zero."""

    consumer_total: float
    supplier_total: float
    transport_temporal_total: float
    transport_spatial_total: float
    transport_spatiotemporal_total: float
    technology_total: float

    @property
    def grand_total(self) -> float:
        return (
            self.consumer_total
            + self.supplier_total
            + self.transport_temporal_total
            + self.transport_spatial_total
            + self.transport_spatiotemporal_total
            + self.technology_total
        )

    @property
    def magnitude(self) -> float:
        return (
            abs(self.consumer_total)
            + abs(self.supplier_total)
            + abs(self.transport_temporal_total)
            + abs(self.transport_spatial_total)
            + abs(self.transport_spatiotemporal_total)
            + abs(self.technology_total)
        )


def revenue_streams(
    solution: ClearingSolution, prices: dict, instance: MarketInstance
) -> RevenueStreams:
    alloc = solution.allocations
    consumer = -sum(prices[x.id] * alloc[x.id] for x in instance.consumers)
    supplier = sum(prices[x.id] * alloc[x.id] for x in instance.suppliers)
    temporal = spatial = mixed = 0.0
    for x in instance.transporters:
        v = prices[x.id] * alloc[x.id]
        cls = classify_arc(x.arc)
        if cls is ArcClass.TEMPORAL:
            temporal += v
        elif cls is ArcClass.SPATIAL:
            spatial += v
        else:
            mixed += v
    technology = sum(prices[x.id] * alloc[x.id] for x in instance.technologies)
    return RevenueStreams(
        consumer_total=consumer,
        supplier_total=supplier,
        transport_temporal_total=temporal,
        transport_spatial_total=spatial,
        transport_spatiotemporal_total=mixed,
        technology_total=technology,
    )


def aggregation_identity_check(
    solution: ClearingSolution, prices: dict, instance: MarketInstance
) -> np.ndarray:
    """Four residuals: nodal-price-weighted class flows versus the identity-
    price totals, one per stakeholder class.  Algebraic identities, so the
    residuals are float-sum noise on any solution."""
    pi = solution.nodal_prices
    alloc = solution.allocations

    nodal_g = sum(
        pi[(x.node, x.product)] * alloc[x.id] for x in instance.suppliers
    )
    nodal_d = sum(
        pi[(x.node, x.product)] * alloc[x.id] for x in instance.consumers
    )
    nodal_f = sum(
        (pi[(x.arc.receiving, x.product)] - pi[(x.arc.base, x.product)]) * alloc[x.id]
        for x in instance.transporters
    )
    nodal_m = sum(
        (
            sum(g * pi[(x.node, p)] for p, g in x.outputs.items())
            - sum(g * pi[(x.node, p)] for p, g in x.inputs.items())
        )
        * alloc[x.id]
        for x in instance.technologies
    )
    ident_g = sum(prices[x.id] * alloc[x.id] for x in instance.suppliers)
    ident_d = sum(prices[x.id] * alloc[x.id] for x in instance.consumers)
    ident_f = sum(prices[x.id] * alloc[x.id] for x in instance.transporters)
    ident_m = sum(prices[x.id] * alloc[x.id] for x in instance.technologies)
    return np.array(
        [
            abs(nodal_g - ident_g),
            abs(nodal_d - ident_d),
            abs(nodal_f - ident_f),
            abs(nodal_m - ident_m),
        ]
    )


@dataclass(frozen=True)
class StakeholderSettlement:
    id: str
    kind: str  # supplier | consumer | transporter | technology
    bid: float
    capacity: float
    allocation: float
    price: float
    lambda_bar: float
    profit: float
    saturation: Saturation


@dataclass(frozen=True)
class SettlementReport:
    stakeholders: tuple[StakeholderSettlement, ...]
    streams: RevenueStreams
    surplus: float

    def by_kind(self, kind: str) -> tuple[StakeholderSettlement, ...]:
        return tuple(s for s in self.stakeholders if s.kind == kind)

    def row(self, stakeholder_id: str) -> StakeholderSettlement:
        for s in self.stakeholders:
            if s.id == stakeholder_id:
                return s
        raise KeyError(stakeholder_id)


def settle(solution: ClearingSolution, instance: MarketInstance) -> SettlementReport:
    """Full settlement: prices, profits, classes, and stream aggregates."""
    prices = stakeholder_prices(solution, instance)
    profits = stakeholder_profits(solution, prices, instance)
    classes = classify(solution, instance)
    rows = tuple(
        StakeholderSettlement(
            id=x.id,
            kind=kind,
            bid=x.bid,
            capacity=x.capacity,
            allocation=solution.allocations[x.id],
            price=prices[x.id],
            lambda_bar=solution.capacity_duals.get(x.id, 0.0),
            profit=profits[x.id],
            saturation=classes[x.id],
        )
        for kind, x in _iter_stakeholders(instance)
    )
    streams = revenue_streams(solution, prices, instance)
    return SettlementReport(stakeholders=rows, streams=streams, surplus=solution.surplus)
