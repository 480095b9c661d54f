"""Stakeholder declarations, the market instance container, validation, and
subset queries.

Four stakeholder classes participate: suppliers and consumers sit at a
space-time node and offer/request one product; transport providers sit on an
arc and move one product between its endpoints; technology providers sit at a
node and convert input products into output products at fixed yields relative
to a reference input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .stgraph import Arc, Graph, SpaceTimeNode, TimeGrid
from .stgraph import UnknownNode as _UnknownNode


@dataclass(frozen=True)
class Supplier:
    id: str
    node: SpaceTimeNode
    product: str
    capacity: float
    bid: float  # may be negative (tipping fee: supplier pays for removal)


@dataclass(frozen=True)
class Consumer:
    id: str
    node: SpaceTimeNode
    product: str
    capacity: float
    bid: float


@dataclass(frozen=True)
class TransportProvider:
    id: str
    arc: Arc
    product: str
    capacity: float
    bid: float  # >= 0; negative transport bids have no practical reading


@dataclass(frozen=True)
class TechnologyProvider:
    """Converts input products into output products.

    `inputs` and `outputs` map product -> yield per unit of the reference
    product; the reference is an input with yield exactly 1.
    """

    id: str
    node: SpaceTimeNode
    inputs: dict[str, float]
    outputs: dict[str, float]
    reference: str
    capacity: float
    bid: float


@dataclass(frozen=True)
class MarketInstance:
    products: tuple[str, ...]
    grid: TimeGrid
    graph: Graph
    suppliers: tuple[Supplier, ...]
    consumers: tuple[Consumer, ...]
    transporters: tuple[TransportProvider, ...]
    technologies: tuple[TechnologyProvider, ...]
    metadata: dict = field(default_factory=dict, compare=False, repr=False)

    def stakeholder_count(self) -> int:
        return (
            len(self.suppliers)
            + len(self.consumers)
            + len(self.transporters)
            + len(self.technologies)
        )


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


class UnknownProduct(ValueError):
    pass


class InvalidInstance(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        lines = "; ".join(f"{v.code}[{v.subject}]: {v.message}" for v in report.violations)
        super().__init__(f"invalid market instance: {lines}")


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def validate(instance: MarketInstance) -> ValidationReport:
    """Check every type invariant, dangling reference, and duplicate id.

    Report-style: returns all violations instead of raising on the first.
    """
    out: list[Violation] = []
    add = lambda code, subject, msg: out.append(Violation(code, subject, msg))

    products = set(instance.products)
    if len(products) != len(instance.products):
        add("DuplicateProduct", "products", "product ids must be unique")
    nodes = set(instance.graph.nodes)
    arcs = set(instance.graph.arcs)
    n_times = len(instance.grid)

    def check_node(subject: str, s: SpaceTimeNode):
        if s.node not in nodes:
            add("UnknownNode", subject, f"node {s.node!r} not registered")
        if not (0 <= s.time < n_times):
            add("TimeOutOfRange", subject, f"time index {s.time} outside grid")

    def check_numbers(subject: str, capacity: float, bid: float):
        if not _finite(capacity) or not _finite(bid):
            add("NonFiniteNumber", subject, "capacity and bid must be finite floats")
            return
        if capacity < 0:
            add("NegativeCapacity", subject, f"capacity {capacity} < 0")

    seen_ids: set[str] = set()

    def check_id(subject: str):
        if subject in seen_ids:
            add("DuplicateId", subject, "stakeholder id reused")
        seen_ids.add(subject)

    for sup in instance.suppliers:
        check_id(sup.id)
        check_node(sup.id, sup.node)
        check_numbers(sup.id, sup.capacity, sup.bid)
        if sup.product not in products:
            add("UnknownProduct", sup.id, f"product {sup.product!r} not registered")
    for con in instance.consumers:
        check_id(con.id)
        check_node(con.id, con.node)
        check_numbers(con.id, con.capacity, con.bid)
        if con.product not in products:
            add("UnknownProduct", con.id, f"product {con.product!r} not registered")
    for tra in instance.transporters:
        check_id(tra.id)
        check_node(tra.id, tra.arc.base)
        check_node(tra.id, tra.arc.receiving)
        check_numbers(tra.id, tra.capacity, tra.bid)
        if tra.product not in products:
            add("UnknownProduct", tra.id, f"product {tra.product!r} not registered")
        if tra.arc not in arcs:
            add("UnknownArc", tra.id, "transporter arc not present in the graph")
        if _finite(tra.bid) and tra.bid < 0:
            add("NegativeTransportBid", tra.id, f"transport bid {tra.bid} < 0")
    for tec in instance.technologies:
        check_id(tec.id)
        check_node(tec.id, tec.node)
        check_numbers(tec.id, tec.capacity, tec.bid)
        if _finite(tec.bid) and tec.bid < 0:
            add("NegativeTechnologyBid", tec.id, f"technology bid {tec.bid} < 0")
        if not tec.inputs or not tec.outputs:
            add("EmptyYieldSet", tec.id, "inputs and outputs must both be non-empty")
        if set(tec.inputs) & set(tec.outputs):
            add("OverlappingProducts", tec.id, "inputs and outputs must be disjoint")
        for p, g in list(tec.inputs.items()) + list(tec.outputs.items()):
            if p not in products:
                add("UnknownProduct", tec.id, f"product {p!r} not registered")
            if not _finite(g) or g <= 0:
                add("NonPositiveYield", tec.id, f"yield for {p!r} must be > 0")
        if tec.reference not in tec.inputs:
            add("ReferenceNotInInputs", tec.id, f"reference {tec.reference!r} not an input")
        elif tec.inputs[tec.reference] != 1.0:
            add(
                "ReferenceYieldNotUnity",
                tec.id,
                f"reference yield is {tec.inputs[tec.reference]}, must be exactly 1",
            )
    return ValidationReport(tuple(out))


class Participants(NamedTuple):
    suppliers: tuple[Supplier, ...]
    consumers: tuple[Consumer, ...]
    transport_in: tuple[TransportProvider, ...]
    transport_out: tuple[TransportProvider, ...]
    tech_gen: tuple[TechnologyProvider, ...]
    tech_con: tuple[TechnologyProvider, ...]


def stakeholders_at(instance: MarketInstance, s: SpaceTimeNode, p: str) -> Participants:
    """All stakeholders touching product `p` at space-time node `s`.

    A technology shows up under tech_gen for each of its output products and
    under tech_con for each input product.
    """
    if s.node not in set(instance.graph.nodes) or not (0 <= s.time < len(instance.grid)):
        raise _UnknownNode(f"space-time node {s} not in instance")
    if p not in set(instance.products):
        raise UnknownProduct(f"product {p!r} not registered")
    sups = tuple(x for x in instance.suppliers if x.node == s and x.product == p)
    cons = tuple(x for x in instance.consumers if x.node == s and x.product == p)
    tin = tuple(x for x in instance.transporters if x.arc.receiving == s and x.product == p)
    tout = tuple(x for x in instance.transporters if x.arc.base == s and x.product == p)
    tgen = tuple(x for x in instance.technologies if x.node == s and p in x.outputs)
    tcon = tuple(x for x in instance.technologies if x.node == s and p in x.inputs)
    key = lambda x: x.id
    return Participants(
        tuple(sorted(sups, key=key)),
        tuple(sorted(cons, key=key)),
        tuple(sorted(tin, key=key)),
        tuple(sorted(tout, key=key)),
        tuple(sorted(tgen, key=key)),
        tuple(sorted(tcon, key=key)),
    )


class SignPartition(NamedTuple):
    suppliers_plus: tuple[Supplier, ...]
    suppliers_minus: tuple[Supplier, ...]
    consumers_plus: tuple[Consumer, ...]
    consumers_minus: tuple[Consumer, ...]


def sign_partition(instance: MarketInstance) -> SignPartition:
    """Split suppliers/consumers by bid sign; bid == 0 goes to the plus set."""
    key = lambda x: x.id
    return SignPartition(
        tuple(sorted((x for x in instance.suppliers if x.bid >= 0), key=key)),
        tuple(sorted((x for x in instance.suppliers if x.bid < 0), key=key)),
        tuple(sorted((x for x in instance.consumers if x.bid >= 0), key=key)),
        tuple(sorted((x for x in instance.consumers if x.bid < 0), key=key)),
    )
