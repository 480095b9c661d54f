"""Assembly of the clearing LP and its explicit dual from a market instance.

The primal maximizes total surplus subject to one product-balance equality per
(space-time node, product) pair that has at least one participant, with box
bounds [0, capacity] on every allocation.  Its row duals are the nodal
clearing prices.  The explicit dual is assembled in equality form (slack
variables added) purely for cross-validation: production settlement always
reads duals off the solved primal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .market_model import InvalidInstance, MarketInstance, validate
from .stgraph import SpaceTimeNode

RowKey = tuple[SpaceTimeNode, str]


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """Equality-constrained LP with per-variable box bounds.

    A lower bound of -inf flags a free column (used by the dual's price
    variables); clearing primals always use lower == 0 and finite uppers.
    """

    sense: str  # "max" or "min"
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    col_labels: tuple[str, ...]
    row_labels: tuple

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class VariableIndex:
    """Deterministic bijections stakeholder-id <-> column and (s, p) <-> row.

    Column order is class-then-id lexicographic (suppliers, consumers,
    transporters, technologies); row order is (time, node, product).
    """

    cols: tuple[str, ...]
    rows: tuple[RowKey, ...]
    col_of: dict
    row_of: dict


def _row_sort_key(key: RowKey):
    s, p = key
    return (s.time, s.node, p)


def assemble_primal(instance: MarketInstance) -> tuple[LinearProgram, VariableIndex]:
    """Build the surplus-maximization LP.

    Rows exist only for (s, p) pairs with at least one participating term;
    empty pairs would create singular 0 = 0 rows and their prices are
    reported as undefined instead.
    """
    report = validate(instance)
    if not report.ok:
        raise InvalidInstance(report)

    suppliers = sorted(instance.suppliers, key=lambda x: x.id)
    consumers = sorted(instance.consumers, key=lambda x: x.id)
    transporters = sorted(instance.transporters, key=lambda x: x.id)
    technologies = sorted(instance.technologies, key=lambda x: x.id)

    row_keys: set[RowKey] = set()
    for x in suppliers:
        row_keys.add((x.node, x.product))
    for x in consumers:
        row_keys.add((x.node, x.product))
    for x in transporters:
        row_keys.add((x.arc.base, x.product))
        row_keys.add((x.arc.receiving, x.product))
    for x in technologies:
        for p in x.inputs:
            row_keys.add((x.node, p))
        for p in x.outputs:
            row_keys.add((x.node, p))

    rows = tuple(sorted(row_keys, key=_row_sort_key))
    row_of = {k: i for i, k in enumerate(rows)}

    cols: list[str] = []
    c: list[float] = []
    upper: list[float] = []
    data: list[float] = []
    ri: list[int] = []
    ci: list[int] = []

    def add_col(label: str, cost: float, cap: float, entries):
        j = len(cols)
        cols.append(label)
        c.append(cost)
        upper.append(cap)
        for row_key, coef in entries:
            ri.append(row_of[row_key])
            ci.append(j)
            data.append(coef)

    for x in suppliers:
        add_col(x.id, -x.bid, x.capacity, [((x.node, x.product), 1.0)])
    for x in consumers:
        add_col(x.id, x.bid, x.capacity, [((x.node, x.product), -1.0)])
    for x in transporters:
        add_col(
            x.id,
            -x.bid,
            x.capacity,
            [((x.arc.base, x.product), -1.0), ((x.arc.receiving, x.product), 1.0)],
        )
    for x in technologies:
        entries = [((x.node, p), -g) for p, g in sorted(x.inputs.items())]
        entries += [((x.node, p), g) for p, g in sorted(x.outputs.items())]
        add_col(x.id, -x.bid, x.capacity, entries)

    n = len(cols)
    m = len(rows)
    A = sp.csr_matrix(
        (np.asarray(data), (np.asarray(ri, dtype=int), np.asarray(ci, dtype=int))),
        shape=(m, n),
    )
    lp = LinearProgram(
        sense="max",
        c=np.asarray(c, dtype=float),
        A=A,
        b=np.zeros(m),
        lower=np.zeros(n),
        upper=np.asarray(upper, dtype=float),
        col_labels=tuple(cols),
        row_labels=rows,
    )
    index = VariableIndex(
        cols=tuple(cols),
        rows=rows,
        col_of={label: j for j, label in enumerate(cols)},
        row_of=dict(row_of),
    )
    return lp, index


def assemble_dual(instance: MarketInstance) -> LinearProgram:
    """Explicit dual in equality form: minimize capacity-weighted marginal
    profits subject to one constraint per stakeholder.

    Variables: one free price per priced (s, p) pair, one marginal-profit
    variable per stakeholder, and one slack per stakeholder converting the
    inequality to an equality.
    """
    primal, index = assemble_primal(instance)

    suppliers = sorted(instance.suppliers, key=lambda x: x.id)
    consumers = sorted(instance.consumers, key=lambda x: x.id)
    transporters = sorted(instance.transporters, key=lambda x: x.id)
    technologies = sorted(instance.technologies, key=lambda x: x.id)

    cols: list[str] = []
    c: list[float] = []
    lower: list[float] = []
    upper: list[float] = []
    col_of: dict[str, int] = {}

    def add_col(label: str, cost: float, lo: float, hi: float) -> int:
        j = len(cols)
        cols.append(label)
        c.append(cost)
        lower.append(lo)
        upper.append(hi)
        col_of[label] = j
        return j

    pi_col: dict[RowKey, int] = {}
    for key in index.rows:
        s, p = key
        pi_col[key] = add_col(f"pi[{s.node},{s.time},{p}]", 0.0, -np.inf, np.inf)

    stakeholders = (
        [("g", x) for x in suppliers]
        + [("d", x) for x in consumers]
        + [("f", x) for x in transporters]
        + [("xi", x) for x in technologies]
    )
    lam_col = {x.id: add_col(f"lam[{x.id}]", x.capacity, 0.0, np.inf) for _, x in stakeholders}
    slk_col = {x.id: add_col(f"slk[{x.id}]", 0.0, 0.0, np.inf) for _, x in stakeholders}

    data: list[float] = []
    ri: list[int] = []
    ci: list[int] = []
    b: list[float] = []
    row_labels: list[str] = []

    def add_row(label: str, rhs: float, entries):
        i = len(row_labels)
        row_labels.append(label)
        b.append(rhs)
        for j, coef in entries:
            ri.append(i)
            ci.append(j)
            data.append(coef)

    for kind, x in stakeholders:
        if kind == "g":
            # pi - lam + slack = bid  (pi - lam <= bid)
            add_row(
                x.id,
                x.bid,
                [(pi_col[(x.node, x.product)], 1.0), (lam_col[x.id], -1.0), (slk_col[x.id], 1.0)],
            )
        elif kind == "d":
            # pi + lam - slack = bid  (pi + lam >= bid)
            add_row(
                x.id,
                x.bid,
                [(pi_col[(x.node, x.product)], 1.0), (lam_col[x.id], 1.0), (slk_col[x.id], -1.0)],
            )
        elif kind == "f":
            add_row(
                x.id,
                x.bid,
                [
                    (pi_col[(x.arc.receiving, x.product)], 1.0),
                    (pi_col[(x.arc.base, x.product)], -1.0),
                    (lam_col[x.id], -1.0),
                    (slk_col[x.id], 1.0),
                ],
            )
        else:
            entries = [(pi_col[(x.node, p)], g) for p, g in sorted(x.outputs.items())]
            entries += [(pi_col[(x.node, p)], -g) for p, g in sorted(x.inputs.items())]
            entries += [(lam_col[x.id], -1.0), (slk_col[x.id], 1.0)]
            add_row(x.id, x.bid, entries)

    m = len(row_labels)
    n = len(cols)
    A = sp.csr_matrix(
        (np.asarray(data), (np.asarray(ri, dtype=int), np.asarray(ci, dtype=int))),
        shape=(m, n),
    )
    return LinearProgram(
        sense="min",
        c=np.asarray(c, dtype=float),
        A=A,
        b=np.asarray(b, dtype=float),
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        col_labels=tuple(cols),
        row_labels=tuple(row_labels),
    )


def row_residuals(lp: LinearProgram, x: np.ndarray) -> np.ndarray:
    """Per-row |A x - b|, the audit-facing feasibility measure."""
    x = np.asarray(x, dtype=float)
    if x.shape != (lp.n_cols,):
        raise DimensionMismatch(f"x has shape {x.shape}, LP has {lp.n_cols} columns")
    if lp.n_rows == 0:
        return np.zeros(0)
    return np.abs(lp.A @ x - lp.b)
