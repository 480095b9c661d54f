"""Instance/solution serialization and the command-line surface.

Instances travel as versioned JSON (human-editable, schema-checked on load);
numeric outputs land as fixed-format CSV so runs diff cleanly and plot
directly.  Subcommands: `generate` builds a waste-case variant, `clear`
solves and settles an instance, `audit` runs the property checks, and
`compare` solves an instance against its quasi-steady-state restriction.

Exit codes: 0 success (audit: all checks pass), 2 usage error, 3 infeasible
or unbounded clearing, 4 iteration limit; other failures exit 1.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .clearing_lp import assemble_primal
from .market_model import (
    Consumer,
    InvalidInstance,
    MarketInstance,
    Supplier,
    TechnologyProvider,
    TransportProvider,
    validate,
)
from .property_auditor import AuditReport, run_full_audit
from .scenario_gen import CaseParams, Variant, generate_waste_case, restrict_to_qss
from .settlement import ClearingSolution, SettlementReport, clear, settle
from .simplex_solver import SolverConfig, SolverResult, SolverStatus, capacity_duals
from .stgraph import Arc, SpaceTimeNode, TimeGrid, build_graph

log = logging.getLogger("stclear.cli")

SCHEMA_VERSION = 1
_FMT = "{:.9f}"


class SchemaError(ValueError):
    """Structurally bad instance document; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ---------------------------------------------------------------------------
# instance JSON


def _expect(obj, key, types, path, required=True, default=None):
    if key not in obj:
        if required:
            raise SchemaError(f"{path}.{key}", "missing required field")
        return default
    val = obj[key]
    if not isinstance(val, types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise SchemaError(f"{path}.{key}", f"expected {tn}, got {type(val).__name__}")
    return val


def _check_keys(obj, allowed, path):
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}", "unknown field")


def _number(obj, key, path, required=True, default=None):
    v = _expect(obj, key, (int, float), path, required, default)
    if isinstance(v, bool):
        raise SchemaError(f"{path}.{key}", "expected number, got bool")
    return float(v) if v is not None else None


def instance_to_dict(instance: MarketInstance) -> dict:
    def st(node: SpaceTimeNode):
        return node.node, node.time

    arcs = sorted(
        instance.graph.arcs,
        key=lambda a: (a.base.time, a.base.node, a.receiving.time, a.receiving.node),
    )
    return {
        "version": SCHEMA_VERSION,
        "products": sorted(instance.products),
        "times": list(instance.grid.times),
        "time_step": instance.grid.step,
        "nodes": list(instance.graph.nodes),
        "arcs": [
            {
                "base_node": a.base.node,
                "base_time": a.base.time,
                "recv_node": a.receiving.node,
                "recv_time": a.receiving.time,
            }
            for a in arcs
        ],
        "suppliers": [
            {
                "id": x.id,
                "node": st(x.node)[0],
                "time": st(x.node)[1],
                "product": x.product,
                "capacity": x.capacity,
                "bid": x.bid,
            }
            for x in sorted(instance.suppliers, key=lambda s: s.id)
        ],
        "consumers": [
            {
                "id": x.id,
                "node": st(x.node)[0],
                "time": st(x.node)[1],
                "product": x.product,
                "capacity": x.capacity,
                "bid": x.bid,
            }
            for x in sorted(instance.consumers, key=lambda s: s.id)
        ],
        "transporters": [
            {
                "id": x.id,
                "base_node": x.arc.base.node,
                "base_time": x.arc.base.time,
                "recv_node": x.arc.receiving.node,
                "recv_time": x.arc.receiving.time,
                "product": x.product,
                "capacity": x.capacity,
                "bid": x.bid,
            }
            for x in sorted(instance.transporters, key=lambda s: s.id)
        ],
        "technologies": [
            {
                "id": x.id,
                "node": st(x.node)[0],
                "time": st(x.node)[1],
                "reference": x.reference,
                "inputs": dict(sorted(x.inputs.items())),
                "outputs": dict(sorted(x.outputs.items())),
                "capacity": x.capacity,
                "bid": x.bid,
            }
            for x in sorted(instance.technologies, key=lambda s: s.id)
        ],
        "metadata": instance.metadata,
    }


def instance_from_dict(doc: dict) -> MarketInstance:
    if not isinstance(doc, dict):
        raise SchemaError("$", f"expected object, got {type(doc).__name__}")
    _check_keys(
        doc,
        {
            "version",
            "products",
            "times",
            "time_step",
            "nodes",
            "arcs",
            "suppliers",
            "consumers",
            "transporters",
            "technologies",
            "metadata",
        },
        "$",
    )
    version = _expect(doc, "version", int, "$")
    if version != SCHEMA_VERSION:
        raise SchemaError("$.version", f"unsupported version {version}")
    products = _expect(doc, "products", list, "$")
    times = _expect(doc, "times", list, "$")
    step = _number(doc, "time_step", "$", required=False, default=1.0)
    nodes = _expect(doc, "nodes", list, "$")
    for i, p in enumerate(products):
        if not isinstance(p, str):
            raise SchemaError(f"$.products[{i}]", "expected string")
    for i, n in enumerate(nodes):
        if not isinstance(n, str):
            raise SchemaError(f"$.nodes[{i}]", "expected string")
    grid = TimeGrid(tuple(float(t) for t in times), step)

    def parse_st(obj, path) -> SpaceTimeNode:
        node = _expect(obj, "node", str, path)
        time = _expect(obj, "time", int, path)
        return SpaceTimeNode(node, time)

    arcs = []
    for i, a in enumerate(_expect(doc, "arcs", list, "$")):
        path = f"$.arcs[{i}]"
        _check_keys(a, {"base_node", "base_time", "recv_node", "recv_time"}, path)
        arcs.append(
            Arc(
                SpaceTimeNode(_expect(a, "base_node", str, path), _expect(a, "base_time", int, path)),
                SpaceTimeNode(_expect(a, "recv_node", str, path), _expect(a, "recv_time", int, path)),
            )
        )

    suppliers = []
    for i, s in enumerate(_expect(doc, "suppliers", list, "$")):
        path = f"$.suppliers[{i}]"
        _check_keys(s, {"id", "node", "time", "product", "capacity", "bid"}, path)
        suppliers.append(
            Supplier(
                _expect(s, "id", str, path),
                parse_st(s, path),
                _expect(s, "product", str, path),
                _number(s, "capacity", path),
                _number(s, "bid", path),
            )
        )
    consumers = []
    for i, s in enumerate(_expect(doc, "consumers", list, "$")):
        path = f"$.consumers[{i}]"
        _check_keys(s, {"id", "node", "time", "product", "capacity", "bid"}, path)
        consumers.append(
            Consumer(
                _expect(s, "id", str, path),
                parse_st(s, path),
                _expect(s, "product", str, path),
                _number(s, "capacity", path),
                _number(s, "bid", path),
            )
        )
    transporters = []
    for i, s in enumerate(_expect(doc, "transporters", list, "$")):
        path = f"$.transporters[{i}]"
        _check_keys(
            s,
            {"id", "base_node", "base_time", "recv_node", "recv_time", "product", "capacity", "bid"},
            path,
        )
        arc = Arc(
            SpaceTimeNode(_expect(s, "base_node", str, path), _expect(s, "base_time", int, path)),
            SpaceTimeNode(_expect(s, "recv_node", str, path), _expect(s, "recv_time", int, path)),
        )
        transporters.append(
            TransportProvider(
                _expect(s, "id", str, path),
                arc,
                _expect(s, "product", str, path),
                _number(s, "capacity", path),
                _number(s, "bid", path),
            )
        )
    technologies = []
    for i, s in enumerate(_expect(doc, "technologies", list, "$")):
        path = f"$.technologies[{i}]"
        _check_keys(
            s, {"id", "node", "time", "reference", "inputs", "outputs", "capacity", "bid"}, path
        )
        inputs = _expect(s, "inputs", dict, path)
        outputs = _expect(s, "outputs", dict, path)
        for box, name in ((inputs, "inputs"), (outputs, "outputs")):
            for k, v in box.items():
                if not isinstance(k, str) or isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise SchemaError(f"{path}.{name}.{k}", "expected product -> number map")
        technologies.append(
            TechnologyProvider(
                _expect(s, "id", str, path),
                parse_st(s, path),
                {k: float(v) for k, v in inputs.items()},
                {k: float(v) for k, v in outputs.items()},
                _expect(s, "reference", str, path),
                _number(s, "capacity", path),
                _number(s, "bid", path),
            )
        )

    graph = build_graph(nodes, grid, arcs)
    metadata = _expect(doc, "metadata", dict, "$", required=False, default={}) or {}
    return MarketInstance(
        products=tuple(sorted(set(products))),
        grid=grid,
        graph=graph,
        suppliers=tuple(suppliers),
        consumers=tuple(consumers),
        transporters=tuple(transporters),
        technologies=tuple(technologies),
        metadata=metadata,
    )


def save_instance(instance: MarketInstance, path: str | Path) -> None:
    doc = instance_to_dict(instance)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_instance(path: str | Path) -> MarketInstance:
    """Parse, schema-check, build, and validate; raises OSError, SchemaError,
    or InvalidInstance."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"$ (line {e.lineno}, col {e.colno})", e.msg) from e
    instance = instance_from_dict(doc)
    report = validate(instance)
    if not report.ok:
        raise InvalidInstance(report)
    return instance


# ---------------------------------------------------------------------------
# solution files


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_solution(
    outdir: str | Path,
    instance: MarketInstance,
    solution: ClearingSolution,
    settlement: SettlementReport,
    audit: AuditReport | None = None,
) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = _FMT.format

    _write_csv(
        out / "allocations.csv",
        ["stakeholder", "class", "allocation", "capacity", "saturation"],
        [
            [r.id, r.kind, fmt(r.allocation), fmt(r.capacity), r.saturation.value]
            for r in settlement.stakeholders
        ],
    )
    price_rows = sorted(
        solution.nodal_prices.items(), key=lambda kv: (kv[0][0].time, kv[0][0].node, kv[0][1])
    )
    _write_csv(
        out / "prices.csv",
        ["node", "time", "product", "price"],
        [
            [s.node, fmt(instance.grid.times[s.time]), p, fmt(v)]
            for (s, p), v in price_rows
        ],
    )
    _write_csv(
        out / "settlement.csv",
        ["stakeholder", "price", "profit"],
        [[r.id, fmt(r.price), fmt(r.profit)] for r in settlement.stakeholders],
    )
    streams = settlement.streams
    rows = [
        ["Consumer total", fmt(streams.consumer_total)],
        ["Supplier total", fmt(streams.supplier_total)],
        ["Transport (temporal) total", fmt(streams.transport_temporal_total)],
        ["Transport (spatial) total", fmt(streams.transport_spatial_total)],
    ]
    if streams.transport_spatiotemporal_total != 0.0 or any(
        _is_spatiotemporal(x) for x in instance.transporters
    ):
        rows.append(
            ["Transport (spatiotemporal) total", fmt(streams.transport_spatiotemporal_total)]
        )
    rows += [
        ["Technologies total", fmt(streams.technology_total)],
        ["Grand Total", fmt(streams.grand_total)],
    ]
    _write_csv(out / "streams.csv", ["stream", "total"], rows)
    if audit is not None:
        (out / "audit.json").write_text(audit_report_json(audit))


def _is_spatiotemporal(x: TransportProvider) -> bool:
    a = x.arc
    return a.base.node != a.receiving.node and a.base.time != a.receiving.time


def audit_report_json(report: AuditReport) -> str:
    doc = {
        "status": report.status,
        "checks": [
            {
                "name": c.name,
                "passed": c.passed,
                "residual": None if not np.isfinite(c.residual) else c.residual,
                "offender": c.offender,
                "detail": c.detail,
            }
            for c in report.checks
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_solution(outdir: str | Path, instance: MarketInstance) -> ClearingSolution:
    """Rebuild a clearing solution from allocations.csv and prices.csv; used
    by `audit --solution-dir` to check externally supplied results."""
    out = Path(outdir)
    lp, index = assemble_primal(instance)
    x = np.zeros(lp.n_cols)
    with open(out / "allocations.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            who = row["stakeholder"]
            if who not in index.col_of:
                raise SchemaError("allocations.csv", f"unknown stakeholder {who!r}")
            x[index.col_of[who]] = float(row["allocation"])
    y = np.zeros(lp.n_rows)
    time_of = {_FMT.format(t): i for i, t in enumerate(instance.grid.times)}
    with open(out / "prices.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["time"] not in time_of:
                raise SchemaError("prices.csv", f"unknown time {row['time']!r}")
            key = (SpaceTimeNode(row["node"], time_of[row["time"]]), row["product"])
            if key not in index.row_of:
                raise SchemaError(
                    "prices.csv", f"no clearing row at {(row['node'], row['time'], row['product'])}"
                )
            y[index.row_of[key]] = float(row["price"])
    d_int = -lp.c - (lp.A.T @ y if lp.n_rows else 0.0)
    result = SolverResult(
        status=SolverStatus.OPTIMAL,
        x=x,
        y=y,
        reduced_costs=-np.asarray(d_int, dtype=float),
        objective=float(lp.c @ x),
        iterations=0,
    )
    return ClearingSolution(
        status=SolverStatus.OPTIMAL,
        allocations={label: float(x[j]) for label, j in index.col_of.items()},
        nodal_prices={key: float(y[i]) for key, i in index.row_of.items()},
        capacity_duals=capacity_duals(lp, result, index),
        surplus=float(lp.c @ x),
        lp=lp,
        result=result,
        index=index,
    )


# ---------------------------------------------------------------------------
# CLI


def _cmd_generate(args) -> int:
    params = CaseParams(
        farms=args.farms,
        processors=args.processors,
        horizon=args.hours,
        seed=args.seed,
        variant=Variant(args.variant),
    )
    instance = generate_waste_case(params)
    save_instance(instance, args.out)
    print(f"wrote {args.out}: {instance.stakeholder_count()} stakeholders, "
          f"{instance.graph.st_node_count} space-time nodes")
    return 0


def _solve_cfg(args) -> SolverConfig:
    kw = {}
    if getattr(args, "tol", None) is not None:
        kw["feasibility_tolerance"] = args.tol
        kw["optimality_tolerance"] = args.tol
    if getattr(args, "max_iters", None) is not None:
        kw["max_iterations"] = args.max_iters
    return SolverConfig(**kw)


def _cmd_clear(args) -> int:
    instance = load_instance(args.instance)
    solution = clear(instance, _solve_cfg(args))
    if solution.status in (SolverStatus.INFEASIBLE, SolverStatus.UNBOUNDED):
        print(f"clearing failed: {solution.status.value}", file=sys.stderr)
        return 3
    if solution.status is SolverStatus.ITERATION_LIMIT:
        print("clearing failed: iteration limit", file=sys.stderr)
        return 4
    settlement = settle(solution, instance)
    write_solution(args.out_dir, instance, solution, settlement)
    print(f"cleared: surplus {_FMT.format(solution.surplus)}; outputs in {args.out_dir}")
    return 0


def _cmd_audit(args) -> int:
    instance = load_instance(args.instance)
    tol = 1e-6 / 100.0 if args.strict else 1e-6
    solution = None
    if args.solution_dir:
        solution = load_solution(args.solution_dir, instance)
    report = run_full_audit(instance, _solve_cfg(args), solution=solution, tol=tol)
    for c in report.checks:
        mark = "PASS" if c.passed else "FAIL"
        extra = f" [{c.offender}]" if c.offender and not c.passed else ""
        print(f"{mark} {c.name}: residual {c.residual:.3e}{extra}")
    print(f"audit: {report.status}")
    if args.out:
        Path(args.out).write_text(audit_report_json(report))
    return 0 if report.passed else 1


def _compare_one(instance_path: str, outdir: Path, cfg: SolverConfig) -> int:
    instance = load_instance(instance_path)
    st = clear(instance, cfg)
    qss = clear(restrict_to_qss(instance), cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    fmt = _FMT.format
    _write_csv(
        outdir / "surplus.csv",
        ["case", "surplus", "status"],
        [
            ["ST", fmt(st.surplus) if st.status is SolverStatus.OPTIMAL else "", st.status.value],
            ["QSS", fmt(qss.surplus) if qss.status is SolverStatus.OPTIMAL else "", qss.status.value],
        ],
    )
    rows = []
    if st.status is SolverStatus.OPTIMAL and qss.status is SolverStatus.OPTIMAL:
        keys = sorted(
            set(st.nodal_prices) & set(qss.nodal_prices),
            key=lambda k: (k[0].time, k[0].node, k[1]),
        )
        for key in keys:
            s, p = key
            a = st.nodal_prices[key]
            b = qss.nodal_prices[key]
            # delta = price without temporal transport minus price with it:
            # positive at demand peaks when storage shaves prices
            rows.append(
                [s.node, fmt(instance.grid.times[s.time]), p, fmt(a), fmt(b), fmt(b - a)]
            )
    _write_csv(
        outdir / "price_delta.csv",
        ["node", "time", "product", "price_st", "price_qss", "delta"],
        rows,
    )
    return 0 if st.status is SolverStatus.OPTIMAL and qss.status is SolverStatus.OPTIMAL else 3


def _cmd_compare(args) -> int:
    cfg = _solve_cfg(args)
    out = Path(args.out)
    jobs = []
    for path in args.instance:
        stem = Path(path).stem
        jobs.append((path, out / stem))
    if args.jobs > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_compare_worker, [(p, str(d)) for p, d in jobs]))
    else:
        codes = [_compare_one(p, d, cfg) for p, d in jobs]
    for (path, d), code in zip(jobs, codes):
        print(f"compared {path} -> {d} (status {code})")
    return max(codes) if codes else 0


def _compare_worker(job: tuple[str, str]) -> int:
    path, outdir = job
    return _compare_one(path, Path(outdir), SolverConfig())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stclear",
        description="Clear, settle, and audit space-time multi-product markets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a waste-to-energy case instance")
    gen.add_argument("--farms", type=int, default=8)
    gen.add_argument("--processors", type=int, default=4)
    gen.add_argument("--hours", type=int, default=24)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument(
        "--variant", choices=[v.value for v in Variant], default="base"
    )
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_generate)

    clr = sub.add_parser("clear", help="solve an instance and write solution files")
    clr.add_argument("--instance", required=True)
    clr.add_argument("--out-dir", required=True)
    clr.add_argument("--tol", type=float, default=None)
    clr.add_argument("--max-iters", type=int, default=None)
    clr.set_defaults(func=_cmd_clear)

    aud = sub.add_parser("audit", help="run the economic property audit")
    aud.add_argument("--instance", required=True)
    aud.add_argument("--strict", action="store_true", help="tighten tolerances 100x")
    aud.add_argument("--solution-dir", default=None,
                     help="audit a previously written solution instead of re-solving")
    aud.add_argument("--out", default=None, help="also write audit.json here")
    aud.add_argument("--tol", type=float, default=None, help=argparse.SUPPRESS)
    aud.add_argument("--max-iters", type=int, default=None, help=argparse.SUPPRESS)
    aud.set_defaults(func=_cmd_audit)

    cmp_ = sub.add_parser("compare", help="solve space-time vs quasi-steady-state")
    cmp_.add_argument("--instance", action="append", required=True)
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.add_argument("--tol", type=float, default=None)
    cmp_.add_argument("--max-iters", type=int, default=None)
    cmp_.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("STCLEAR_LOG", "").upper()
    if level:
        logging.basicConfig(level=getattr(logging, level, logging.INFO))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, SchemaError, InvalidInstance) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
