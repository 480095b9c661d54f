"""Space-time multi-product market clearing with settlement and property audits."""

from .stgraph import (
    Arc,
    ArcClass,
    Graph,
    SpaceTimeNode,
    TimeGrid,
    build_graph,
    classify_arc,
)
from .market_model import (
    Consumer,
    MarketInstance,
    Supplier,
    TechnologyProvider,
    TransportProvider,
    sign_partition,
    stakeholders_at,
    validate,
)
from .clearing_lp import LinearProgram, VariableIndex, assemble_dual, assemble_primal, row_residuals
from .simplex_solver import (
    KktReport,
    SolverConfig,
    SolverResult,
    SolverStatus,
    capacity_duals,
    solve,
    verify_kkt,
)
from .settlement import (
    ClearingSolution,
    Saturation,
    SettlementReport,
    clear,
    settle,
    stakeholder_prices,
    stakeholder_profits,
)
from .property_auditor import AuditReport, CheckResult, run_full_audit
from .scenario_gen import (
    CaseParams,
    DemandCurve,
    Variant,
    generate_waste_case,
    restrict_to_qss,
    restrict_to_snapshot,
)
from .cli_io import load_instance, save_instance

__version__ = "0.1.0"
