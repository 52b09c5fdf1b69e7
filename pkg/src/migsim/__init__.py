"""Trace-driven simulator and policy library for MIG-partitioned GPU clusters."""

from . import commsim, errors, mig, scheduler, simcore, sweep, workload
from .mig import (
    GpuLayout,
    MigProfile,
    Placement,
    ReconfigCosts,
    ReconfigPlan,
    flexmig_layout,
    legal_placements,
    mergeable,
    plan_reconfiguration,
    profile_catalog,
    try_allocate,
)
from .scheduler import (
    AllocationDecision,
    ClusterState,
    Policy,
    dm_select,
    fm_select,
    make_cluster,
    schedule_step,
    sm_select,
)
from .simcore import (
    MetricsReport,
    PerfModel,
    Simulation,
    compute_metrics,
    estimate_jct,
    run_simulation,
)
from .workload import (
    Job,
    Trace,
    TraceConfig,
    generate_trace,
    parse_trace,
    round_up_request,
    serialize_trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
