"""Allocation policies for the three cluster modes and the queue disciplines.

FM runs one job across many fixed leaf instances, DM reshapes instances on
demand (draining a GPU when the shape it needs cannot be carved without
touching running work), SM never reshapes at all.  `schedule_step` drives
either a FIFO or an aggressive (non-reserving) backfill scan over the wait
queue and applies every dispatch directly to the cluster state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import OversizedJobError, WrongModeError
from .mig import (
    GpuLayout,
    MigProfile,
    Placement,
    ReconfigCosts,
    ReconfigPlan,
    flexmig_layout,
    legal_placements,
    plan_reconfiguration,
    profile_by_name,
    static_layout,
)
from .workload import Job, profile_for_job

MODES = ("FM", "DM", "SM")


@dataclass
class Policy:
    kind: str = "fifo"  # fifo | backfill
    depth: int = 14

    def __post_init__(self) -> None:
        if self.kind not in ("fifo", "backfill"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.depth < 1:
            raise ValueError("backfill depth must be >= 1")


@dataclass
class ClusterState:
    gpus: list[GpuLayout]
    mode: str
    wait_queue: list[int] = field(default_factory=list)
    clock_s: float = 0.0
    # gpu_id -> completion time of the reconfiguration currently holding it
    reconfiguring: dict[int, float] = field(default_factory=dict)

    def layout(self, gpu_id: int) -> GpuLayout:
        for g in self.gpus:
            if g.gpu_id == gpu_id:
                return g
        raise KeyError(gpu_id)

    def schedulable_gpus(self) -> list[GpuLayout]:
        return [g for g in self.gpus if g.gpu_id not in self.reconfiguring]


def make_cluster(mode: str, num_gpus: int = 2) -> ClusterState:
    # DM starts from the same fixed combination SM uses and reshapes it on
    # demand; instances persist after their jobs complete until a later
    # reconfiguration replaces them.
    if mode == "FM":
        gpus = [flexmig_layout(i) for i in range(num_gpus)]
    elif mode in ("SM", "DM"):
        gpus = [static_layout(i) for i in range(num_gpus)]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ClusterState(gpus=gpus, mode=mode)


@dataclass
class AllocationDecision:
    job_id: int
    instances: list[tuple[int, int]]  # (gpu_id, instance_id)
    transport_class: str  # SHM | LOCAL | n/a
    profiles: list[str] = field(default_factory=list)  # parallel to instances


@dataclass
class PlannedReconfig:
    """DM dispatch that must reshape a GPU before the job can start.

    `assignments` names, per created instance, which job it is for: the
    triggering job for the requested profile and each drained job for its
    old profile; order matches plan.create.
    """

    job_id: int
    gpu_id: int
    plan: ReconfigPlan
    assignments: list[tuple[int | None, MigProfile, Placement]]


SelectOutcome = Union[AllocationDecision, PlannedReconfig, None]


# ---------------------------------------------------------------------------
# Flex mode


def _idle_leaves(cluster: ClusterState, profile_name: str) -> dict[int, list]:
    out: dict[int, list] = {}
    for g in cluster.schedulable_gpus():
        leaves = [i for i in g.idle_instances() if i.profile.name == profile_name]
        leaves.sort(key=lambda i: i.placement.start_slice)
        if leaves:
            out[g.gpu_id] = leaves
    return out


def _round_robin_pick(per_gpu: dict[int, list], count: int) -> list[tuple[int, int]]:
    # Round-based spreading: each round serves GPUs in descending order of
    # remaining free leaves (ties by lowest gpu_id), one leaf per GPU per
    # round, so per-GPU assignment counts stay as even as supply permits.
    pools = {g: list(v) for g, v in per_gpu.items()}
    picks: list[tuple[int, int]] = []
    while count > 0:
        order = sorted(
            (g for g in pools if pools[g]),
            key=lambda g: (-len(pools[g]), g),
        )
        if not order:
            break
        for g in order:
            if count == 0:
                break
            inst = pools[g].pop(0)
            picks.append((g, inst.instance_id))
            count -= 1
    return picks


def fm_select(job: Job, cluster: ClusterState) -> AllocationDecision | None:
    """Size-aware leaf selection with round-robin spreading across GPUs."""
    if cluster.mode != "FM":
        raise WrongModeError(f"fm_select on a {cluster.mode} cluster")

    if job.size == 1:
        # A lone rank benefits from the double-memory leaf; fall back to a
        # plain leaf only when no 1g.10gb is idle.
        for name in ("1g.10gb", "1g.5gb"):
            candidates = [
                (g.gpu_id, i.placement.start_slice, i.instance_id)
                for g in cluster.schedulable_gpus()
                for i in g.idle_instances()
                if i.profile.name == name
            ]
            if candidates:
                gpu_id, _, inst_id = min(candidates)
                return AllocationDecision(job.job_id, [(gpu_id, inst_id)],
                                          "LOCAL", [name])
        return None

    small = _idle_leaves(cluster, "1g.5gb")
    big = _idle_leaves(cluster, "1g.10gb")
    n_small = sum(len(v) for v in small.values())
    n_big = sum(len(v) for v in big.values())
    if n_small + n_big < job.size:
        return None
    take_small = min(job.size, n_small)
    picks = _round_robin_pick(small, take_small)
    profiles = ["1g.5gb"] * take_small
    if take_small < job.size:
        extra = _round_robin_pick(big, job.size - take_small)
        picks += extra
        profiles += ["1g.10gb"] * len(extra)
    return AllocationDecision(job.job_id, picks, "SHM", profiles)


# ---------------------------------------------------------------------------
# Dynamic mode


def _best_fit_key(layout: GpuLayout, target: MigProfile):
    return (layout.free_compute_slices() - target.compute_slices, layout.gpu_id)


def _reshape_candidate(layout: GpuLayout, target: MigProfile):
    """Cheapest (placement, destroyed idle ids) that carves the target.

    A placement qualifies when its slices are covered by idle instances and
    unpartitioned space; busy instances are never displaced.  Candidates
    destroying the fewest slices beyond the target win, ties broken by
    lowest start.  None when busy instances or the instance cap block every
    placement.
    """
    best = None
    for placement in legal_placements(target):
        c_needed = set(placement.compute_range)
        m_needed = set(placement.memory_range)
        overlap = [
            inst for inst in layout.instances.values()
            if c_needed & set(inst.placement.compute_range)
            or m_needed & set(inst.placement.memory_range)
        ]
        if any(not i.idle for i in overlap):
            continue
        destroyed_c: set[int] = set()
        for inst in overlap:
            destroyed_c.update(inst.placement.compute_range)
        survivors = [i for i in layout.instances.values() if i not in overlap]
        if sum(1 for i in survivors if i.profile.name == target.name) >= target.max_per_gpu:
            continue
        excess = len(destroyed_c - c_needed)
        key = (excess, placement.start_slice)
        if best is None or key < best[0]:
            best = (key, placement, sorted(i.instance_id for i in overlap))
    if best is None:
        return None
    return best[1], best[2], best[0][0]


def _reshaped_config(layout: GpuLayout, destroy_ids: list[int],
                     target: MigProfile, placement: Placement):
    """New per-GPU config: survivors stay in place, the target is added."""
    create = [
        (inst.profile, inst.placement)
        for inst in layout.instances.values()
        if inst.instance_id not in destroy_ids
    ]
    create.append((target, placement))
    create.sort(key=lambda pair: pair[1].start_slice)
    return create


def _assignments_for(
    create: list[tuple[MigProfile, Placement]],
    busy: list,
    target: MigProfile,
    trigger_job_id: int,
) -> list[tuple[int | None, MigProfile, Placement]]:
    # Drained jobs reclaim their old (profile, placement); the triggering job
    # takes the one new instance of the target profile; survivors that were
    # idle materialize idle again.
    by_slot = {(i.profile.name, i.placement.start_slice): i.job_id
               for i in busy}
    out: list[tuple[int | None, MigProfile, Placement]] = []
    trigger_assigned = False
    for profile, placement in create:
        slot = (profile.name, placement.start_slice)
        if slot in by_slot:
            out.append((by_slot.pop(slot), profile, placement))
        elif profile.name == target.name and not trigger_assigned:
            out.append((trigger_job_id, profile, placement))
            trigger_assigned = True
        else:
            out.append((None, profile, placement))
    return out


def dm_select(
    job: Job,
    cluster: ClusterState,
    cost_params: ReconfigCosts,
    jobs_by_id: Mapping[int, Job],
) -> SelectOutcome:
    """On-demand instance shaping, cheapest disruption first.

    Tiers: reuse an idle instance of the exact profile; reshape a fully idle
    GPU (a reconfiguration that drains nobody); reshape a GPU whose running
    jobs are all training, draining them for the duration.  Any partition
    change on a GPU with running work is a drain, so one busy inference job
    makes a GPU untouchable.  A reshape carves exactly the requested
    profile; everything else keeps its place, and drained jobs resume on
    instances recreated at their old placements.
    """
    if cluster.mode != "DM":
        raise WrongModeError(f"dm_select on a {cluster.mode} cluster")
    target = profile_for_job(job)
    available = cluster.schedulable_gpus()

    exact = [
        g for g in available
        if any(i.idle and i.profile.name == target.name for i in g.instances.values())
    ]
    if exact:
        g = min(exact, key=lambda g: _best_fit_key(g, target))
        inst = min(
            (i for i in g.idle_instances() if i.profile.name == target.name),
            key=lambda i: i.placement.start_slice,
        )
        return AllocationDecision(job.job_id, [(g.gpu_id, inst.instance_id)],
                                  "LOCAL", [target.name])

    drain_free = []
    for g in available:
        if g.busy_instances():
            continue
        found = _reshape_candidate(g, target)
        if found is not None:
            placement, destroy_ids, excess = found
            drain_free.append((excess, g.gpu_id, g, placement, destroy_ids))
    if drain_free:
        _, _, g, placement, destroy_ids = min(drain_free, key=lambda c: (c[0], c[1]))
        create = _reshaped_config(g, destroy_ids, target, placement)
        plan = ReconfigPlan(
            gpu_id=g.gpu_id,
            drained_jobs=[],
            destroy=sorted(g.instances),
            create=create,
            total_cost_s=cost_params.reconfigure_s,
        )
        return PlannedReconfig(job.job_id, g.gpu_id, plan,
                               _assignments_for(create, [], target, job.job_id))

    candidates = []
    for g in available:
        busy = g.busy_instances()
        if not busy:
            continue  # handled by the drain-free tier
        if any(jobs_by_id[i.job_id].kind == "inference" for i in busy):
            continue
        found = _reshape_candidate(g, target)
        if found is not None:
            candidates.append((g, found))
    if candidates:
        g, (placement, destroy_ids, _) = min(
            candidates, key=lambda c: _best_fit_key(c[0], target))
        create = _reshaped_config(g, destroy_ids, target, placement)
        plan = plan_reconfiguration(g, create, cost_params)
        assignments = _assignments_for(create, g.busy_instances(), target, job.job_id)
        return PlannedReconfig(job.job_id, g.gpu_id, plan, assignments)

    return None


# ---------------------------------------------------------------------------
# Static mode

_SM_LADDER = ("1g.10gb", "2g.10gb", "4g.20gb")


def sm_rounded_profile(size: int) -> MigProfile:
    for name in _SM_LADDER:
        profile = profile_by_name(name)
        if profile.compute_slices >= size:
            return profile
    raise OversizedJobError(f"size {size} exceeds the static partitioning")


def sm_select(job: Job, cluster: ClusterState) -> AllocationDecision | None:
    """Exact-profile allocation with larger-instance fallback."""
    if cluster.mode != "SM":
        raise WrongModeError(f"sm_select on a {cluster.mode} cluster")
    if job.size > 4:
        raise OversizedJobError(f"job {job.job_id} has size {job.size} > 4")
    rounded = sm_rounded_profile(job.size)
    ladder = [
        profile_by_name(name) for name in _SM_LADDER
        if (profile_by_name(name).compute_slices, profile_by_name(name).memory_gb)
        >= (rounded.compute_slices, rounded.memory_gb)
    ]
    for profile in ladder:
        for g in cluster.schedulable_gpus():
            for inst in g.idle_instances():
                if inst.profile.name == profile.name:
                    return AllocationDecision(
                        job.job_id, [(g.gpu_id, inst.instance_id)],
                        "LOCAL", [profile.name])
    return None


# ---------------------------------------------------------------------------
# Queue policies


def select_for(job: Job, cluster: ClusterState, cost_params: ReconfigCosts,
               jobs_by_id: Mapping[int, Job]) -> SelectOutcome:
    if cluster.mode == "FM":
        return fm_select(job, cluster)
    if cluster.mode == "DM":
        return dm_select(job, cluster, cost_params, jobs_by_id)
    return sm_select(job, cluster)


@dataclass
class StepResult:
    dispatched: list[AllocationDecision | PlannedReconfig]
    examined: list[int]

    @property
    def started(self) -> list[AllocationDecision]:
        return [d for d in self.dispatched if isinstance(d, AllocationDecision)]

    @property
    def reconfigs(self) -> list[PlannedReconfig]:
        return [d for d in self.dispatched if isinstance(d, PlannedReconfig)]


def _apply(outcome, cluster: ClusterState) -> AllocationDecision | PlannedReconfig:
    if isinstance(outcome, AllocationDecision):
        for gpu_id, inst_id in outcome.instances:
            cluster.layout(gpu_id).assign(inst_id, outcome.job_id)
        return outcome
    assert isinstance(outcome, PlannedReconfig)
    layout = cluster.layout(outcome.gpu_id)
    for inst_id in outcome.plan.destroy:
        layout.remove_instance(inst_id)
    cluster.reconfiguring[outcome.gpu_id] = cluster.clock_s + outcome.plan.total_cost_s
    return outcome


def schedule_step(
    cluster: ClusterState,
    jobs_by_id: Mapping[int, Job],
    policy: Policy,
    cost_params: ReconfigCosts | None = None,
) -> StepResult:
    """Run one scheduling pass over the wait queue, mutating the cluster.

    FIFO repeatedly tries the queue head and stops at the first job that must
    wait.  Backfill examines at most `policy.depth` queue positions from the
    front (a snapshot taken at step start) and dispatches every one that
    fits, reserving nothing for the ones it skips.
    """
    costs = cost_params or ReconfigCosts()
    dispatched: list[AllocationDecision | PlannedReconfig] = []
    examined: list[int] = []

    def try_one(job_id: int) -> bool:
        outcome = select_for(jobs_by_id[job_id], cluster, costs, jobs_by_id)
        if outcome is None:
            return False
        dispatched.append(_apply(outcome, cluster))
        return True

    if policy.kind == "fifo":
        while cluster.wait_queue:
            head = cluster.wait_queue[0]
            examined.append(head)
            if not try_one(head):
                break
            cluster.wait_queue.pop(0)
    else:
        for job_id in list(cluster.wait_queue[: policy.depth]):
            examined.append(job_id)
            if try_one(job_id):
                cluster.wait_queue.remove(job_id)

    return StepResult(dispatched, examined)
