"""Event-driven replay of a trace under a (mode, policy, perf model) triple.

The engine advances between arrivals, job completions, and reconfiguration
completions.  Job progress is piecewise linear: whenever two or more jobs
run anywhere on the host, every running job advances at 1/contention_factor,
otherwise at full rate, so a constant calibration factor falls out naturally
when the cluster stays busy.  Jobs drained by a reconfiguration make no
progress until the plan completes and are then resumed in place.

Metrics are computed from the emitted event log, never from engine
internals, so a persisted log reproduces the exact same report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    IncompleteLogError,
    InvalidDecisionError,
    TraceInvalidForModeError,
)
from .mig import COMPUTE_SLICES_PER_GPU, ReconfigCosts, profile_by_name
from .scheduler import (
    AllocationDecision,
    ClusterState,
    PlannedReconfig,
    Policy,
    make_cluster,
    schedule_step,
)
from .workload import Job, Trace, profile_for_job

_EPS = 1e-9


@dataclass
class PerfModel:
    """Parametric job-duration model on top of per-job base durations.

    net_transport_factor stands in for running a multi-instance job's
    collectives over the network instead of host shared memory; at the
    default of 1.0 it is inert.
    """

    speedup_1g10: float = 0.8
    multi_overhead: float = 1.07
    placement_penalty_slope: float = 0.03
    placement_penalty_cap: float = 1.15
    contention_factor: float = 1.06
    net_transport_factor: float = 1.0

    def placement_penalty(self, imbalance: int) -> float:
        return min(1.0 + self.placement_penalty_slope * imbalance,
                   self.placement_penalty_cap)

    def to_dict(self) -> dict:
        return {
            "speedup_1g10": self.speedup_1g10,
            "multi_overhead": self.multi_overhead,
            "placement_penalty_slope": self.placement_penalty_slope,
            "placement_penalty_cap": self.placement_penalty_cap,
            "contention_factor": self.contention_factor,
            "net_transport_factor": self.net_transport_factor,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PerfModel":
        return cls(**doc)


def estimate_jct(job: Job, decision: AllocationDecision, model: PerfModel,
                 num_gpus: int = 2) -> float:
    """Uncontended duration for a job under a concrete allocation.

    Contention stretching is applied by the engine over time, not here.
    Multi-instance jobs run at the rate of their slowest leaf type, so the
    overhead factor does not change when 1g.10gb leaves are mixed in; the
    imbalance penalty grows with how unevenly the leaves concentrate on one
    GPU, measured across all GPUs of the host.
    """
    if not decision.instances or len(decision.profiles) != len(decision.instances):
        raise InvalidDecisionError(f"malformed decision for job {job.job_id}")

    if len(decision.instances) == 1:
        factor = 1.0
        if job.size == 1 and decision.profiles[0] == "1g.10gb":
            factor = model.speedup_1g10
        return job.base_duration_s * factor

    counts = {gpu_id: 0 for gpu_id in range(num_gpus)}
    for gpu_id, _ in decision.instances:
        if gpu_id not in counts:
            raise InvalidDecisionError(f"decision references unknown gpu {gpu_id}")
        counts[gpu_id] += 1
    imbalance = max(counts.values()) - min(counts.values())
    factor = (model.multi_overhead
              * model.placement_penalty(imbalance)
              * model.net_transport_factor)
    return job.base_duration_s * factor


@dataclass
class MetricsReport:
    makespan_s: float
    avg_jct_s: float
    avg_wait_s: float
    avg_ext_frag_delay_s: float
    utilization: float
    reconfig_count: int
    per_job: list[tuple[int, float, float]]  # (job_id, wait_s, jct_s)

    def to_dict(self) -> dict:
        return {
            "makespan_s": self.makespan_s,
            "avg_jct_s": self.avg_jct_s,
            "avg_wait_s": self.avg_wait_s,
            "avg_ext_frag_delay_s": self.avg_ext_frag_delay_s,
            "utilization": self.utilization,
            "reconfig_count": self.reconfig_count,
            "per_job": [list(row) for row in self.per_job],
        }


def compute_metrics(event_log: list[dict]) -> MetricsReport:
    """Reduce an event log to the five cluster metrics plus reconfig count."""
    num_gpus = None
    arrivals: dict[int, float] = {}
    starts: dict[int, dict] = {}
    finishes: dict[int, float] = {}
    pauses: dict[int, list[tuple[float, float | None]]] = {}
    reconfig_count = 0

    for rec in event_log:
        ev = rec["event"]
        if ev == "init":
            num_gpus = rec["detail"]["num_gpus"]
        elif ev == "arrival":
            arrivals[rec["job_id"]] = rec["t"]
        elif ev == "start":
            starts[rec["job_id"]] = {"t": rec["t"], **rec["detail"]}
        elif ev == "finish":
            finishes[rec["job_id"]] = rec["t"]
        elif ev == "pause":
            pauses.setdefault(rec["job_id"], []).append((rec["t"], None))
        elif ev == "resume":
            spans = pauses.get(rec["job_id"])
            if not spans or spans[-1][1] is not None:
                raise IncompleteLogError(f"resume without pause for job {rec['job_id']}")
            spans[-1] = (spans[-1][0], rec["t"])
        elif ev == "reconfig_start":
            reconfig_count += 1

    if num_gpus is None:
        raise IncompleteLogError("missing init record")
    job_ids = sorted(arrivals)
    for jid in job_ids:
        if jid not in starts or jid not in finishes:
            raise IncompleteLogError(f"job {jid} missing start or finish")
    for jid, spans in pauses.items():
        if any(end is None for _, end in spans):
            raise IncompleteLogError(f"job {jid} paused at end of log")
    if not job_ids:
        raise IncompleteLogError("empty log")

    first_start = min(starts[j]["t"] for j in job_ids)
    last_finish = max(finishes[j] for j in job_ids)
    makespan = last_finish - first_start

    waits = [starts[j]["t"] - arrivals[j] for j in job_ids]
    jcts = [finishes[j] - starts[j]["t"] for j in job_ids]
    frags = [starts[j].get("ext_frag_wait_s", 0.0) for j in job_ids]

    busy_integral = 0.0
    for jid in job_ids:
        active = finishes[jid] - starts[jid]["t"]
        for p_start, p_end in pauses.get(jid, []):
            active -= p_end - p_start
        busy_integral += active * starts[jid]["slices"]
    total_slices = COMPUTE_SLICES_PER_GPU * num_gpus
    utilization = busy_integral / (total_slices * makespan) if makespan > 0 else 1.0

    n = len(job_ids)
    return MetricsReport(
        makespan_s=makespan,
        avg_jct_s=sum(jcts) / n,
        avg_wait_s=sum(waits) / n,
        avg_ext_frag_delay_s=sum(frags) / n,
        utilization=utilization,
        reconfig_count=reconfig_count,
        per_job=[(j, starts[j]["t"] - arrivals[j], finishes[j] - starts[j]["t"])
                 for j in job_ids],
    )


@dataclass
class _JobState:
    job: Job
    remaining: float = 0.0
    start_t: float | None = None
    finish_t: float | None = None
    decision: AllocationDecision | None = None
    slices: int = 0
    ext_frag_s: float = 0.0


@dataclass
class _PendingReconfig:
    complete_t: float
    reconfig: PlannedReconfig


class Simulation:
    """One deterministic run of a trace through the event engine."""

    def __init__(self, trace: Trace, mode: str, policy: Policy | None = None,
                 model: PerfModel | None = None, costs: ReconfigCosts | None = None,
                 num_gpus: int = 2):
        if mode == "SM" and trace.max_size() > 4:
            raise TraceInvalidForModeError(
                "SM supports sizes up to 4; trace has larger jobs")
        self.trace = trace
        self.mode = mode
        self.policy = policy or Policy()
        self.model = model or PerfModel()
        self.costs = costs or ReconfigCosts()
        self.num_gpus = num_gpus
        self.cluster = make_cluster(mode, num_gpus)
        self.jobs = {j.job_id: _JobState(j) for j in trace.jobs}
        self.event_log: list[dict] = []
        self.max_step_examined = 0
        self._running: set[int] = set()
        self._pending: list[_PendingReconfig] = []
        self._frag_watch: list[int] = []

    # -- logging helpers --------------------------------------------------

    def _log(self, t: float, event: str, job_id: int | None = None,
             detail: dict | None = None) -> None:
        self.event_log.append(
            {"t": t, "event": event, "job_id": job_id, "detail": detail or {}})

    # -- progress ---------------------------------------------------------

    def _rate(self) -> float:
        if len(self._running) >= 2:
            return 1.0 / self.model.contention_factor
        return 1.0

    def _advance(self, dt: float) -> None:
        if dt <= 0:
            return
        rate = self._rate()
        for jid in self._running:
            st = self.jobs[jid]
            st.remaining -= dt * rate
            if abs(st.remaining) < _EPS:
                st.remaining = 0.0
        for jid in self._frag_watch:
            self.jobs[jid].ext_frag_s += dt

    def _next_completion(self, now: float) -> float | None:
        if not self._running:
            return None
        min_rem = min(self.jobs[j].remaining for j in self._running)
        return now + min_rem / self._rate()

    # -- event application --------------------------------------------------

    def _start_job(self, jid: int, decision: AllocationDecision, t: float) -> None:
        st = self.jobs[jid]
        st.decision = decision
        st.start_t = t
        st.remaining = estimate_jct(st.job, decision, self.model, self.num_gpus)
        st.slices = sum(
            profile_by_name(name).compute_slices for name in decision.profiles
        )
        self._running.add(jid)
        self._log(t, "start", jid, {
            "instances": [list(pair) for pair in decision.instances],
            "transport": decision.transport_class,
            "slices": st.slices,
            "wait_s": t - st.job.arrival_s,
            "ext_frag_wait_s": st.ext_frag_s,
        })

    def _finish_job(self, jid: int, t: float) -> None:
        st = self.jobs[jid]
        st.finish_t = t
        self._running.discard(jid)
        assert st.decision is not None
        for gpu_id, inst_id in st.decision.instances:
            self.cluster.layout(gpu_id).release(inst_id)
        self._log(t, "finish", jid, {"jct_s": t - st.start_t})

    def _apply_reconfig_start(self, rec: PlannedReconfig, t: float) -> None:
        for jid in rec.plan.drained_jobs:
            self._running.discard(jid)
            self._log(t, "pause", jid, {"gpu_id": rec.gpu_id})
        self._log(t, "reconfig_start", rec.job_id, {
            "gpu_id": rec.gpu_id,
            "plan": rec.plan.to_dict(),
        })
        self._pending.append(_PendingReconfig(t + rec.plan.total_cost_s, rec))

    def _apply_reconfig_complete(self, pending: _PendingReconfig, t: float) -> None:
        rec = pending.reconfig
        layout = self.cluster.layout(rec.gpu_id)
        self.cluster.reconfiguring.pop(rec.gpu_id, None)
        trigger_decision = None
        for job_id, profile, placement in rec.assignments:
            inst = layout.add_instance(profile, placement, job_id=job_id)
            if job_id is None:
                continue
            decision = AllocationDecision(
                job_id, [(rec.gpu_id, inst.instance_id)], "LOCAL", [profile.name])
            if job_id == rec.job_id:
                trigger_decision = decision
            else:
                self.jobs[job_id].decision = decision
                self._running.add(job_id)
                self._log(t, "resume", job_id, {"gpu_id": rec.gpu_id})
        self._log(t, "reconfig_complete", rec.job_id, {"gpu_id": rec.gpu_id})
        if trigger_decision is None:
            raise InvalidDecisionError(
                f"reconfig plan created no instance for job {rec.job_id}")
        self._start_job(rec.job_id, trigger_decision, t)

    # -- external-fragmentation accrual -------------------------------------

    def _refresh_frag_watch(self) -> None:
        # Jobs near the front of the queue (within the examination window the
        # aggressive scanner would cover) accrue external-fragmentation delay
        # while the cluster holds enough idle slices in total but no single
        # GPU holds enough; logical aggregation makes FM immune.
        self._frag_watch = []
        if self.mode == "FM" or not self.cluster.wait_queue:
            return
        per_gpu = [
            g.free_compute_slices()
            for g in self.cluster.gpus
            if g.gpu_id not in self.cluster.reconfiguring
        ]
        total_idle = sum(per_gpu)
        max_idle = max(per_gpu, default=0)
        for jid in self.cluster.wait_queue[: self.policy.depth]:
            need = profile_for_job(self.jobs[jid].job).compute_slices
            if total_idle >= need and max_idle < need:
                self._frag_watch.append(jid)

    # -- main loop -----------------------------------------------------------

    def run(self) -> MetricsReport:
        self._log(0.0, "init", None, {
            "mode": self.mode,
            "policy": self.policy.kind,
            "backfill_depth": self.policy.depth,
            "num_gpus": self.num_gpus,
            "num_jobs": len(self.jobs),
            "perf_model": self.model.to_dict(),
        })
        arrivals = sorted(self.trace.jobs, key=lambda j: (j.arrival_s, j.job_id))
        arr_idx = 0
        t = 0.0

        while True:
            candidates = []
            if arr_idx < len(arrivals):
                candidates.append(arrivals[arr_idx].arrival_s)
            if self._pending:
                candidates.append(min(p.complete_t for p in self._pending))
            nc = self._next_completion(t)
            if nc is not None:
                candidates.append(nc)
            if not candidates:
                if self.cluster.wait_queue:
                    raise RuntimeError(
                        f"stuck: {len(self.cluster.wait_queue)} jobs waiting with no events")
                break

            t_next = min(candidates)
            self._advance(t_next - t)
            t = t_next
            self.cluster.clock_s = t

            for jid in sorted(j for j in self._running
                              if self.jobs[j].remaining <= _EPS):
                self._finish_job(jid, t)

            ready = [p for p in self._pending if p.complete_t <= t + _EPS]
            self._pending = [p for p in self._pending if p.complete_t > t + _EPS]
            for pending in sorted(ready, key=lambda p: p.reconfig.job_id):
                self._apply_reconfig_complete(pending, t)

            while arr_idx < len(arrivals) and arrivals[arr_idx].arrival_s <= t + _EPS:
                job = arrivals[arr_idx]
                self.cluster.wait_queue.append(job.job_id)
                self._log(t, "arrival", job.job_id, {"size": job.size, "kind": job.kind})
                arr_idx += 1

            step = schedule_step(self.cluster, {k: v.job for k, v in self.jobs.items()},
                                 self.policy, self.costs)
            self.max_step_examined = max(self.max_step_examined, len(step.examined))
            for outcome in step.dispatched:
                if isinstance(outcome, AllocationDecision):
                    self._start_job(outcome.job_id, outcome, t)
                else:
                    self._apply_reconfig_start(outcome, t)

            self._refresh_frag_watch()

        return compute_metrics(self.event_log)


def run_simulation(trace: Trace, mode: str, policy: Policy | None = None,
                   model: PerfModel | None = None,
                   costs: ReconfigCosts | None = None,
                   num_gpus: int = 2) -> MetricsReport:
    return Simulation(trace, mode, policy, model, costs, num_gpus).run()
