"""Brute-force reference simulator that steps the clock 2 seconds at a time.

Used to cross-check the event-driven engine: it shares the scheduling
policies (the contract under test is the engine's time handling) but keeps
completely separate clock, progress, and reconfiguration bookkeeping.  It
only supports runs whose event times all land on the 2-second grid, which in
practice means contention_factor=1.0 and durations/arrivals/costs that stay
even under the perf-model factors.
"""

from dataclasses import dataclass, field

from migsim.mig import ReconfigCosts
from migsim.scheduler import (
    AllocationDecision,
    Policy,
    make_cluster,
    schedule_step,
)
from migsim.simcore import PerfModel, estimate_jct
from migsim.workload import Trace

TICK = 2.0


@dataclass
class _OracleJob:
    job: object
    remaining: float = 0.0
    start_t: float | None = None
    finish_t: float | None = None
    running: bool = False


@dataclass
class _OraclePending:
    complete_t: float
    reconfig: object


class TimelineOracle:
    def __init__(self, trace: Trace, mode: str, policy: Policy,
                 model: PerfModel, costs: ReconfigCosts, num_gpus: int = 2):
        if model.contention_factor != 1.0:
            raise ValueError("oracle requires contention_factor == 1.0")
        self.trace = trace
        self.mode = mode
        self.policy = policy
        self.model = model
        self.costs = costs
        self.num_gpus = num_gpus

    def run(self) -> dict[int, tuple[float, float]]:
        cluster = make_cluster(self.mode, self.num_gpus)
        jobs = {j.job_id: _OracleJob(j) for j in self.trace.jobs}
        jobs_by_id = {j.job_id: j for j in self.trace.jobs}
        arrivals = sorted(self.trace.jobs, key=lambda j: (j.arrival_s, j.job_id))
        arr_idx = 0
        pending: list[_OraclePending] = []
        t = 0.0
        budget = int(sum(j.base_duration_s for j in self.trace.jobs) * 8 / TICK) + 10_000

        def start(jid: int, decision: AllocationDecision, now: float) -> None:
            st = jobs[jid]
            st.start_t = now
            st.remaining = estimate_jct(st.job, decision, self.model, self.num_gpus)
            st.running = True
            st.decision = decision

        for _ in range(budget):
            changed = False

            for jid in sorted(j for j, st in jobs.items()
                              if st.running and st.remaining <= 0):
                st = jobs[jid]
                st.finish_t = t
                st.running = False
                for gpu_id, inst_id in st.decision.instances:
                    cluster.layout(gpu_id).release(inst_id)
                changed = True

            ready = [p for p in pending if p.complete_t <= t]
            pending = [p for p in pending if p.complete_t > t]
            for item in sorted(ready, key=lambda p: p.reconfig.job_id):
                rec = item.reconfig
                layout = cluster.layout(rec.gpu_id)
                cluster.reconfiguring.pop(rec.gpu_id, None)
                for job_id, profile, placement in rec.assignments:
                    inst = layout.add_instance(profile, placement, job_id=job_id)
                    if job_id is None:
                        continue
                    decision = AllocationDecision(
                        job_id, [(rec.gpu_id, inst.instance_id)], "LOCAL",
                        [profile.name])
                    if job_id == rec.job_id:
                        start(job_id, decision, t)
                    else:
                        jobs[job_id].decision = decision
                        jobs[job_id].running = True
                changed = True

            while arr_idx < len(arrivals) and arrivals[arr_idx].arrival_s <= t:
                cluster.wait_queue.append(arrivals[arr_idx].job_id)
                arr_idx += 1
                changed = True

            if changed:
                cluster.clock_s = t
                step = schedule_step(cluster, jobs_by_id, self.policy, self.costs)
                for outcome in step.dispatched:
                    if isinstance(outcome, AllocationDecision):
                        start(outcome.job_id, outcome, t)
                    else:
                        for jid in outcome.plan.drained_jobs:
                            jobs[jid].running = False
                        pending.append(
                            _OraclePending(t + outcome.plan.total_cost_s, outcome))

            if all(st.finish_t is not None for st in jobs.values()):
                return {jid: (st.start_t, st.finish_t) for jid, st in jobs.items()}

            for st in jobs.values():
                if st.running:
                    st.remaining -= TICK
            t += TICK

        raise RuntimeError("oracle budget exhausted; run did not terminate")
