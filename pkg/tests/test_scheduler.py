from collections import Counter

import pytest

from migsim.errors import OversizedJobError, WrongModeError
from migsim.mig import ReconfigCosts, placement_for, profile_by_name
from migsim.scheduler import (
    AllocationDecision,
    PlannedReconfig,
    Policy,
    dm_select,
    fm_select,
    make_cluster,
    schedule_step,
    sm_select,
)
from migsim.workload import Job

P = profile_by_name


def jobs_map(*jobs):
    return {j.job_id: j for j in jobs}


def profile_of(cluster, gpu_id, inst_id):
    return cluster.layout(gpu_id).instances[inst_id].profile.name


# -- FM -----------------------------------------------------------------


def test_fm_size1_prefers_double_leaf():
    cluster = make_cluster("FM", 2)
    job = Job(0, "train", 1, 1000.0, 0.0)
    d = fm_select(job, cluster)
    assert len(d.instances) == 1
    assert d.profiles == ["1g.10gb"]
    assert d.transport_class == "LOCAL"


def test_fm_size1_falls_back_to_plain_leaf():
    cluster = make_cluster("FM", 1)
    for g in cluster.gpus:
        for inst in g.instances.values():
            if inst.profile.name == "1g.10gb":
                inst.job_id = 99
    d = fm_select(Job(0, "train", 1, 1000.0, 0.0), cluster)
    assert d.profiles == ["1g.5gb"]


def test_fm_size6_spreads_evenly():
    cluster = make_cluster("FM", 2)
    d = fm_select(Job(0, "train", 6, 1000.0, 0.0), cluster)
    per_gpu = Counter(g for g, _ in d.instances)
    assert per_gpu == {0: 3, 1: 3}
    assert d.transport_class == "SHM"
    assert set(d.profiles) == {"1g.5gb"}


def test_fm_uneven_supply_follows_round_robin():
    cluster = make_cluster("FM", 2)
    # Leave one plain leaf free on GPU 0 and five on GPU 1.
    for g in cluster.gpus:
        leaves = [i for i in g.instances.values() if i.profile.name == "1g.5gb"]
        busy = leaves[:5] if g.gpu_id == 0 else leaves[:1]
        for inst in busy:
            inst.job_id = 50 + inst.instance_id
    d = fm_select(Job(0, "train", 4, 1000.0, 0.0), cluster)
    per_gpu = Counter(g for g, _ in d.instances)
    assert per_gpu == {0: 1, 1: 3}


def test_fm_round_robin_balance_invariant():
    for size in (2, 3, 4, 5, 6, 7, 8):
        cluster = make_cluster("FM", 2)
        d = fm_select(Job(0, "train", size, 1000.0, 0.0), cluster)
        per_gpu = Counter(g for g, _ in d.instances)
        counts = [per_gpu.get(0, 0), per_gpu.get(1, 0)]
        assert abs(counts[0] - counts[1]) <= 1


def test_fm_falls_back_to_double_leaves_when_short():
    cluster = make_cluster("FM", 2)
    for g in cluster.gpus:
        for inst in g.instances.values():
            if inst.profile.name == "1g.5gb" and inst.instance_id % 2 == 0:
                inst.job_id = 40 + inst.instance_id
    free_small = sum(1 for g in cluster.gpus for i in g.idle_instances()
                     if i.profile.name == "1g.5gb")
    size = free_small + 2
    d = fm_select(Job(0, "train", size, 1000.0, 0.0), cluster)
    assert Counter(d.profiles)["1g.10gb"] == 2


def test_fm_waits_when_supply_short():
    cluster = make_cluster("FM", 1)
    for inst in cluster.gpus[0].instances.values():
        inst.job_id = 1
    assert fm_select(Job(0, "train", 1, 1000.0, 0.0), cluster) is None


def test_fm_wrong_mode():
    with pytest.raises(WrongModeError):
        fm_select(Job(0, "train", 1, 1000.0, 0.0), make_cluster("DM", 2))


# -- DM -----------------------------------------------------------------

COSTS = ReconfigCosts(110, 5, 5, 5)


def test_dm_exact_idle_instance_reused():
    cluster = make_cluster("DM", 2)
    layout = cluster.gpus[0]
    two = P("2g.10gb")
    layout.add_instance(two, placement_for(two, 0))
    job = Job(0, "train", 2, 1000.0, 0.0)
    d = dm_select(job, cluster, COSTS, jobs_map(job))
    assert isinstance(d, AllocationDecision)
    assert d.profiles == ["2g.10gb"]


def test_dm_creates_into_free_space_without_reconfig():
    cluster = make_cluster("DM", 2)
    job = Job(0, "train", 4, 1000.0, 0.0)
    d = dm_select(job, cluster, COSTS, jobs_map(job))
    from migsim.scheduler import CreateAllocation
    assert isinstance(d, CreateAllocation)
    assert d.profile.name == "4g.20gb"
    assert d.placement.start_slice == 0


def test_dm_merge_adjacent_idle_leaves():
    # Fully idle GPU, so the merge drains nobody. The double-memory leaves
    # at 2 and 4 block free-space creation and cannot cover a 2g placement
    # themselves, leaving the {0,1} pair as the only merge candidate.
    cluster = make_cluster("DM", 1)
    layout = cluster.gpus[0]
    leaf = P("1g.5gb")
    big = P("1g.10gb")
    a = layout.add_instance(leaf, placement_for(leaf, 0))
    b = layout.add_instance(leaf, placement_for(leaf, 1))
    layout.add_instance(big, placement_for(big, 2))
    layout.add_instance(big, placement_for(big, 4))
    layout.add_instance(leaf, placement_for(leaf, 6))
    job = Job(0, "train", 2, 1000.0, 0.0)
    d = dm_select(job, cluster, COSTS, jobs_map(job))
    assert isinstance(d, PlannedReconfig)
    assert d.plan.drained_jobs == []
    assert sorted(d.plan.destroy) == [a.instance_id, b.instance_id]
    assert d.plan.total_cost_s == 110
    assert d.plan.create[0][0].name == "2g.10gb"


def test_dm_no_merge_beside_running_work():
    # Same mergeable pair, but a busy instance elsewhere on the GPU means
    # any repartition must drain it, so no drain-free plan exists.
    cluster = make_cluster("DM", 1)
    layout = cluster.gpus[0]
    leaf = P("1g.5gb")
    big = P("1g.10gb")
    layout.add_instance(leaf, placement_for(leaf, 0))
    layout.add_instance(leaf, placement_for(leaf, 1))
    layout.add_instance(big, placement_for(big, 2))
    layout.add_instance(big, placement_for(big, 4))
    layout.add_instance(leaf, placement_for(leaf, 6), job_id=42)
    job = Job(0, "train", 2, 1000.0, 0.0)
    jobs = jobs_map(job, Job(42, "train", 1, 1.0, 0.0))
    d = dm_select(job, cluster, COSTS, jobs)
    assert isinstance(d, PlannedReconfig)
    assert d.plan.drained_jobs == [42]


def _drain_scenario(busy_kind):
    # Idle plain leaves only at slots {1,2}; every 2g.10gb placement is
    # blocked for both free-space creation and idle-only merging, so serving
    # the request means draining the one busy job at slot 0.
    cluster = make_cluster("DM", 1)
    layout = cluster.gpus[0]
    leaf = P("1g.5gb")
    layout.add_instance(leaf, placement_for(leaf, 0), job_id=5)
    layout.add_instance(leaf, placement_for(leaf, 1))
    layout.add_instance(leaf, placement_for(leaf, 2))
    big = P("1g.10gb")
    layout.add_instance(big, placement_for(big, 4))  # idle, covers slice 4 only
    job = Job(0, "train", 2, 1000.0, 0.0)
    jobs = jobs_map(job, Job(5, busy_kind, 1, 1.0, 0.0))
    return cluster, job, jobs


def test_dm_misaligned_leaves_force_drain_of_training_job():
    cluster, job, jobs = _drain_scenario("train")
    d = dm_select(job, cluster, COSTS, jobs)
    assert isinstance(d, PlannedReconfig)
    assert d.plan.drained_jobs == [5]
    assert d.plan.total_cost_s == 110 + 15


def test_dm_never_drains_inference():
    cluster, job, jobs = _drain_scenario("inference")
    assert dm_select(job, cluster, COSTS, jobs) is None


def test_dm_best_fit_gpu_choice():
    cluster = make_cluster("DM", 2)
    leaf = P("1g.5gb")
    # GPU 0 has 3 busy slices, GPU 1 has 6: GPU 1 is the tighter fit.
    for start in range(3):
        cluster.gpus[0].add_instance(leaf, placement_for(leaf, start), job_id=start)
    for start in range(6):
        cluster.gpus[1].add_instance(leaf, placement_for(leaf, start), job_id=10 + start)
    job = Job(0, "train", 1, 1000.0, 0.0)
    jobs = jobs_map(job, *(Job(i, "train", 1, 1.0, 0.0) for i in list(range(3)) + list(range(10, 16))))
    d = dm_select(job, cluster, COSTS, jobs)
    from migsim.scheduler import CreateAllocation
    assert isinstance(d, CreateAllocation)
    assert d.gpu_id == 1


def test_dm_wrong_mode():
    job = Job(0, "train", 1, 1000.0, 0.0)
    with pytest.raises(WrongModeError):
        dm_select(job, make_cluster("FM", 2), COSTS, jobs_map(job))


# -- SM -----------------------------------------------------------------


def test_sm_exact_fit_preferred():
    cluster = make_cluster("SM", 2)
    d = sm_select(Job(0, "train", 1, 1000.0, 0.0), cluster)
    assert d.profiles == ["1g.10gb"]


def test_sm_overflow_to_larger_instance():
    cluster = make_cluster("SM", 1)
    layout = cluster.gpus[0]
    for inst in layout.instances.values():
        if inst.profile.name == "2g.10gb":
            inst.job_id = 9
    d = sm_select(Job(0, "train", 2, 1000.0, 0.0), cluster)
    assert d.profiles == ["4g.20gb"]


def test_sm_waits_when_saturated():
    cluster = make_cluster("SM", 1)
    for inst in cluster.gpus[0].instances.values():
        inst.job_id = 9
    assert sm_select(Job(0, "train", 1, 1000.0, 0.0), cluster) is None


def test_sm_rejects_oversized():
    with pytest.raises(OversizedJobError):
        sm_select(Job(0, "train", 6, 1000.0, 0.0), make_cluster("SM", 2))


def test_sm_wrong_mode():
    with pytest.raises(WrongModeError):
        sm_select(Job(0, "train", 1, 1000.0, 0.0), make_cluster("FM", 2))


# -- schedule_step -------------------------------------------------------


def test_fifo_stops_at_first_wait():
    cluster = make_cluster("SM", 1)
    for inst in cluster.gpus[0].instances.values():
        if inst.profile.name == "4g.20gb":
            inst.job_id = 9
    big = Job(0, "train", 4, 1000.0, 0.0)   # must wait
    small = Job(1, "train", 1, 1000.0, 0.0)  # would fit
    cluster.wait_queue = [0, 1]
    result = schedule_step(cluster, jobs_map(big, small), Policy("fifo"))
    assert result.dispatched == []
    assert cluster.wait_queue == [0, 1]


def test_backfill_skips_blocked_head():
    cluster = make_cluster("SM", 1)
    for inst in cluster.gpus[0].instances.values():
        if inst.profile.name == "4g.20gb":
            inst.job_id = 9
    big = Job(0, "train", 4, 1000.0, 0.0)
    small = Job(1, "train", 1, 1000.0, 0.0)
    cluster.wait_queue = [0, 1]
    result = schedule_step(cluster, jobs_map(big, small), Policy("backfill", 14))
    assert [d.job_id for d in result.started] == [1]
    assert cluster.wait_queue == [0]


def test_backfill_never_examines_beyond_depth():
    cluster = make_cluster("FM", 2)
    for g in cluster.gpus:
        for inst in g.instances.values():
            inst.job_id = 99  # nothing can start
    jobs = {i: Job(i, "train", 1, 1000.0, 0.0) for i in range(20)}
    cluster.wait_queue = list(range(20))
    result = schedule_step(cluster, jobs, Policy("backfill", 14))
    assert result.examined == list(range(14))
    assert max(result.examined) == 13


def test_fifo_continues_after_success():
    cluster = make_cluster("FM", 2)
    jobs = {i: Job(i, "train", 1, 1000.0, 0.0) for i in range(3)}
    cluster.wait_queue = [0, 1, 2]
    result = schedule_step(cluster, jobs, Policy("fifo"))
    assert [d.job_id for d in result.started] == [0, 1, 2]
    assert cluster.wait_queue == []


def test_no_instance_double_booking_within_step():
    cluster = make_cluster("FM", 2)
    jobs = {i: Job(i, "train", 4, 1000.0, 0.0) for i in range(4)}
    cluster.wait_queue = [0, 1, 2, 3]
    result = schedule_step(cluster, jobs, Policy("backfill", 14))
    used = [pair for d in result.started for pair in d.instances]
    assert len(used) == len(set(used))
