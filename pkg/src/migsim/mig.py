"""MIG profile catalog, per-GPU slice layout, and reconfiguration planning.

A GPU is modeled as 7 compute slices (each 1/7 of the SMs) and 8 memory
slices of 5 GB (40 GB total).  An instance placed at compute slice `s`
occupies compute slices [s, s + span) and memory slices [s, s + mem).
The extra 8th memory slice is what lets a 1g.10gb instance sit at start 6,
which is how a GPU packs 6x 1g.5gb + 1x 1g.10gb with zero memory waste.

Placement legality is a fixed per-profile start table.  The table, together
with a per-profile instance cap, reproduces the catalog's max-per-GPU counts
and the merge/no-merge behavior of the hardware slice tree: two 1g.5gb
instances at slots {0,1} can be merged into a 2g.10gb, the pair at {1,2}
cannot, because no legal 2g.10gb placement starts at slice 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (
    InstanceBusyError,
    InvalidTargetError,
    UnknownInstanceError,
    UnknownProfileError,
)

COMPUTE_SLICES_PER_GPU = 7
MEMORY_SLICES_PER_GPU = 8
MEMORY_GB_PER_SLICE = 5


@dataclass(frozen=True)
class MigProfile:
    name: str
    compute_slices: int
    memory_gb: int
    max_per_gpu: int

    @property
    def memory_slices(self) -> int:
        return self.memory_gb // MEMORY_GB_PER_SLICE


_CATALOG = (
    MigProfile("1g.5gb", 1, 5, 7),
    MigProfile("1g.10gb", 1, 10, 4),
    MigProfile("2g.10gb", 2, 10, 2),
    MigProfile("3g.20gb", 3, 20, 2),
    MigProfile("4g.20gb", 4, 20, 1),
    MigProfile("7g.40gb", 7, 40, 1),
)

_BY_NAME = {p.name: p for p in _CATALOG}

# Fixed legal start slices per profile.  Derived so that max_per_gpu copies
# pack onto an empty GPU and the slot {0,1} / {1,2} merge asymmetry holds.
_LEGAL_STARTS = {
    "1g.5gb": (0, 1, 2, 3, 4, 5, 6),
    "1g.10gb": (0, 2, 4, 6),
    "2g.10gb": (0, 2, 4),
    "3g.20gb": (0, 4),
    "4g.20gb": (0,),
    "7g.40gb": (0,),
}


def profile_catalog() -> list[MigProfile]:
    """Return the six supported profiles, ascending by (slices, memory)."""
    return list(_CATALOG)


def profile_by_name(name: str) -> MigProfile:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownProfileError(f"unknown profile {name!r}") from None


@dataclass(frozen=True)
class Placement:
    start_slice: int
    span_slices: int
    memory_slices: int

    @property
    def compute_range(self) -> range:
        return range(self.start_slice, self.start_slice + self.span_slices)

    @property
    def memory_range(self) -> range:
        return range(self.start_slice, self.start_slice + self.memory_slices)

    def validate(self) -> None:
        if not 0 <= self.start_slice < COMPUTE_SLICES_PER_GPU:
            raise InvalidTargetError(f"start slice {self.start_slice} out of range")
        if self.start_slice + self.span_slices > COMPUTE_SLICES_PER_GPU:
            raise InvalidTargetError("placement exceeds the 7 compute slices")
        if self.start_slice + self.memory_slices > MEMORY_SLICES_PER_GPU:
            raise InvalidTargetError("placement exceeds the 8 memory slices")


def legal_placements(profile: MigProfile) -> list[Placement]:
    """Fixed legal placements for a profile, ascending by start slice."""
    if profile.name not in _LEGAL_STARTS:
        raise UnknownProfileError(f"unknown profile {profile.name!r}")
    return [
        Placement(s, profile.compute_slices, profile.memory_slices)
        for s in _LEGAL_STARTS[profile.name]
    ]


@dataclass
class MigInstance:
    instance_id: int
    profile: MigProfile
    placement: Placement
    job_id: int | None = None  # None while idle

    @property
    def idle(self) -> bool:
        return self.job_id is None


@dataclass
class GpuLayout:
    """Instances currently carved out of one GPU.

    Compute slices not covered by any instance are unpartitioned free space.
    """

    gpu_id: int
    instances: dict[int, MigInstance] = field(default_factory=dict)
    _next_id: int = field(default=1, compare=False, repr=False)

    # -- queries ---------------------------------------------------------

    def occupied_compute(self) -> set[int]:
        out: set[int] = set()
        for inst in self.instances.values():
            out.update(inst.placement.compute_range)
        return out

    def occupied_memory(self) -> set[int]:
        out: set[int] = set()
        for inst in self.instances.values():
            out.update(inst.placement.memory_range)
        return out

    def busy_instances(self) -> list[MigInstance]:
        return [i for i in self.instances.values() if not i.idle]

    def idle_instances(self) -> list[MigInstance]:
        return [i for i in self.instances.values() if i.idle]

    def busy_compute_slices(self) -> int:
        return sum(i.profile.compute_slices for i in self.busy_instances())

    def free_compute_slices(self) -> int:
        """Slices not serving a running job (idle instances + unpartitioned)."""
        return COMPUTE_SLICES_PER_GPU - self.busy_compute_slices()

    def profile_count(self, profile: MigProfile) -> int:
        return sum(1 for i in self.instances.values() if i.profile.name == profile.name)

    # -- mutation --------------------------------------------------------

    def add_instance(self, profile: MigProfile, placement: Placement,
                     job_id: int | None = None) -> MigInstance:
        inst = MigInstance(self._next_id, profile, placement, job_id)
        self._next_id += 1
        self.instances[inst.instance_id] = inst
        return inst

    def remove_instance(self, instance_id: int) -> MigInstance:
        if instance_id not in self.instances:
            raise UnknownInstanceError(f"instance {instance_id} not on gpu {self.gpu_id}")
        return self.instances.pop(instance_id)

    def assign(self, instance_id: int, job_id: int) -> None:
        inst = self.instances.get(instance_id)
        if inst is None:
            raise UnknownInstanceError(f"instance {instance_id} not on gpu {self.gpu_id}")
        if not inst.idle:
            raise InstanceBusyError(f"instance {instance_id} already runs job {inst.job_id}")
        inst.job_id = job_id

    def release(self, instance_id: int) -> None:
        inst = self.instances.get(instance_id)
        if inst is None:
            raise UnknownInstanceError(f"instance {instance_id} not on gpu {self.gpu_id}")
        inst.job_id = None

    def clone(self) -> "GpuLayout":
        out = GpuLayout(self.gpu_id)
        out.instances = {
            k: MigInstance(v.instance_id, v.profile, v.placement, v.job_id)
            for k, v in self.instances.items()
        }
        out._next_id = self._next_id
        return out

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "gpu_id": self.gpu_id,
            "instances": [
                {
                    "instance_id": i.instance_id,
                    "profile": i.profile.name,
                    "placement": {
                        "start_slice": i.placement.start_slice,
                        "span_slices": i.placement.span_slices,
                        "memory_slices": i.placement.memory_slices,
                    },
                    "job_id": i.job_id,
                }
                for i in self.instances.values()
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GpuLayout":
        doc = json.loads(text)
        layout = cls(doc["gpu_id"])
        for rec in doc["instances"]:
            profile = profile_by_name(rec["profile"])
            pl = rec["placement"]
            placement = Placement(pl["start_slice"], pl["span_slices"], pl["memory_slices"])
            inst = MigInstance(rec["instance_id"], profile, placement, rec["job_id"])
            layout.instances[inst.instance_id] = inst
        layout._next_id = max(layout.instances, default=0) + 1
        return layout


@dataclass
class ReconfigCosts:
    reconfigure_s: float = 110.0
    checkpoint_save_s: float = 5.0
    checkpoint_load_s: float = 5.0
    pod_cycle_s: float = 5.0

    def per_drained_job(self) -> float:
        return self.checkpoint_save_s + self.checkpoint_load_s + self.pod_cycle_s


@dataclass
class ReconfigPlan:
    gpu_id: int
    drained_jobs: list[int]
    destroy: list[int]
    create: list[tuple[MigProfile, Placement]]
    total_cost_s: float

    def to_dict(self) -> dict:
        return {
            "gpu_id": self.gpu_id,
            "drained_jobs": list(self.drained_jobs),
            "destroy": list(self.destroy),
            "create": [
                [p.name, {"start_slice": pl.start_slice,
                          "span_slices": pl.span_slices,
                          "memory_slices": pl.memory_slices}]
                for p, pl in self.create
            ],
            "total_cost_s": self.total_cost_s,
        }


def try_allocate(layout: GpuLayout, profile: MigProfile) -> Placement | None:
    """Lowest-start legal placement whose slices are all free, or None.

    A placement is only usable if adding the instance keeps the per-profile
    count within the catalog's max_per_gpu; this is what stops a third
    2g.10gb even though three start positions exist.
    """
    if layout.profile_count(profile) >= profile.max_per_gpu:
        return None
    occ_c = layout.occupied_compute()
    occ_m = layout.occupied_memory()
    for placement in legal_placements(profile):
        if any(s in occ_c for s in placement.compute_range):
            continue
        if any(s in occ_m for s in placement.memory_range):
            continue
        return placement
    return None


def mergeable(layout: GpuLayout, instance_ids: set[int], target: MigProfile) -> bool:
    """Whether destroying exactly these idle instances permits creating target.

    True iff some legal placement of the target has all of its compute and
    memory slices covered by what the destroyed instances free up (or was
    already free memory), the combined freed memory is at least the target's,
    and the instance cap still holds.  Adding more idle instances to the set
    can only add freed slices, so the check is monotone in the candidate set.
    """
    freed_c: set[int] = set()
    freed_m: set[int] = set()
    freed_gb = 0
    for iid in instance_ids:
        inst = layout.instances.get(iid)
        if inst is None:
            raise UnknownInstanceError(f"instance {iid} not on gpu {layout.gpu_id}")
        if not inst.idle:
            raise InstanceBusyError(f"instance {iid} runs job {inst.job_id}")
        freed_c.update(inst.placement.compute_range)
        freed_m.update(inst.placement.memory_range)
        freed_gb += inst.profile.memory_gb
    if freed_gb < target.memory_gb:
        return False

    remaining = [i for i in layout.instances.values() if i.instance_id not in instance_ids]
    if sum(1 for i in remaining if i.profile.name == target.name) >= target.max_per_gpu:
        return False
    occ_m = set()
    for inst in remaining:
        occ_m.update(inst.placement.memory_range)

    for placement in legal_placements(target):
        if not set(placement.compute_range) <= freed_c:
            continue
        if any(s in occ_m for s in placement.memory_range):
            continue
        return True
    return False


def validate_target_config(target_config: list[tuple[MigProfile, Placement]]) -> None:
    """Raise InvalidTargetError unless target_config is a legal layout."""
    used_c: set[int] = set()
    used_m: set[int] = set()
    counts: dict[str, int] = {}
    for profile, placement in target_config:
        if profile.name not in _BY_NAME:
            raise InvalidTargetError(f"unknown profile {profile.name!r}")
        placement.validate()
        if placement.start_slice not in _LEGAL_STARTS[profile.name]:
            raise InvalidTargetError(
                f"{profile.name} may not start at slice {placement.start_slice}")
        if placement.span_slices != profile.compute_slices:
            raise InvalidTargetError(f"span does not match {profile.name}")
        if placement.memory_slices != profile.memory_slices:
            raise InvalidTargetError(f"memory slices do not match {profile.name}")
        c = set(placement.compute_range)
        m = set(placement.memory_range)
        if c & used_c or m & used_m:
            raise InvalidTargetError("target placements overlap")
        used_c |= c
        used_m |= m
        counts[profile.name] = counts.get(profile.name, 0) + 1
        if counts[profile.name] > profile.max_per_gpu:
            raise InvalidTargetError(f"more than {profile.max_per_gpu} x {profile.name}")


def plan_reconfiguration(layout: GpuLayout,
                         target_config: list[tuple[MigProfile, Placement]],
                         cost_params: ReconfigCosts) -> ReconfigPlan:
    """Plan a full repartition: destroy every instance, create target_config.

    Every busy instance's job is drained and its checkpoint/pod costs are
    added on top of the flat reconfigure cost.
    """
    validate_target_config(target_config)
    drained = sorted(i.job_id for i in layout.busy_instances())
    total = cost_params.reconfigure_s + len(drained) * cost_params.per_drained_job()
    return ReconfigPlan(
        gpu_id=layout.gpu_id,
        drained_jobs=drained,
        destroy=sorted(layout.instances),
        create=list(target_config),
        total_cost_s=total,
    )


def placement_for(profile: MigProfile, start: int) -> Placement:
    return Placement(start, profile.compute_slices, profile.memory_slices)


def flexmig_layout(gpu_id: int) -> GpuLayout:
    """The fixed one-to-many layout: 6x 1g.5gb plus one 1g.10gb at slice 6."""
    layout = GpuLayout(gpu_id)
    leaf = profile_by_name("1g.5gb")
    for start in range(6):
        layout.add_instance(leaf, placement_for(leaf, start))
    big = profile_by_name("1g.10gb")
    layout.add_instance(big, placement_for(big, 6))
    return layout


def static_layout(gpu_id: int) -> GpuLayout:
    """The fixed one-to-one layout: one each of 4g.20gb, 2g.10gb, 1g.10gb."""
    layout = GpuLayout(gpu_id)
    for name, start in (("4g.20gb", 0), ("2g.10gb", 4), ("1g.10gb", 6)):
        profile = profile_by_name(name)
        layout.add_instance(profile, placement_for(profile, start))
    return layout


def pack_profiles(profiles: list[MigProfile]) -> list[tuple[MigProfile, Placement]] | None:
    """Find a non-overlapping placement for all profiles on an empty GPU.

    Backtracking over legal starts, largest profiles first; returns None when
    no arrangement exists.  Deterministic: candidates are tried in a fixed
    order, so equal inputs give equal packings.
    """
    order = sorted(
        profiles,
        key=lambda p: (-p.compute_slices, -p.memory_gb, p.name),
    )
    counts: dict[str, int] = {}
    for p in order:
        counts[p.name] = counts.get(p.name, 0) + 1
        if counts[p.name] > p.max_per_gpu:
            return None

    chosen: list[tuple[MigProfile, Placement]] = []

    def place(idx: int, used_c: set[int], used_m: set[int]) -> bool:
        if idx == len(order):
            return True
        profile = order[idx]
        for placement in legal_placements(profile):
            c = set(placement.compute_range)
            m = set(placement.memory_range)
            if c & used_c or m & used_m:
                continue
            chosen.append((profile, placement))
            if place(idx + 1, used_c | c, used_m | m):
                return True
            chosen.pop()
        return False

    if not place(0, set(), set()):
        return None
    return sorted(chosen, key=lambda pair: pair[1].start_slice)
