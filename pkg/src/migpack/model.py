"""Domain model for MIG-partitioned GPU clusters.

A MIG-capable GPU exposes 7 compute slices and 8 memory slices; the eighth
memory slice rides along with the last GPU slice. Partitions can only be
created from a fixed catalog of profiles, each restricted to specific start
indexes. Everything downstream (feasibility search, the exact optimizer, the
heuristics, the metrics) speaks in terms of the types defined here.

Memory is accounted in slice units throughout; gigabytes appear only when
rendering for humans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence


COMPUTE_SLICES = 7
MEMORY_SLICES = 8
JOINT_SLICES = COMPUTE_SLICES + MEMORY_SLICES


class UnknownProfileError(KeyError):
    """Raised when a profile id is not in the catalog."""


@dataclass(frozen=True)
class ProfileSpec:
    """One row of the MIG partition-profile catalog.

    ``allowed_indexes`` is ordered by placement preference (best index
    first), as measured on real hardware; it is not numerically sorted.
    ``gpu_slices`` is the footprint width when the partition does not
    borrow the trailing extra memory slice.
    """

    profile_id: int
    name: str
    compute_slices: int
    memory_slices: int
    gpu_slices: int
    allowed_indexes: tuple[int, ...]
    has_media_ext: bool = False


# Catalog for A100/H100-class GPUs (7 compute + 8 memory slices).
PROFILE_CATALOG: Mapping[int, ProfileSpec] = {
    0: ProfileSpec(0, "7g.80gb", 7, 8, 7, (0,)),
    5: ProfileSpec(5, "4g.40gb", 4, 4, 4, (0,)),
    9: ProfileSpec(9, "3g.40gb", 3, 4, 4, (4, 0)),
    14: ProfileSpec(14, "2g.20gb", 2, 2, 2, (4, 0, 2)),
    15: ProfileSpec(15, "1g.20gb", 1, 2, 2, (6, 4, 0, 2)),
    19: ProfileSpec(19, "1g.10gb", 1, 1, 1, (6, 4, 5, 0, 1, 2, 3)),
    20: ProfileSpec(20, "1g.10gb+me", 1, 1, 1, (6, 4, 5, 0, 1, 2, 3), has_media_ext=True),
}

PROFILE_IDS: tuple[int, ...] = tuple(sorted(PROFILE_CATALOG))

# Largest-first scan order used by the free-partition preprocessing: sorted by
# footprint width descending, ties by ascending profile id.
PROFILE_IDS_BY_SIZE_DESC: tuple[int, ...] = tuple(
    sorted(PROFILE_CATALOG, key=lambda p: (-PROFILE_CATALOG[p].gpu_slices, p))
)


def profile_lookup(profile_id: int) -> ProfileSpec:
    """Return the immutable catalog row for ``profile_id``."""
    try:
        return PROFILE_CATALOG[profile_id]
    except KeyError:
        raise UnknownProfileError(f"unknown MIG profile id: {profile_id!r}") from None


@dataclass(frozen=True)
class GpuSpec:
    """Capacity description of one GPU model."""

    model_name: str = "A100-80GB"
    total_compute: int = COMPUTE_SLICES
    total_memory_slices: int = MEMORY_SLICES
    memory_slice_size: int = 10  # GB per memory slice
    total_memory: int = 80  # GB

    def __post_init__(self) -> None:
        if self.total_memory != self.total_memory_slices * self.memory_slice_size:
            raise ValueError(
                f"total_memory ({self.total_memory}) must equal "
                f"total_memory_slices * memory_slice_size "
                f"({self.total_memory_slices} * {self.memory_slice_size})"
            )


A100_80GB = GpuSpec()


@dataclass(frozen=True)
class Workload:
    """A deployable model instance tied to one partition profile.

    ``reward`` of ``None`` means "use the optimizer's default placement
    reward"; per-workload overrides are allowed but rarely needed.
    """

    workload_id: str
    profile_id: int
    movable: bool = True
    reward: Optional[float] = None

    def __post_init__(self) -> None:
        profile_lookup(self.profile_id)
        if self.reward is not None and self.reward < 0:
            raise ValueError(f"reward must be nonnegative, got {self.reward}")

    @property
    def profile(self) -> ProfileSpec:
        return PROFILE_CATALOG[self.profile_id]


@dataclass(frozen=True)
class IndexedPlacement:
    """A partition at a concrete start index, usually holding a workload.

    ``workload_id`` of ``None`` models a partition that exists on the GPU but
    has nothing deployed in it (it still blocks its slices).
    """

    gpu_id: str
    workload_id: Optional[str]
    profile_id: int
    start_index: int
    movable: bool = True

    def __post_init__(self) -> None:
        spec = profile_lookup(self.profile_id)
        if self.start_index not in spec.allowed_indexes:
            raise ValueError(
                f"profile {self.profile_id} ({spec.name}) cannot start at "
                f"index {self.start_index}; allowed: {list(spec.allowed_indexes)}"
            )

    @property
    def profile(self) -> ProfileSpec:
        return PROFILE_CATALOG[self.profile_id]


@dataclass(frozen=True)
class ClusterState:
    """GPUs, their indexed placements, and any workloads left unplaced."""

    gpus: tuple[tuple[str, GpuSpec], ...]
    placements: tuple[IndexedPlacement, ...] = ()
    pending_workloads: tuple[Workload, ...] = ()

    @property
    def gpu_ids(self) -> tuple[str, ...]:
        return tuple(gid for gid, _ in self.gpus)

    def spec_for(self, gpu_id: str) -> GpuSpec:
        for gid, spec in self.gpus:
            if gid == gpu_id:
                return spec
        raise KeyError(f"unknown gpu id: {gpu_id!r}")

    def placements_on(self, gpu_id: str) -> tuple[IndexedPlacement, ...]:
        return tuple(p for p in self.placements if p.gpu_id == gpu_id)

    def placements_by_gpu(self) -> dict[str, list[IndexedPlacement]]:
        by_gpu: dict[str, list[IndexedPlacement]] = {gid: [] for gid, _ in self.gpus}
        for p in self.placements:
            by_gpu[p.gpu_id].append(p)
        return by_gpu

    def allocated_gpu_ids(self) -> tuple[str, ...]:
        """GPUs carrying at least one partition, in cluster order."""
        used = {p.gpu_id for p in self.placements}
        return tuple(gid for gid, _ in self.gpus if gid in used)

    def free_gpu_ids(self) -> tuple[str, ...]:
        used = {p.gpu_id for p in self.placements}
        return tuple(gid for gid, _ in self.gpus if gid not in used)

    def placed_workload(self, workload_id: str) -> Workload:
        for p in self.placements:
            if p.workload_id == workload_id:
                return Workload(workload_id, p.profile_id, movable=p.movable)
        raise KeyError(f"workload {workload_id!r} is not placed")


@dataclass(frozen=True)
class Migration:
    """One workload-partition assignment change.

    ``from_gpu`` is ``None`` for a newly deployed workload. Same-GPU index
    changes are listed too (the executor needs them) even though they cost
    nothing in migration-size terms.
    """

    workload_id: str
    from_gpu: Optional[str]
    to_gpu: str
    to_index: int


@dataclass(frozen=True)
class PlacementPlan:
    """A fully indexed target state plus the actions that reach it."""

    final_state: ClusterState
    migrations: tuple[Migration, ...] = ()
    repartitioned_gpus: frozenset[str] = field(default_factory=frozenset)
    pending: tuple[str, ...] = ()


def cache_size(num_layers: int, dimension: int, precision: int) -> int:
    """Per-token KV-cache footprint in bytes: 2 * layers * dimension * precision.

    Python integers cannot overflow, so the result is exact for any inputs.
    """
    for name, value in (("num_layers", num_layers), ("dimension", dimension), ("precision", precision)):
        if not isinstance(value, int) or value <= 0:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return 2 * num_layers * dimension * precision


def min_gpus(workloads: Iterable[Workload], gpu: GpuSpec = A100_80GB) -> int:
    """Lower bound on GPUs needed for ``workloads``: per-dimension demand
    divided by per-GPU capacity, ceiling applied to each dimension.
    """
    total_compute = 0
    total_memory = 0
    for w in workloads:
        spec = profile_lookup(w.profile_id)
        total_compute += spec.compute_slices
        total_memory += spec.memory_slices
    if total_compute == 0 and total_memory == 0:
        return 0
    return max(
        -(-total_compute // gpu.total_compute),
        -(-total_memory // gpu.total_memory_slices),
    )


def joint_slice_utilization(
    placements: Sequence[IndexedPlacement], gpu: GpuSpec = A100_80GB
) -> float:
    """(used memory slices + used compute slices) / (total memory + compute slices).

    "Used" counts the profile's own slices; slices wasted by an offset
    placement are neither used nor free and do not appear in the numerator.
    """
    used_compute = sum(p.profile.compute_slices for p in placements)
    used_memory = sum(p.profile.memory_slices for p in placements)
    return (used_memory + used_compute) / (gpu.total_memory_slices + gpu.total_compute)
