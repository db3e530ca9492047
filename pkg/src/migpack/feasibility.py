"""Which (profile, index) placements a MIG GPU can physically realize.

Three layers build on each other:

* ``footprint`` expands one (profile, start index) pair into the GPU slices it
  occupies, whether it borrows the trailing extra memory slice, and what it
  wastes doing so.
* ``validate_layout`` / ``find_layout`` check and search full per-GPU layouts.
* ``free_partitions`` pre-processes a partially partitioned GPU into its
  largest unallocated partitions (the bins the optimizer packs into),
  including the merge of adjacent partitions when that loses no placements.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from .model import (
    COMPUTE_SLICES,
    MEMORY_SLICES,
    IndexedPlacement,
    ClusterState,
    PROFILE_CATALOG,
    PROFILE_IDS_BY_SIZE_DESC,
    profile_lookup,
)


class InfeasibleIndexError(ValueError):
    """A profile was asked to start at an index it does not support."""


class InvalidStateError(ValueError):
    """A cluster state violates the layout rules."""


class LayoutInfeasibleError(RuntimeError):
    """An indexing step could not realize a bin-level assignment.

    This would contradict the permutation assumption the optimizer relies on,
    so it is surfaced loudly rather than absorbed.
    """


@dataclass(frozen=True)
class Footprint:
    """Concrete slice occupancy of one (profile, index) placement."""

    occupied_slices: frozenset[int]
    uses_extra_memory: bool
    wasted_compute_slices: int
    wasted_extra_memory: bool

    @property
    def start(self) -> int:
        return min(self.occupied_slices)

    @property
    def end(self) -> int:
        return max(self.occupied_slices)


@lru_cache(maxsize=None)
def footprint(profile_id: int, start_index: int) -> Footprint:
    """Expand (profile, index) into occupied slices and waste flags.

    The footprint spans one GPU slice per memory slice, clipped at the last
    slice: a profile whose memory extends past slice 6 takes the extra memory
    slice instead of an extra GPU slice. Compute slices beyond the profile's
    own count inside that span are wasted. A single-memory-slice profile
    sitting on slice 6 strands the extra memory slice for everyone.
    """
    spec = profile_lookup(profile_id)
    if start_index not in spec.allowed_indexes:
        raise InfeasibleIndexError(
            f"profile {profile_id} ({spec.name}) cannot start at index "
            f"{start_index}; allowed: {list(spec.allowed_indexes)}"
        )
    width = min(spec.memory_slices, COMPUTE_SLICES - start_index)
    occupied = frozenset(range(start_index, start_index + width))
    uses_extra = start_index + spec.memory_slices > COMPUTE_SLICES
    blocks_extra = (COMPUTE_SLICES - 1) in occupied and not uses_extra
    return Footprint(
        occupied_slices=occupied,
        uses_extra_memory=uses_extra,
        wasted_compute_slices=width - spec.compute_slices,
        wasted_extra_memory=blocks_extra,
    )


@dataclass(frozen=True)
class LayoutViolation:
    """First broken layout rule, with the placements involved."""

    rule: str
    offenders: tuple[tuple[int, int], ...]

    def __str__(self) -> str:
        return f"{self.rule}: {list(self.offenders)}"


def validate_layout(entries: Iterable[tuple[int, int]]) -> Optional[LayoutViolation]:
    """Check one GPU's layout; return the first violation or None.

    Rules, in check order: every index allowed for its profile, pairwise
    disjoint footprints, at most one user of the extra memory slice, at most
    one media-extension profile, compute sum <= 7, memory sum <= 8.
    """
    entries = tuple(entries)
    footprints: list[tuple[tuple[int, int], Footprint]] = []
    for entry in entries:
        profile_id, start_index = entry
        spec = profile_lookup(profile_id)
        if start_index not in spec.allowed_indexes:
            return LayoutViolation("disallowed-index", (entry,))
        footprints.append((entry, footprint(profile_id, start_index)))

    seen: dict[int, tuple[int, int]] = {}
    for entry, fp in footprints:
        for s in sorted(fp.occupied_slices):
            if s in seen:
                return LayoutViolation("overlapping-footprints", (seen[s], entry))
            seen[s] = entry

    extra_users = tuple(e for e, fp in footprints if fp.uses_extra_memory)
    if len(extra_users) > 1:
        return LayoutViolation("extra-memory-slice-shared", extra_users)

    media = tuple(e for e, _ in footprints if PROFILE_CATALOG[e[0]].has_media_ext)
    if len(media) > 1:
        return LayoutViolation("multiple-media-ext", media)

    total_compute = sum(PROFILE_CATALOG[e[0]].compute_slices for e, _ in footprints)
    if total_compute > COMPUTE_SLICES:
        return LayoutViolation("compute-overcommitted", entries)
    total_memory = sum(PROFILE_CATALOG[e[0]].memory_slices for e, _ in footprints)
    if total_memory > MEMORY_SLICES:
        return LayoutViolation("memory-overcommitted", entries)
    return None


def find_layout(
    profile_ids: Sequence[int],
    fixed: Sequence[tuple[int, int]] = (),
    allowed_slices: Optional[frozenset[int]] = None,
) -> Optional[tuple[tuple[int, int], ...]]:
    """Assign a start index to every profile in ``profile_ids``.

    Backtracking search: profiles largest-first (ascending profile id),
    candidate indexes in catalog preference order. ``fixed`` placements are
    respected but not re-indexed. When ``allowed_slices`` is given, new
    footprints must stay inside it (used to pack inside one free partition).

    Returns ((profile_id, start_index), ...) aligned with the profiles sorted
    ascending by id, or None when no consistent assignment exists.
    """
    items = sorted(profile_ids)
    fixed = tuple(fixed)

    occupied: set[int] = set()
    extra_in_use = False
    media_count = 0
    total_compute = 0
    total_memory = 0
    for pid, idx in fixed:
        fp = footprint(pid, idx)
        occupied.update(fp.occupied_slices)
        extra_in_use = extra_in_use or fp.uses_extra_memory or fp.wasted_extra_memory
        media_count += PROFILE_CATALOG[pid].has_media_ext
        total_compute += PROFILE_CATALOG[pid].compute_slices
        total_memory += PROFILE_CATALOG[pid].memory_slices

    for pid in items:
        spec = PROFILE_CATALOG[pid]
        total_compute += spec.compute_slices
        total_memory += spec.memory_slices
        media_count += spec.has_media_ext
    if total_compute > COMPUTE_SLICES or total_memory > MEMORY_SLICES or media_count > 1:
        return None

    chosen: list[tuple[int, int]] = []

    def backtrack(i: int, extra_used: bool) -> bool:
        if i == len(items):
            return True
        pid = items[i]
        spec = PROFILE_CATALOG[pid]
        # identical profiles are interchangeable: force strictly increasing
        # preference rank within a group to skip permuted duplicates
        min_rank = -1
        if i > 0 and items[i - 1] == pid:
            min_rank = spec.allowed_indexes.index(chosen[-1][1])
        for rank, idx in enumerate(spec.allowed_indexes):
            if rank <= min_rank:
                continue
            fp = footprint(pid, idx)
            if fp.occupied_slices & occupied:
                continue
            if fp.uses_extra_memory and extra_used:
                continue
            if allowed_slices is not None and not fp.occupied_slices <= allowed_slices:
                continue
            occupied.update(fp.occupied_slices)
            chosen.append((pid, idx))
            if backtrack(i + 1, extra_used or fp.uses_extra_memory or fp.wasted_extra_memory):
                return True
            chosen.pop()
            occupied.difference_update(fp.occupied_slices)
        return False

    if backtrack(0, extra_in_use):
        return tuple(chosen)
    return None


@dataclass(frozen=True)
class FreePartition:
    """A contiguous unallocated region treated as a bin by the optimizer."""

    gpu_id: str
    start_index: int
    compute_capacity: int
    memory_capacity: int
    merged: bool = False
    slices: tuple[int, ...] = ()

    @property
    def key(self) -> tuple[str, int]:
        return (self.gpu_id, self.start_index)


def _extra_memory_taken(entries: Sequence[tuple[int, int]]) -> bool:
    for pid, idx in entries:
        fp = footprint(pid, idx)
        if fp.uses_extra_memory or fp.wasted_extra_memory:
            return True
    return False


def _placeable_in_run(
    profile_id: int,
    run_slices: frozenset[int],
    real_entries: Sequence[tuple[int, int]],
) -> bool:
    """True if the profile has some allowed index whose footprint lies inside
    the run and coexists with the GPU's real placements."""
    spec = PROFILE_CATALOG[profile_id]
    for idx in spec.allowed_indexes:
        fp = footprint(profile_id, idx)
        if not fp.occupied_slices <= run_slices:
            continue
        if fp.uses_extra_memory and _extra_memory_taken(real_entries):
            continue
        return True
    return False


def free_partitions(
    gpu_id: str, placements: Sequence[IndexedPlacement | tuple[int, int]]
) -> tuple[FreePartition, ...]:
    """Decompose a GPU's unallocated space into its largest feasible partitions.

    Scans slice indexes in order; at each unpartitioned index, hypothetically
    places the largest profile that fits there and records its capacities as
    one free partition. Runs of adjacent partitions are then merged into a
    single larger bin if and only if every profile that fits the merged
    capacity still has a valid index inside the run; otherwise the run is
    kept as-is (merging would silently drop placements the optimizer is
    allowed to make).
    """
    entries = tuple(
        (p.profile_id, p.start_index) if isinstance(p, IndexedPlacement) else p
        for p in placements
    )
    violation = validate_layout(entries)
    if violation is not None:
        raise InvalidStateError(f"gpu {gpu_id}: {violation}")

    occupied: set[int] = set()
    extra_taken = _extra_memory_taken(entries)
    for pid, idx in entries:
        occupied.update(footprint(pid, idx).occupied_slices)

    raw: list[FreePartition] = []
    for k in range(COMPUTE_SLICES):
        if k in occupied:
            continue
        for pid in PROFILE_IDS_BY_SIZE_DESC:
            spec = PROFILE_CATALOG[pid]
            if spec.has_media_ext:
                continue  # the non-media twin has identical shape and ranks first
            if k not in spec.allowed_indexes:
                continue
            fp = footprint(pid, k)
            if fp.occupied_slices & occupied:
                continue
            if fp.uses_extra_memory and extra_taken:
                continue
            occupied.update(fp.occupied_slices)
            extra_taken = extra_taken or fp.uses_extra_memory or fp.wasted_extra_memory
            raw.append(
                FreePartition(
                    gpu_id=gpu_id,
                    start_index=k,
                    compute_capacity=spec.compute_slices,
                    memory_capacity=spec.memory_slices,
                    merged=False,
                    slices=tuple(sorted(fp.occupied_slices)),
                )
            )
            break

    # group maximal runs of adjacent partitions
    result: list[FreePartition] = []
    run: list[FreePartition] = []

    def flush_run() -> None:
        if not run:
            return
        if len(run) == 1:
            result.append(run[0])
            run.clear()
            return
        run_slices = frozenset(s for part in run for s in part.slices)
        compute_cap = sum(p.compute_capacity for p in run)
        memory_cap = sum(p.memory_capacity for p in run)
        media_present = any(PROFILE_CATALOG[pid].has_media_ext for pid, _ in entries)
        mergeable = True
        for pid, spec in PROFILE_CATALOG.items():
            if spec.compute_slices > compute_cap or spec.memory_slices > memory_cap:
                continue
            if spec.has_media_ext and media_present:
                continue  # unplaceable on this GPU regardless of merging
            if not _placeable_in_run(pid, run_slices, entries):
                mergeable = False
                break
        if mergeable:
            result.append(
                FreePartition(
                    gpu_id=gpu_id,
                    start_index=min(run_slices),
                    compute_capacity=compute_cap,
                    memory_capacity=memory_cap,
                    merged=True,
                    slices=tuple(sorted(run_slices)),
                )
            )
        else:
            result.extend(run)
        run.clear()

    for part in raw:
        if run and part.slices[0] == run[-1].slices[-1] + 1:
            run.append(part)
        else:
            flush_run()
            run.append(part)
    flush_run()
    return tuple(result)


def validate_state(state: ClusterState) -> None:
    """Raise InvalidStateError unless the cluster state is self-consistent."""
    gpu_ids = [gid for gid, _ in state.gpus]
    if len(set(gpu_ids)) != len(gpu_ids):
        raise InvalidStateError("duplicate gpu ids")
    known = set(gpu_ids)

    seen_workloads: set[str] = set()
    for p in state.placements:
        if p.gpu_id not in known:
            raise InvalidStateError(f"placement references unknown gpu {p.gpu_id!r}")
        if p.workload_id is not None:
            if p.workload_id in seen_workloads:
                raise InvalidStateError(f"workload {p.workload_id!r} placed twice")
            seen_workloads.add(p.workload_id)

    for w in state.pending_workloads:
        if w.workload_id in seen_workloads:
            raise InvalidStateError(
                f"workload {w.workload_id!r} is both placed and pending"
            )

    for gid, group in state.placements_by_gpu().items():
        violation = validate_layout((p.profile_id, p.start_index) for p in group)
        if violation is not None:
            raise InvalidStateError(f"gpu {gid}: {violation}")
