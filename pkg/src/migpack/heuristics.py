"""Rule-based placement procedures and the two baseline schedulers.

The rule-based family handles each use case separately: best-fit initial
deployment over free partitions, iterative compaction that vacates
underutilized GPUs in single-shot moves, and reconfiguration that re-places
everything on a minimal GPU count. The baselines (first-fit by id,
load-balanced) model the schedulers commonly found in practice: both pick
the lowest-numbered feasible index, which is exactly what makes them waste
slices and strand large profiles.

All procedures are deterministic: every sort has a total key and ties are
broken by identifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .feasibility import FreePartition, footprint, free_partitions, validate_state
from .model import (
    ClusterState,
    IndexedPlacement,
    Migration,
    PlacementPlan,
    PROFILE_CATALOG,
    Workload,
    joint_slice_utilization,
    min_gpus,
)


class _GpuBuild:
    """Incremental per-GPU layout with the placement legality checks."""

    __slots__ = ("gpu_id", "placements", "occupied", "extra_taken", "media")

    def __init__(self, gpu_id: str, placements: Iterable[IndexedPlacement] = ()):
        self.gpu_id = gpu_id
        self.placements: list[IndexedPlacement] = []
        self.occupied: set[int] = set()
        self.extra_taken = False
        self.media = 0
        for p in placements:
            self.place(p)

    def can_place(self, profile_id: int, index: int) -> bool:
        spec = PROFILE_CATALOG[profile_id]
        if index not in spec.allowed_indexes:
            return False
        fp = footprint(profile_id, index)
        if fp.occupied_slices & self.occupied:
            return False
        if fp.uses_extra_memory and self.extra_taken:
            return False
        if spec.has_media_ext and self.media >= 1:
            return False
        return True

    def place(self, placement: IndexedPlacement) -> None:
        fp = footprint(placement.profile_id, placement.start_index)
        self.placements.append(placement)
        self.occupied.update(fp.occupied_slices)
        self.extra_taken = self.extra_taken or fp.uses_extra_memory or fp.wasted_extra_memory
        self.media += PROFILE_CATALOG[placement.profile_id].has_media_ext

    def utilization(self) -> float:
        return joint_slice_utilization(self.placements)

    @property
    def allocated(self) -> bool:
        return bool(self.placements)


def _builds_from(state: ClusterState) -> dict[str, _GpuBuild]:
    by_gpu = state.placements_by_gpu()
    return {gid: _GpuBuild(gid, by_gpu[gid]) for gid, _ in state.gpus}


def _plan_from_builds(
    initial: ClusterState,
    builds: dict[str, _GpuBuild],
    pending: Sequence[Workload],
    repartitioned: frozenset[str] = frozenset(),
) -> PlacementPlan:
    placements = tuple(
        p for gid in initial.gpu_ids for p in builds[gid].placements
    )
    # workloads pending in the input state stay pending unless this plan
    # placed them (an operator may resubmit them in the batch)
    placed_ids = {p.workload_id for p in placements}
    new_pending = {w.workload_id for w in pending}
    carried = tuple(
        w
        for w in initial.pending_workloads
        if w.workload_id not in placed_ids and w.workload_id not in new_pending
    )
    final = ClusterState(
        gpus=initial.gpus,
        placements=placements,
        pending_workloads=tuple(pending) + carried,
    )
    validate_state(final)

    before = {
        p.workload_id: (p.gpu_id, p.start_index)
        for p in initial.placements
        if p.workload_id is not None
    }
    migrations = []
    for p in placements:
        if p.workload_id is None:
            continue
        src = before.get(p.workload_id)
        if src != (p.gpu_id, p.start_index):
            migrations.append(
                Migration(p.workload_id, src[0] if src else None, p.gpu_id, p.start_index)
            )
    return PlacementPlan(
        final_state=final,
        migrations=tuple(migrations),
        repartitioned_gpus=repartitioned,
        pending=tuple(w.workload_id for w in pending),
    )


def _preferred_index_in_partition(
    build: _GpuBuild, profile_id: int, part: FreePartition
) -> Optional[int]:
    region = frozenset(part.slices)
    for idx in PROFILE_CATALOG[profile_id].allowed_indexes:
        if not build.can_place(profile_id, idx):
            continue
        if footprint(profile_id, idx).occupied_slices <= region:
            return idx
    return None


@dataclass(frozen=True)
class _Fit:
    utilization: float
    gpu_rank: int
    gpu_id: str
    start_index: int
    index: int


def _best_fit(
    workload: Workload,
    builds: dict[str, _GpuBuild],
    gpu_rank: dict[str, int],
    receivers: Iterable[str],
) -> Optional[_Fit]:
    """Free partition maximizing post-assignment joint utilization.

    Ties prefer the GPU ranked earlier (less utilized at sort time), then the
    lower gpu id, then the lower partition start.
    """
    spec = PROFILE_CATALOG[workload.profile_id]
    best: Optional[_Fit] = None
    for gid in receivers:
        build = builds[gid]
        for part in free_partitions(gid, build.placements):
            if spec.compute_slices > part.compute_capacity:
                continue
            if spec.memory_slices > part.memory_capacity:
                continue
            idx = _preferred_index_in_partition(build, workload.profile_id, part)
            if idx is None:
                continue
            util = (spec.compute_slices + spec.memory_slices) / (
                part.compute_capacity + part.memory_capacity
            )
            fit = _Fit(util, gpu_rank[gid], gid, part.start_index, idx)
            if best is None or (
                (-fit.utilization, fit.gpu_rank, fit.gpu_id, fit.start_index)
                < (-best.utilization, best.gpu_rank, best.gpu_id, best.start_index)
            ):
                best = fit
    return best


def _utilization_rank(builds: dict[str, _GpuBuild], gpu_ids: Sequence[str]) -> dict[str, int]:
    order = sorted(gpu_ids, key=lambda g: (builds[g].utilization(), g))
    return {gid: i for i, gid in enumerate(order)}


def _size_order(workloads: Iterable[Workload]) -> list[Workload]:
    """Descending size: ascending profile id, then id for determinism."""
    return sorted(workloads, key=lambda w: (w.profile_id, w.workload_id))


def place_initial(state: ClusterState, new_workloads: Sequence[Workload]) -> PlacementPlan:
    """Best-fit deployment of new workloads; existing placements never move.

    Workloads go largest-first into the free partition whose joint
    utilization after the assignment is highest, at that profile's preferred
    feasible index. A free GPU is drafted only when no allocated GPU fits,
    and workloads with no home anywhere go pending.
    """
    validate_state(state)
    builds = _builds_from(state)
    gpu_rank = _utilization_rank(builds, list(state.gpu_ids))
    pending: list[Workload] = []

    for w in _size_order(new_workloads):
        receivers = [g for g in state.gpu_ids if builds[g].allocated]
        fit = _best_fit(w, builds, gpu_rank, receivers)
        if fit is not None:
            builds[fit.gpu_id].place(
                IndexedPlacement(fit.gpu_id, w.workload_id, w.profile_id, fit.index, w.movable)
            )
            continue
        fresh = next(
            (gid for gid in state.gpu_ids if not builds[gid].allocated), None
        )
        if fresh is not None:
            idx = PROFILE_CATALOG[w.profile_id].allowed_indexes[0]
            builds[fresh].place(
                IndexedPlacement(fresh, w.workload_id, w.profile_id, idx, w.movable)
            )
        else:
            pending.append(w)

    return _plan_from_builds(state, builds, pending)


def first_fit(state: ClusterState, new_workloads: Sequence[Workload]) -> PlacementPlan:
    """Id-ordered workloads onto id-ordered GPUs at the lowest free index."""
    validate_state(state)
    builds = _builds_from(state)
    gpu_order = sorted(state.gpu_ids)
    pending: list[Workload] = []

    for w in sorted(new_workloads, key=lambda w: w.workload_id):
        placed = False
        for gid in gpu_order:
            build = builds[gid]
            for idx in sorted(PROFILE_CATALOG[w.profile_id].allowed_indexes):
                if build.can_place(w.profile_id, idx):
                    build.place(
                        IndexedPlacement(gid, w.workload_id, w.profile_id, idx, w.movable)
                    )
                    placed = True
                    break
            if placed:
                break
        if not placed:
            pending.append(w)

    return _plan_from_builds(state, builds, pending)


def load_balanced(state: ClusterState, new_workloads: Sequence[Workload]) -> PlacementPlan:
    """Arrival-ordered workloads onto the least-utilized GPU, lowest index first.

    Each workload is offered only the front GPU of the utilization-sorted
    order (that is what balances load); a workload the front GPU cannot host
    at any of its allowed indexes goes pending.
    """
    validate_state(state)
    builds = _builds_from(state)
    pending: list[Workload] = []

    for w in new_workloads:
        gid = min(state.gpu_ids, key=lambda g: (builds[g].utilization(), g))
        build = builds[gid]
        placed = False
        for idx in sorted(PROFILE_CATALOG[w.profile_id].allowed_indexes):
            if build.can_place(w.profile_id, idx):
                build.place(
                    IndexedPlacement(gid, w.workload_id, w.profile_id, idx, w.movable)
                )
                placed = True
                break
        if not placed:
            pending.append(w)

    return _plan_from_builds(state, builds, pending)


def compact(state: ClusterState, spare_gpus: Optional[int] = None) -> PlacementPlan:
    """Vacate underutilized GPUs by re-placing their workloads elsewhere.

    Least-utilized GPUs are tried first; a GPU is vacated only when all of
    its (movable) workloads re-place onto other allocated GPUs via the
    initial-deployment best fit, which keeps every move single-shot. When
    that stalls, one initially free GPU is enlisted and the sweep re-run,
    accepted only if it nets at least one saved GPU. ``spare_gpus`` caps how
    many spares may be enlisted (None: all initially free GPUs).
    """
    validate_state(state)

    def place_one(w, builds, receivers, rank):
        fit = _best_fit(w, builds, rank, receivers)
        return (fit.gpu_id, fit.index) if fit else None

    builds = _builds_from(state)
    spares = list(state.free_gpu_ids())
    if spare_gpus is not None:
        spares = spares[:spare_gpus]

    def vacate_candidates(builds: dict[str, _GpuBuild]) -> list[str]:
        allocated = [g for g in state.gpu_ids if builds[g].allocated]
        movable_only = [
            g
            for g in allocated
            if all(p.movable and p.workload_id is not None for p in builds[g].placements)
        ]
        return sorted(movable_only, key=lambda g: (builds[g].utilization(), g))

    def try_vacate(builds: dict[str, _GpuBuild], gpu_id: str, receivers: list[str]) -> Optional[dict[str, _GpuBuild]]:
        trial = {g: _GpuBuild(g, b.placements) for g, b in builds.items()}
        trial[gpu_id] = _GpuBuild(gpu_id)
        rank = _utilization_rank(builds, receivers)
        residents = [
            Workload(p.workload_id, p.profile_id, p.movable)
            for p in builds[gpu_id].placements
        ]
        for w in _size_order(residents):
            slot = place_one(w, trial, receivers, rank)
            if slot is None:
                return None
            gid, idx = slot
            trial[gid].place(
                IndexedPlacement(gid, w.workload_id, w.profile_id, idx, w.movable)
            )
        return trial

    def sweep(builds: dict[str, _GpuBuild], extra_receiver: Optional[str]) -> int:
        vacated = 0
        progress = True
        while progress:
            progress = False
            for gid in vacate_candidates(builds):
                if gid == extra_receiver:
                    continue
                receivers = [
                    g
                    for g in state.gpu_ids
                    if g != gid and (builds[g].allocated or g == extra_receiver)
                ]
                trial = try_vacate(builds, gid, receivers)
                if trial is not None:
                    builds.clear()
                    builds.update(trial)
                    vacated += 1
                    progress = True
                    break
        return vacated

    sweep(builds, None)
    while spares:
        spare = spares.pop(0)
        candidate = {g: _GpuBuild(g, b.placements) for g, b in builds.items()}
        vacated = sweep(candidate, spare)
        spare_used = candidate[spare].allocated
        if vacated - (1 if spare_used else 0) >= 1:
            builds = candidate
            sweep(builds, None)
        else:
            break

    return _plan_from_builds(state, builds, [])


def reconfigure(state: ClusterState) -> PlacementPlan:
    """Re-place all workloads on the fewest GPUs, fresh layout per target.

    Starts from the per-dimension GPU lower bound, preferring free (then
    least-utilized) targets. Extra-memory profiles are seeded first (one per
    GPU: 3g at index 4, then 1g.20gb at index 6) to avoid memory waste; the
    rest packs first-fit in size order at preferred indexes. On a packing
    failure the GPU count is incremented and the process re-run.
    """
    validate_state(state)
    by_gpu = state.placements_by_gpu()
    initial_builds = _builds_from(state)

    movable: list[tuple[Workload, str, int]] = []
    pinned: list[IndexedPlacement] = []
    for p in state.placements:
        if p.workload_id is None or not p.movable:
            pinned.append(p)
        else:
            movable.append((Workload(p.workload_id, p.profile_id, True), p.gpu_id, p.start_index))

    all_workloads = [Workload(p.workload_id, p.profile_id, p.movable)
                     for p in state.placements if p.workload_id is not None]
    pinned_gpus = sorted({p.gpu_id for p in pinned})
    floor = max(min_gpus(all_workloads), len(pinned_gpus))
    total = len(state.gpus)

    src_gpu = {w.workload_id: g for w, g, _ in movable}
    src_fp = {
        w.workload_id: footprint(w.profile_id, idx).occupied_slices
        for w, _, idx in movable
    }

    def self_conflict(workload_id: str, gpu_id: str, profile_id: int, index: int) -> bool:
        # a workload may retake its exact slot or land clear of it, but a
        # partial overlap with its own old slot cannot be executed
        if src_gpu.get(workload_id) != gpu_id:
            return False
        own = src_fp[workload_id]
        new = footprint(profile_id, index).occupied_slices
        return bool(own & new) and own != new

    def attempt(n_targets: int, best_effort: bool):
        ranked = sorted(
            state.gpu_ids, key=lambda g: (initial_builds[g].utilization(), g)
        )
        targets = list(pinned_gpus)
        for gid in ranked:
            if len(targets) >= n_targets:
                break
            if gid not in targets:
                targets.append(gid)
        targets.sort(key=lambda g: (initial_builds[g].utilization(), g))

        builds = {gid: _GpuBuild(gid) for gid, _ in state.gpus}
        for p in pinned:
            builds[p.gpu_id].place(p)

        def place_at(w: Workload, gid: str, idx: int) -> bool:
            if not builds[gid].can_place(w.profile_id, idx):
                return False
            if self_conflict(w.workload_id, gid, w.profile_id, idx):
                return False
            builds[gid].place(
                IndexedPlacement(gid, w.workload_id, w.profile_id, idx, True)
            )
            return True

        overflow: list[Workload] = []
        nines = sorted((w for w, _, _ in movable if w.profile_id == 9), key=lambda w: w.workload_id)
        fifteens = sorted((w for w, _, _ in movable if w.profile_id == 15), key=lambda w: w.workload_id)
        for group, idx in ((nines, 4), (fifteens, 6)):
            for w in group:
                if not any(place_at(w, gid, idx) for gid in targets):
                    overflow.append(w)

        rest = [w for w, _, _ in movable if w.profile_id not in (9, 15)] + overflow
        pending: list[Workload] = []
        for w in _size_order(rest):
            placed = False
            for gid in targets:
                for idx in PROFILE_CATALOG[w.profile_id].allowed_indexes:
                    if place_at(w, gid, idx):
                        placed = True
                        break
                if placed:
                    break
            if not placed:
                if best_effort:
                    pending.append(w)
                else:
                    return None
        return builds, pending

    n = floor
    result = None
    while n <= total:
        result = attempt(n, best_effort=False)
        if result is not None:
            break
        n += 1
    if result is None:
        result = attempt(total, best_effort=True)
    builds, pending = result

    repartitioned = frozenset(
        gid
        for gid in state.gpu_ids
        if by_gpu[gid]
        and builds[gid].allocated
        and sorted((p.profile_id, p.start_index) for p in by_gpu[gid])
        != sorted((p.profile_id, p.start_index) for p in builds[gid].placements)
    )
    return _plan_from_builds(state, builds, pending, repartitioned)
