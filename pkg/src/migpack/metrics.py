"""Placement-quality metrics for one (initial state, plan) pair.

Nine metrics per evaluation: GPUs used, memory and compute wastage,
availability, migration size, pending model size, sequential-migration
count, and memory/compute utilization over the used GPUs. Per used GPU the
slice accounting always balances: used + free + wasted slices equal the
GPU's 7 compute and 8 memory slices.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping, Sequence

from .feasibility import footprint
from .model import (
    ClusterState,
    PROFILE_CATALOG,
    PlacementPlan,
)


@dataclass(frozen=True)
class MetricsReport:
    gpus_used: int
    memory_wastage: int  # memory slices stranded behind 1g profiles on the last slice
    compute_wastage: int  # compute slices buried inside oversized footprints
    availability: float  # free GPU slices cluster-wide, minus pending demand
    migration_size: int  # memory slices of workloads that changed GPU
    pending_model_size: int  # memory slices of unplaced workloads
    sequential_migrations: int
    memory_utilization: float
    compute_utilization: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_NAMES: tuple[str, ...] = tuple(f.name for f in fields(MetricsReport))


def sequential_migrations(initial: ClusterState, plan: PlacementPlan) -> tuple[int, tuple[str, ...]]:
    """Moves whose destination slices were occupied in the initial state.

    Such a move cannot run until the blocking workload vacates, so it needs
    sequential steps. Only cross-GPU moves count; repartitioned GPUs are
    checked against the physical GPU's initial occupancy all the same.
    """
    occupied_initial: dict[str, set[int]] = {}
    for p in initial.placements:
        occupied_initial.setdefault(p.gpu_id, set()).update(
            footprint(p.profile_id, p.start_index).occupied_slices
        )
    profile_of = {
        p.workload_id: p.profile_id
        for p in plan.final_state.placements
        if p.workload_id is not None
    }
    offenders = []
    for m in plan.migrations:
        if m.from_gpu is None or m.from_gpu == m.to_gpu:
            continue
        dest = footprint(profile_of[m.workload_id], m.to_index).occupied_slices
        if dest & occupied_initial.get(m.to_gpu, set()):
            offenders.append(m.workload_id)
    return len(offenders), tuple(offenders)


def evaluate(initial: ClusterState, plan: PlacementPlan) -> MetricsReport:
    """Compute the full metric set for a plan against its initial state."""
    final = plan.final_state
    by_gpu = final.placements_by_gpu()

    gpus_used = 0
    used_compute = 0
    used_memory = 0
    compute_wastage = 0
    memory_wastage = 0
    free_slices = 0
    for gid, _spec in final.gpus:
        group = by_gpu[gid]
        occupied = 0
        for p in group:
            fp = footprint(p.profile_id, p.start_index)
            occupied += len(fp.occupied_slices)
            compute_wastage += fp.wasted_compute_slices
            memory_wastage += fp.wasted_extra_memory
            used_compute += p.profile.compute_slices
            used_memory += p.profile.memory_slices
        free_slices += final.spec_for(gid).total_compute - occupied
        if group:
            gpus_used += 1

    pending_gpu_slices = sum(
        PROFILE_CATALOG[w.profile_id].gpu_slices for w in final.pending_workloads
    )
    pending_memory = sum(
        PROFILE_CATALOG[w.profile_id].memory_slices for w in final.pending_workloads
    )
    availability = float(free_slices - pending_gpu_slices)

    initial_gpu = {
        p.workload_id: p.gpu_id for p in initial.placements if p.workload_id is not None
    }
    migration_size = 0
    for m in plan.migrations:
        src = initial_gpu.get(m.workload_id)
        if src is not None and src != m.to_gpu:
            migration_size += PROFILE_CATALOG[
                profile_of_final(final, m.workload_id)
            ].memory_slices

    seq_count, _ = sequential_migrations(initial, plan)

    if gpus_used:
        total_c = sum(final.spec_for(g).total_compute for g, _ in final.gpus if by_gpu[g])
        total_m = sum(
            final.spec_for(g).total_memory_slices for g, _ in final.gpus if by_gpu[g]
        )
        compute_utilization = used_compute / total_c
        memory_utilization = used_memory / total_m
    else:
        compute_utilization = 0.0
        memory_utilization = 0.0

    return MetricsReport(
        gpus_used=gpus_used,
        memory_wastage=memory_wastage,
        compute_wastage=compute_wastage,
        availability=availability,
        migration_size=migration_size,
        pending_model_size=pending_memory,
        sequential_migrations=seq_count,
        memory_utilization=memory_utilization,
        compute_utilization=compute_utilization,
    )


def profile_of_final(final: ClusterState, workload_id: str) -> int:
    for p in final.placements:
        if p.workload_id == workload_id:
            return p.profile_id
    raise KeyError(f"workload {workload_id!r} not in final placement")


def normalize(
    reports: Mapping[str, Sequence[MetricsReport]]
) -> tuple[dict[str, dict[str, float]], dict[str, dict[str, float]]]:
    """Average each metric per approach, then scale by the best (max) average.

    Returns (averages, normalized). All approaches must have evaluated the
    same number of cases; an all-zero metric column normalizes to zeros.
    """
    if not reports:
        raise ValueError("at least one approach required")
    counts = {name: len(rs) for name, rs in reports.items()}
    if len(set(counts.values())) != 1:
        raise ValueError(f"mismatched case counts: {counts}")

    averages: dict[str, dict[str, float]] = {}
    for name, rs in reports.items():
        averages[name] = {
            metric: (sum(r.as_dict()[metric] for r in rs) / len(rs)) if rs else 0.0
            for metric in METRIC_NAMES
        }
    normalized: dict[str, dict[str, float]] = {}
    for metric in METRIC_NAMES:
        top = max(abs(avg[metric]) for avg in averages.values())
        for name in reports:
            normalized.setdefault(name, {})[metric] = (
                averages[name][metric] / top if top else 0.0
            )
    return averages, normalized
