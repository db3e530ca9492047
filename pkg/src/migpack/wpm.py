"""Workload placement and migration model, solved exactly.

The cluster is modeled as a two-dimensional (compute x memory slices, plus a
media-extension side constraint) bin-packing problem. Bins are free GPUs,
free partitions of partially used GPUs, one "imaginary" twin per fully
movable used GPU (activating it means repartitioning the original from
scratch; at most one of the pair may be used), and one stay slot per movable
placed workload. The objective rewards placements and charges GPU usage,
repartitions, migrations, and wasted slices, with weights ordered so that
placing beats saving a GPU, which beats every penalty combined.

``solve`` runs a deterministic best-first branch and bound over workload/bin
assignments and returns either a proven optimum or the best incumbent with a
valid optimality gap. ``index_solution`` turns the bin-level answer into
concrete slice indexes.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .feasibility import (
    FreePartition,
    LayoutInfeasibleError,
    find_layout,
    footprint,
    free_partitions,
    validate_state,
)
from .model import (
    ClusterState,
    IndexedPlacement,
    Migration,
    PlacementPlan,
    PROFILE_CATALOG,
    Workload,
)


class TranslationError(ValueError):
    """A placement plan has no counterpart point in the model."""


@dataclass(frozen=True)
class WpmWeights:
    """Objective weights; the defaults keep the intended dominance chain."""

    placement_reward: float = 1e6   # per placed workload
    gpu_cost: float = 1e3           # per used GPU
    repartition_penalty: float = 10.0  # per repartitioned (imaginary) GPU
    migration_penalty: float = 1.0     # per cross-GPU workload move
    waste_penalty: float = 0.05        # per wasted compute or memory slice


def default_weights(n_gpus: int, n_workloads: int) -> WpmWeights:
    """Default weights, rescaled so the dominance chain holds at this size.

    Chain: one placement reward beats using every GPU; one GPU saved beats
    all migrations, repartitions, and waste the instance could accrue.
    Penalties scale down (and the reward up) as instance size grows.
    """
    w = WpmWeights()
    # worst-case penalty mass: every workload migrates, every GPU
    # repartitions, every bin is fully wasted (bins <= ~6 per GPU)
    waste_mass = 6 * max(1, n_gpus) * 15 * w.waste_penalty
    budget = n_workloads * w.migration_penalty + n_gpus * w.repartition_penalty + waste_mass
    if budget >= w.gpu_cost:
        scale = w.gpu_cost / (2.0 * budget)
        w = replace(
            w,
            migration_penalty=w.migration_penalty * scale,
            repartition_penalty=w.repartition_penalty * scale,
            waste_penalty=w.waste_penalty * scale,
        )
    gpu_mass = 2 * max(1, n_gpus) * w.gpu_cost
    if gpu_mass + budget >= w.placement_reward:
        w = replace(w, placement_reward=2.0 * (gpu_mass + budget))
    return w


@dataclass(frozen=True)
class WpmBin:
    """One bin the search can assign workloads to."""

    bin_id: str
    kind: str  # "partition" | "free" | "imaginary" | "stay"
    gpu_id: str
    compute_cap: int
    memory_cap: int
    slices: tuple[int, ...] = ()
    stay_workload: Optional[str] = None
    stay_index: Optional[int] = None
    partition: Optional[FreePartition] = None


@dataclass(frozen=True)
class WpmItem:
    """One workload as the model sees it."""

    workload_id: str
    profile_id: int
    compute: int
    memory: int
    media_ext: bool
    reward: float
    migration_penalty: float
    movable: bool = True
    source_gpu: Optional[str] = None
    source_index: Optional[int] = None
    stay_bin: Optional[str] = None


@dataclass(frozen=True)
class WpmInstance:
    """Sets, parameters, and weights of one placement-and-migration problem."""

    state: ClusterState
    items: tuple[WpmItem, ...]
    bins: tuple[WpmBin, ...]
    weights: WpmWeights
    forced_used_gpus: frozenset[str]
    imaginary_of: Mapping[str, str]  # used gpu id -> imaginary bin id
    fixed_media_ext: Mapping[str, int] = field(default_factory=dict)

    def bins_by_id(self) -> dict[str, WpmBin]:
        return {b.bin_id: b for b in self.bins}

    def items_by_id(self) -> dict[str, WpmItem]:
        return {i.workload_id: i for i in self.items}

    @property
    def free_gpu_bins(self) -> tuple[WpmBin, ...]:
        return tuple(b for b in self.bins if b.kind == "free")

    @property
    def partition_bins(self) -> tuple[WpmBin, ...]:
        return tuple(b for b in self.bins if b.kind == "partition")

    @property
    def imaginary_bins(self) -> tuple[WpmBin, ...]:
        return tuple(b for b in self.bins if b.kind == "imaginary")

    @property
    def stay_bins(self) -> tuple[WpmBin, ...]:
        return tuple(b for b in self.bins if b.kind == "stay")

    @property
    def used_gpu_ids(self) -> tuple[str, ...]:
        """G': GPUs carrying preexisting partitions."""
        return self.state.allocated_gpu_ids()

    @property
    def current_assignments(self) -> tuple[tuple[str, str], ...]:
        """A: (workload, gpu) pairs for movable placed workloads."""
        return tuple(
            (i.workload_id, i.source_gpu) for i in self.items if i.stay_bin is not None
        )

    @property
    def gpu_pairs(self) -> tuple[tuple[str, str], ...]:
        """B: (original gpu, imaginary bin) pairs."""
        return tuple(self.imaginary_of.items())


def build_instance(
    state: ClusterState,
    new_workloads: Sequence[Workload] = (),
    weights: Optional[WpmWeights] = None,
    *,
    pin_existing: bool = False,
) -> WpmInstance:
    """Assemble the model from a cluster state and workloads to place.

    Placed workloads flagged movable join the decision set with a stay slot
    each; a used GPU whose residents are all movable gets an imaginary twin.
    ``pin_existing`` freezes every placed workload in place (the initial
    deployment mode): only the new workloads are decided and no imaginary
    GPUs exist.
    """
    validate_state(state)
    by_gpu = state.placements_by_gpu()
    used_gpus = state.allocated_gpu_ids()
    free_gpus = state.free_gpu_ids()

    movable_placements: list[IndexedPlacement] = []
    forced_used: set[str] = set()
    fixed_media: dict[str, int] = {}
    for gid in used_gpus:
        for p in by_gpu[gid]:
            pinned = pin_existing or not p.movable or p.workload_id is None
            if pinned:
                # an immovable resident keeps the GPU in use in every outcome
                forced_used.add(gid)
                if PROFILE_CATALOG[p.profile_id].has_media_ext:
                    fixed_media[gid] = fixed_media.get(gid, 0) + 1
            else:
                movable_placements.append(p)

    if weights is None:
        n_items = len(movable_placements) + len(new_workloads)
        weights = default_weights(len(state.gpus), n_items)

    bins: list[WpmBin] = []
    for gid in used_gpus:
        for part in free_partitions(gid, by_gpu[gid]):
            bins.append(
                WpmBin(
                    bin_id=f"part:{gid}:{part.start_index}",
                    kind="partition",
                    gpu_id=gid,
                    compute_cap=part.compute_capacity,
                    memory_cap=part.memory_capacity,
                    slices=part.slices,
                    partition=part,
                )
            )
    for gid in free_gpus:
        spec = state.spec_for(gid)
        bins.append(
            WpmBin(
                bin_id=f"free:{gid}",
                kind="free",
                gpu_id=gid,
                compute_cap=spec.total_compute,
                memory_cap=spec.total_memory_slices,
            )
        )
    imaginary_of: dict[str, str] = {}
    for gid in used_gpus:
        if gid in forced_used:
            continue
        spec = state.spec_for(gid)
        bin_id = f"imag:{gid}"
        imaginary_of[gid] = bin_id
        bins.append(
            WpmBin(
                bin_id=bin_id,
                kind="imaginary",
                gpu_id=gid,
                compute_cap=spec.total_compute,
                memory_cap=spec.total_memory_slices,
            )
        )

    items: list[WpmItem] = []
    for p in movable_placements:
        assert p.workload_id is not None
        spec = PROFILE_CATALOG[p.profile_id]
        stay_id = f"stay:{p.workload_id}"
        bins.append(
            WpmBin(
                bin_id=stay_id,
                kind="stay",
                gpu_id=p.gpu_id,
                compute_cap=spec.compute_slices,
                memory_cap=spec.memory_slices,
                stay_workload=p.workload_id,
                stay_index=p.start_index,
            )
        )
        items.append(
            WpmItem(
                workload_id=p.workload_id,
                profile_id=p.profile_id,
                compute=spec.compute_slices,
                memory=spec.memory_slices,
                media_ext=spec.has_media_ext,
                reward=weights.placement_reward,
                migration_penalty=weights.migration_penalty,
                movable=True,
                source_gpu=p.gpu_id,
                source_index=p.start_index,
                stay_bin=stay_id,
            )
        )
    for w in new_workloads:
        spec = PROFILE_CATALOG[w.profile_id]
        items.append(
            WpmItem(
                workload_id=w.workload_id,
                profile_id=w.profile_id,
                compute=spec.compute_slices,
                memory=spec.memory_slices,
                media_ext=spec.has_media_ext,
                reward=weights.placement_reward if w.reward is None else w.reward,
                migration_penalty=0.0,
                movable=w.movable,
                source_gpu=None,
                source_index=None,
                stay_bin=None,
            )
        )

    return WpmInstance(
        state=state,
        items=tuple(items),
        bins=tuple(bins),
        weights=weights,
        forced_used_gpus=frozenset(forced_used),
        imaginary_of=imaginary_of,
        fixed_media_ext=fixed_media,
    )


# ---------------------------------------------------------------------------
# assignment semantics (shared by the solver, the oracle tests, and plans)


def assignment_infeasibility(
    instance: WpmInstance, assignment: Mapping[str, Optional[str]]
) -> Optional[str]:
    """Return the first broken constraint for ``assignment``, or None."""
    bins = instance.bins_by_id()
    load_c: dict[str, int] = {}
    load_m: dict[str, int] = {}
    media: dict[str, int] = dict(instance.fixed_media_ext)
    gpu_retains: set[str] = set()  # used GPUs kept active by a stay or partition
    imag_active: set[str] = set()  # original gpu ids whose twin is active

    for item in instance.items:
        bin_id = assignment.get(item.workload_id)
        if bin_id is None:
            continue
        b = bins.get(bin_id)
        if b is None:
            return f"unknown bin {bin_id!r}"
        if b.kind == "stay":
            if b.stay_workload != item.workload_id:
                return f"stay bin {bin_id} used by {item.workload_id}"
            gpu_retains.add(b.gpu_id)
        else:
            load_c[bin_id] = load_c.get(bin_id, 0) + item.compute
            load_m[bin_id] = load_m.get(bin_id, 0) + item.memory
            if b.kind == "partition":
                gpu_retains.add(b.gpu_id)
            elif b.kind == "imaginary":
                imag_active.add(b.gpu_id)
        if item.media_ext:
            scope = b.bin_id if b.kind in ("free", "imaginary") else b.gpu_id
            media[scope] = media.get(scope, 0) + 1

    for bin_id, c in load_c.items():
        b = bins[bin_id]
        if c > b.compute_cap or load_m[bin_id] > b.memory_cap:
            return f"bin {bin_id} over capacity"
    for scope, count in media.items():
        if count > 1:
            return f"more than one media-ext workload on {scope}"
    conflict = imag_active & (gpu_retains | set(instance.forced_used_gpus))
    if conflict:
        return f"imaginary twin and original both active: {sorted(conflict)}"
    return None


def _bin_waste(compute_cap: int, memory_cap: int, used_c: int, used_m: int) -> int:
    """Wasted slices of one used bin: compute slack exceeding memory slack,
    plus memory slack stranded behind a full compute dimension."""
    if used_c == 0 and used_m == 0:
        return 0
    slack_c = compute_cap - used_c
    slack_m = memory_cap - used_m
    wasted_compute = max(0, slack_c - slack_m)
    wasted_memory = slack_m if slack_c == 0 else 0
    return wasted_compute + wasted_memory


def evaluate_assignment(
    instance: WpmInstance, assignment: Mapping[str, Optional[str]]
) -> float:
    """Exact objective value of a feasible assignment.

    Single source of truth for the objective: the solver, the enumeration
    oracle, and plan translations all call this, so equal outcomes produce
    bit-identical floats.
    """
    reason = assignment_infeasibility(instance, assignment)
    if reason is not None:
        raise ValueError(f"infeasible assignment: {reason}")
    w = instance.weights
    bins = instance.bins_by_id()

    reward = 0.0
    migration = 0.0
    load_c: dict[str, int] = {}
    load_m: dict[str, int] = {}
    gpu_retains: set[str] = set()
    imag_active: set[str] = set()

    for item in instance.items:
        bin_id = assignment.get(item.workload_id)
        if bin_id is not None:
            reward += item.reward
            b = bins[bin_id]
            if b.kind == "stay":
                gpu_retains.add(b.gpu_id)
            else:
                load_c[bin_id] = load_c.get(bin_id, 0) + item.compute
                load_m[bin_id] = load_m.get(bin_id, 0) + item.memory
                if b.kind == "partition":
                    gpu_retains.add(b.gpu_id)
                elif b.kind == "imaginary":
                    imag_active.add(b.gpu_id)
        if item.source_gpu is not None:
            stays = bin_id == item.stay_bin
            to_own_twin = (
                bin_id is not None and bin_id == instance.imaginary_of.get(item.source_gpu)
            )
            if not stays and not to_own_twin:
                migration += item.migration_penalty

    used_gpus = 0
    for b in instance.bins:
        if b.kind == "free" and load_c.get(b.bin_id, 0) > 0:
            used_gpus += 1
    used_gpus += len(imag_active)
    used_gpus += len(set(instance.forced_used_gpus) | gpu_retains)

    waste = 0
    for b in instance.bins:
        if b.kind in ("partition", "free", "imaginary"):
            waste += _bin_waste(
                b.compute_cap, b.memory_cap, load_c.get(b.bin_id, 0), load_m.get(b.bin_id, 0)
            )

    return (
        reward
        - w.gpu_cost * used_gpus
        - w.repartition_penalty * len(imag_active)
        - migration
        - w.waste_penalty * waste
    )


@dataclass(frozen=True)
class WpmSolution:
    """Solved variable values plus search metadata."""

    assignment: Mapping[str, Optional[str]]  # x: workload -> bin (None = pending)
    objective: float
    optimality_gap: float
    solve_status: str  # "optimal" | "time-capped" | "infeasible"
    gpu_used: Mapping[str, int]  # y per GPU / imaginary bin
    partition_used: Mapping[str, int]  # z per partition bin
    compute_slack: Mapping[str, int]  # u per packing bin
    memory_slack: Mapping[str, int]  # v per packing bin
    wasted_compute: Mapping[str, int]  # U per packing bin
    wasted_memory: Mapping[str, int]  # V per packing bin
    compute_open: Mapping[str, int]  # delta: 1 iff compute slack remains
    nodes_explored: int = 0
    wall_time: float = 0.0


def _solution_details(
    instance: WpmInstance, assignment: Mapping[str, Optional[str]]
) -> dict[str, dict[str, int]]:
    bins = instance.bins_by_id()
    load_c: dict[str, int] = {}
    load_m: dict[str, int] = {}
    gpu_retains: set[str] = set(instance.forced_used_gpus)
    imag_active: set[str] = set()
    for item in instance.items:
        bin_id = assignment.get(item.workload_id)
        if bin_id is None:
            continue
        b = bins[bin_id]
        if b.kind == "stay":
            gpu_retains.add(b.gpu_id)
        else:
            load_c[bin_id] = load_c.get(bin_id, 0) + item.compute
            load_m[bin_id] = load_m.get(bin_id, 0) + item.memory
            if b.kind == "partition":
                gpu_retains.add(b.gpu_id)
            elif b.kind == "imaginary":
                imag_active.add(b.gpu_id)

    gpu_used: dict[str, int] = {}
    for gid in instance.state.gpu_ids:
        gpu_used[gid] = 0
    for b in instance.bins:
        if b.kind == "free":
            gpu_used[b.gpu_id] = 1 if load_c.get(b.bin_id, 0) > 0 else 0
        elif b.kind == "imaginary":
            gpu_used[b.bin_id] = 1 if b.gpu_id in imag_active else 0
    for gid in instance.used_gpu_ids:
        gpu_used[gid] = 1 if gid in gpu_retains else 0

    partition_used: dict[str, int] = {}
    slack_c: dict[str, int] = {}
    slack_m: dict[str, int] = {}
    wasted_c: dict[str, int] = {}
    wasted_m: dict[str, int] = {}
    open_c: dict[str, int] = {}
    for b in instance.bins:
        if b.kind not in ("partition", "free", "imaginary"):
            continue
        used_c = load_c.get(b.bin_id, 0)
        used_m = load_m.get(b.bin_id, 0)
        if b.kind == "partition":
            partition_used[b.bin_id] = 1 if used_c > 0 else 0
        u = b.compute_cap - used_c
        v = b.memory_cap - used_m
        slack_c[b.bin_id] = u
        slack_m[b.bin_id] = v
        delta = 1 if u >= 1 else 0
        open_c[b.bin_id] = delta
        if used_c == 0 and used_m == 0:
            wasted_c[b.bin_id] = 0
            wasted_m[b.bin_id] = 0
        else:
            wasted_c[b.bin_id] = max(0, u - v)
            wasted_m[b.bin_id] = v if delta == 0 else 0
    return {
        "gpu_used": gpu_used,
        "partition_used": partition_used,
        "compute_slack": slack_c,
        "memory_slack": slack_m,
        "wasted_compute": wasted_c,
        "wasted_memory": wasted_m,
        "compute_open": open_c,
    }


# ---------------------------------------------------------------------------
# exact search


class _SearchState:
    """Aggregates rebuilt for one node expansion."""

    __slots__ = (
        "load_c",
        "load_m",
        "media",
        "gpu_retains",
        "imag_active",
        "free_active",
        "reward",
        "migration",
    )

    def __init__(self, instance: WpmInstance, assignment: Sequence[Optional[int]], order, bins):
        self.load_c = {}
        self.load_m = {}
        self.media = dict(instance.fixed_media_ext)
        self.gpu_retains = set(instance.forced_used_gpus)
        self.imag_active = set()
        self.free_active = set()
        self.reward = 0.0
        self.migration = 0.0
        for item, bin_ordinal in zip(order, assignment):
            if bin_ordinal is None:
                if item.source_gpu is not None:
                    self.migration += item.migration_penalty
                continue
            b = bins[bin_ordinal]
            self.reward += item.reward
            if b.kind == "stay":
                self.gpu_retains.add(b.gpu_id)
            else:
                self.load_c[b.bin_id] = self.load_c.get(b.bin_id, 0) + item.compute
                self.load_m[b.bin_id] = self.load_m.get(b.bin_id, 0) + item.memory
                if b.kind == "partition":
                    self.gpu_retains.add(b.gpu_id)
                elif b.kind == "imaginary":
                    self.imag_active.add(b.gpu_id)
                elif b.kind == "free":
                    self.free_active.add(b.bin_id)
            if item.media_ext:
                scope = b.bin_id if b.kind in ("free", "imaginary") else b.gpu_id
                self.media[scope] = self.media.get(scope, 0) + 1
            if item.source_gpu is not None:
                stays = b.kind == "stay"
                to_twin = b.kind == "imaginary" and b.gpu_id == item.source_gpu
                if not stays and not to_twin:
                    self.migration += item.migration_penalty

    def used_gpu_count(self) -> int:
        return len(self.free_active) + len(self.imag_active) + len(self.gpu_retains)


def solve(
    instance: WpmInstance,
    time_limit: Optional[float] = None,
    *,
    node_limit: Optional[int] = None,
    initial: Optional[Mapping[str, Optional[str]]] = None,
) -> WpmSolution:
    """Maximize the placement objective by best-first branch and bound.

    Branches on one workload at a time (largest first); children are its
    candidate bins in a fixed order (stay slot, partitions, free GPUs,
    imaginary GPUs, pending). The bound adds every undecided reward to the
    node value and charges a GPU lower bound for new-workload demand that
    cannot fit the capacity already paid for. Interchangeable workloads and
    identical inactive free GPUs are deduplicated.

    Stops early after ``time_limit`` seconds or ``node_limit`` expansions and
    then reports the best incumbent with a valid optimality gap.
    """
    started = time.monotonic()
    deadline = None if time_limit is None else started + time_limit
    weights = instance.weights
    bins = instance.bins
    bin_ordinal = {b.bin_id: i for i, b in enumerate(bins)}

    order = sorted(
        instance.items, key=lambda i: (i.profile_id, i.source_gpu or "", i.workload_id)
    )
    n = len(order)

    # candidate bin ordinals per item, in exploration order
    candidates: list[tuple[Optional[int], ...]] = []
    for item in order:
        cand: list[Optional[int]] = []
        if item.stay_bin is not None:
            cand.append(bin_ordinal[item.stay_bin])
        for group in ("partition", "free", "imaginary"):
            for b in bins:
                if b.kind != group:
                    continue
                if item.compute <= b.compute_cap and item.memory <= b.memory_cap:
                    cand.append(bin_ordinal[b.bin_id])
        cand.append(None)
        candidates.append(tuple(cand))

    # suffix sums for the bound
    suffix_reward = [0.0] * (n + 1)
    suffix_new_c = [0] * (n + 1)
    suffix_new_m = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        item = order[i]
        suffix_reward[i] = suffix_reward[i + 1] + item.reward
        is_new = item.stay_bin is None
        suffix_new_c[i] = suffix_new_c[i + 1] + (item.compute if is_new else 0)
        suffix_new_m[i] = suffix_new_m[i + 1] + (item.memory if is_new else 0)

    min_reward = min((i.reward for i in order), default=0.0)
    bound_uses_gpu_term = min_reward >= weights.gpu_cost
    cap_c = max((b.compute_cap for b in bins if b.kind in ("free", "imaginary")), default=1)
    cap_m = max((b.memory_cap for b in bins if b.kind in ("free", "imaginary")), default=1)

    def interchangeable(a: WpmItem, b: WpmItem) -> bool:
        return (
            a.profile_id == b.profile_id
            and a.reward == b.reward
            and a.migration_penalty == b.migration_penalty
            and a.source_gpu == b.source_gpu
            and a.media_ext == b.media_ext
            and a.movable == b.movable
        )

    def child_feasible(state: _SearchState, item: WpmItem, b: Optional[WpmBin]) -> bool:
        if b is None:
            return True
        if b.kind == "stay":
            return b.gpu_id not in state.imag_active
        if state.load_c.get(b.bin_id, 0) + item.compute > b.compute_cap:
            return False
        if state.load_m.get(b.bin_id, 0) + item.memory > b.memory_cap:
            return False
        if b.kind == "partition" and b.gpu_id in state.imag_active:
            return False
        if b.kind == "imaginary" and (
            b.gpu_id in state.gpu_retains or b.gpu_id in instance.forced_used_gpus
        ):
            return False
        if item.media_ext:
            scope = b.bin_id if b.kind in ("free", "imaginary") else b.gpu_id
            if state.media.get(scope, 0) >= 1:
                return False
        return True

    part_residual_of_gpu: dict[str, tuple[int, int]] = {}
    for pb in bins:
        if pb.kind == "partition":
            c0, m0 = part_residual_of_gpu.get(pb.gpu_id, (0, 0))
            part_residual_of_gpu[pb.gpu_id] = (c0 + pb.compute_cap, m0 + pb.memory_cap)

    def base_availability(state: _SearchState) -> tuple[int, int]:
        """Residual capacity already paid for: active free/imaginary bins and
        every partition not invalidated by an active imaginary twin."""
        avail_c = 0
        avail_m = 0
        for pb in bins:
            if pb.kind == "partition":
                if pb.gpu_id in state.imag_active:
                    continue
                avail_c += pb.compute_cap - state.load_c.get(pb.bin_id, 0)
                avail_m += pb.memory_cap - state.load_m.get(pb.bin_id, 0)
            elif pb.kind == "free":
                if pb.bin_id in state.free_active:
                    avail_c += pb.compute_cap - state.load_c.get(pb.bin_id, 0)
                    avail_m += pb.memory_cap - state.load_m.get(pb.bin_id, 0)
            elif pb.kind == "imaginary":
                if pb.gpu_id in state.imag_active:
                    avail_c += pb.compute_cap - state.load_c.get(pb.bin_id, 0)
                    avail_m += pb.memory_cap - state.load_m.get(pb.bin_id, 0)
        return avail_c, avail_m

    def upper_bound(
        state: _SearchState,
        depth: int,
        item: WpmItem,
        b: Optional[WpmBin],
        base_avail: tuple[int, int],
    ) -> float:
        reward = state.reward
        migration = state.migration
        used = state.used_gpu_count()
        new_imag = 0
        avail_c, avail_m = base_avail
        if b is None:
            if item.source_gpu is not None:
                migration += item.migration_penalty
        else:
            reward += item.reward
            if b.kind == "stay":
                if b.gpu_id not in state.gpu_retains:
                    used += 1
            elif b.kind == "partition":
                if b.gpu_id not in state.gpu_retains:
                    used += 1
                avail_c -= item.compute
                avail_m -= item.memory
            elif b.kind == "free":
                if b.bin_id not in state.free_active:
                    used += 1
                    avail_c += b.compute_cap
                    avail_m += b.memory_cap
                avail_c -= item.compute
                avail_m -= item.memory
            elif b.kind == "imaginary":
                if b.gpu_id not in state.imag_active:
                    used += 1
                    new_imag = 1
                    avail_c += b.compute_cap
                    avail_m += b.memory_cap
                    lost = part_residual_of_gpu.get(b.gpu_id)
                    if lost is not None:
                        # partitions of a repartitioned GPU become unusable;
                        # their loads are zero here (child_feasible forbids
                        # activating the twin once a partition is occupied)
                        avail_c -= lost[0]
                        avail_m -= lost[1]
                avail_c -= item.compute
                avail_m -= item.memory
            if item.source_gpu is not None and b.kind != "stay":
                if not (b.kind == "imaginary" and b.gpu_id == item.source_gpu):
                    migration += item.migration_penalty
        value = (
            reward
            - weights.gpu_cost * used
            - weights.repartition_penalty * (len(state.imag_active) + new_imag)
            - migration
        )
        ub = value + suffix_reward[depth + 1]
        if bound_uses_gpu_term:
            need_c = suffix_new_c[depth + 1]
            need_m = suffix_new_m[depth + 1]
            extra = 0
            if need_c > avail_c:
                extra = -(-(need_c - avail_c) // cap_c)
            if need_m > avail_m:
                extra = max(extra, -(-(need_m - avail_m) // cap_m))
            ub -= weights.gpu_cost * extra
        return ub

    incumbent: Optional[tuple[float, tuple[Optional[int], ...]]] = None

    def consider_leaf(assignment: tuple[Optional[int], ...]) -> None:
        nonlocal incumbent
        mapping = {
            item.workload_id: (bins[o].bin_id if o is not None else None)
            for item, o in zip(order, assignment)
        }
        value = evaluate_assignment(instance, mapping)
        if incumbent is None or value > incumbent[0]:
            incumbent = (value, assignment)

    if initial is not None and assignment_infeasibility(instance, initial) is None:
        ordinals = tuple(
            bin_ordinal[initial[item.workload_id]]
            if initial.get(item.workload_id) is not None
            else None
            for item in order
        )
        consider_leaf(ordinals)

    # greedy dive for a baseline incumbent: best marginal bound first
    if n > 0:
        partial: list[Optional[int]] = []
        for depth in range(n):
            state = _SearchState(instance, partial, order, bins)
            base_avail = base_availability(state)
            item = order[depth]
            best = None
            for o in candidates[depth]:
                b = bins[o] if o is not None else None
                if not child_feasible(state, item, b):
                    continue
                ub = upper_bound(state, depth, item, b, base_avail)
                if best is None or ub > best[0]:
                    best = (ub, o)
            partial.append(best[1] if best is not None else None)
        consider_leaf(tuple(partial))

    # best-first search
    epsilon = 1e-9
    counter = 0
    nodes = 0
    heap: list[tuple[float, int, tuple[Optional[int], ...]]] = []
    root_state = _SearchState(instance, (), order, bins)
    root_ub = root_state.reward + suffix_reward[0] - weights.gpu_cost * root_state.used_gpu_count()
    if n == 0:
        consider_leaf(())
    else:
        heap.append((-root_ub, counter, ()))

    status = "optimal"
    top_ub = None
    while heap:
        neg_ub, _, assignment = heapq.heappop(heap)
        node_ub = -neg_ub
        if incumbent is not None and node_ub <= incumbent[0] + epsilon:
            break  # best-first: nothing left can beat the incumbent
        nodes += 1
        if node_limit is not None and nodes > node_limit:
            status = "time-capped"
            top_ub = node_ub
            break
        if deadline is not None and nodes % 64 == 0 and time.monotonic() > deadline:
            status = "time-capped"
            top_ub = node_ub
            break
        depth = len(assignment)
        state = _SearchState(instance, assignment, order, bins)
        base_avail = base_availability(state)
        item = order[depth]
        # interchangeable twins: candidate lists are parallel (own stay slot
        # at rank 0, shared bins after), so forcing non-decreasing rank keeps
        # exactly one representative of each permuted assignment
        min_rank = 0
        if depth > 0 and interchangeable(order[depth - 1], item):
            min_rank = candidates[depth - 1].index(assignment[-1])

        for rank, o in enumerate(candidates[depth]):
            if rank < min_rank:
                continue
            b = bins[o] if o is not None else None
            if not child_feasible(state, item, b):
                continue
            child = assignment + (o,)
            if depth + 1 == n:
                consider_leaf(child)
                continue
            ub = upper_bound(state, depth, item, b, base_avail)
            if incumbent is not None and ub <= incumbent[0] + epsilon:
                continue
            counter += 1
            heapq.heappush(heap, (-ub, counter, child))

    if status == "optimal":
        gap = 0.0
    else:
        best_open = top_ub if top_ub is not None else root_ub
        if heap:
            best_open = max(best_open, -heap[0][0])
        gap = max(0.0, best_open - (incumbent[0] if incumbent else float("-inf")))

    assert incumbent is not None
    best_value, best_assignment = incumbent
    mapping = {
        item.workload_id: (bins[o].bin_id if o is not None else None)
        for item, o in zip(order, best_assignment)
    }
    details = _solution_details(instance, mapping)
    return WpmSolution(
        assignment=mapping,
        objective=best_value,
        optimality_gap=gap,
        solve_status=status,
        gpu_used=details["gpu_used"],
        partition_used=details["partition_used"],
        compute_slack=details["compute_slack"],
        memory_slack=details["memory_slack"],
        wasted_compute=details["wasted_compute"],
        wasted_memory=details["wasted_memory"],
        compute_open=details["compute_open"],
        nodes_explored=nodes,
        wall_time=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# bin-level solution -> indexed plan


def index_solution(instance: WpmInstance, solution: WpmSolution) -> PlacementPlan:
    """Lay the bin-level assignment out at concrete slice indexes.

    Staying workloads keep their slots; partition assignees are packed inside
    the partition's slice range; used free or imaginary GPUs get a fresh
    layout of their whole multiset. A failure to find indexes would
    contradict the permutation assumption and raises LayoutInfeasibleError.
    """
    state = instance.state
    items = instance.items_by_id()
    bins = instance.bins_by_id()

    by_bin: dict[str, list[WpmItem]] = {}
    pending_items: list[WpmItem] = []
    for item in instance.items:
        bin_id = solution.assignment.get(item.workload_id)
        if bin_id is None:
            pending_items.append(item)
        else:
            by_bin.setdefault(bin_id, []).append(item)

    decided_ids = set(items)
    final: list[IndexedPlacement] = []
    repartitioned: set[str] = set()

    # immovable/pinned placements and empty partitions persist untouched
    for p in state.placements:
        if p.workload_id is None or p.workload_id not in decided_ids:
            final.append(p)

    # stays keep their exact slot
    for b in instance.bins:
        if b.kind != "stay":
            continue
        for item in by_bin.get(b.bin_id, ()):
            final.append(
                IndexedPlacement(b.gpu_id, item.workload_id, item.profile_id, b.stay_index)
            )

    def lay_out(
        gpu_id: str,
        assigned: list[WpmItem],
        fixed: list[IndexedPlacement],
        region: Optional[frozenset[int]],
    ) -> list[IndexedPlacement]:
        ordered = sorted(assigned, key=lambda i: (i.profile_id, i.workload_id))
        layout = find_layout(
            [i.profile_id for i in ordered],
            fixed=[(p.profile_id, p.start_index) for p in fixed],
            allowed_slices=region,
        )
        if layout is None:
            raise LayoutInfeasibleError(
                f"no index assignment for profiles "
                f"{[i.profile_id for i in ordered]} on gpu {gpu_id} "
                f"(region={sorted(region) if region else 'whole gpu'})"
            )
        return [
            IndexedPlacement(gpu_id, item.workload_id, item.profile_id, idx, item.movable)
            for item, (_, idx) in zip(ordered, layout)
        ]

    # partition assignees, grouped per GPU so fixed context accumulates
    partition_bins = [b for b in instance.bins if b.kind == "partition" and by_bin.get(b.bin_id)]
    for gid in state.gpu_ids:
        gpu_parts = [b for b in partition_bins if b.gpu_id == gid]
        if not gpu_parts:
            continue
        fixed_here = [p for p in final if p.gpu_id == gid]
        for b in sorted(gpu_parts, key=lambda b: b.slices[0]):
            placed = lay_out(gid, by_bin[b.bin_id], fixed_here, frozenset(b.slices))
            final.extend(placed)
            fixed_here.extend(placed)

    # used free GPUs and imaginary twins start from an empty layout
    for b in instance.bins:
        if b.kind == "free" and by_bin.get(b.bin_id):
            final.extend(lay_out(b.gpu_id, by_bin[b.bin_id], [], None))
        elif b.kind == "imaginary" and by_bin.get(b.bin_id):
            final.extend(lay_out(b.gpu_id, by_bin[b.bin_id], [], None))
            repartitioned.add(b.gpu_id)

    pending_workloads = tuple(
        Workload(i.workload_id, i.profile_id, movable=i.movable) for i in pending_items
    )
    placed_ids = {p.workload_id for p in final}
    carried = tuple(
        w
        for w in state.pending_workloads
        if w.workload_id not in placed_ids and w.workload_id not in decided_ids
    )
    final_state = ClusterState(
        gpus=state.gpus,
        placements=tuple(final),
        pending_workloads=pending_workloads + carried,
    )
    try:
        validate_state(final_state)
    except Exception as exc:  # invariant breach, never silent
        raise LayoutInfeasibleError(f"indexed plan does not validate: {exc}") from exc

    slot_now = {
        p.workload_id: (p.gpu_id, p.start_index)
        for p in final
        if p.workload_id is not None
    }
    migrations = []
    for item in instance.items:
        target = slot_now.get(item.workload_id)
        if target is None:
            continue
        if (item.source_gpu, item.source_index) != target:
            migrations.append(
                Migration(item.workload_id, item.source_gpu, target[0], target[1])
            )

    return PlacementPlan(
        final_state=final_state,
        migrations=tuple(migrations),
        repartitioned_gpus=frozenset(repartitioned),
        pending=tuple(i.workload_id for i in pending_items),
    )


def assignment_from_plan(instance: WpmInstance, plan: PlacementPlan) -> dict[str, Optional[str]]:
    """Translate an indexed plan into a feasible model point.

    Used to warm-start the solver with a heuristic plan and to check that
    heuristic plans are dominated by the exact optimum. Per used GPU the
    translation first tries the additive reading (stays plus free
    partitions); if the plan re-laid the GPU out, everything on it maps to
    the imaginary twin.
    """
    items = instance.items_by_id()
    final_by_gpu: dict[str, list[IndexedPlacement]] = {}
    for p in plan.final_state.placements:
        if p.workload_id in items:
            final_by_gpu.setdefault(p.gpu_id, []).append(p)

    free_bin_of = {b.gpu_id: b.bin_id for b in instance.bins if b.kind == "free"}
    parts_of: dict[str, list[WpmBin]] = {}
    for b in instance.bins:
        if b.kind == "partition":
            parts_of.setdefault(b.gpu_id, []).append(b)

    assignment: dict[str, Optional[str]] = {w: None for w in items}
    for gid, placed in final_by_gpu.items():
        if gid in free_bin_of:
            for p in placed:
                assignment[p.workload_id] = free_bin_of[gid]
            continue
        tentative: dict[str, str] = {}
        loads: dict[str, tuple[int, int]] = {}
        additive = True
        for p in placed:
            item = items[p.workload_id]
            if (
                item.stay_bin is not None
                and item.source_gpu == gid
                and item.source_index == p.start_index
            ):
                tentative[p.workload_id] = item.stay_bin
                continue
            region = footprint(p.profile_id, p.start_index).occupied_slices
            home = None
            for b in parts_of.get(gid, ()):
                if region <= frozenset(b.slices):
                    c, m = loads.get(b.bin_id, (0, 0))
                    if c + item.compute <= b.compute_cap and m + item.memory <= b.memory_cap:
                        home = b.bin_id
                        loads[b.bin_id] = (c + item.compute, m + item.memory)
                        break
            if home is None:
                additive = False
                break
            tentative[p.workload_id] = home
        if additive:
            assignment.update(tentative)
        else:
            twin = instance.imaginary_of.get(gid)
            if twin is None:
                raise TranslationError(
                    f"plan repartitions gpu {gid} which has immovable residents"
                )
            for p in placed:
                assignment[p.workload_id] = twin

    reason = assignment_infeasibility(instance, assignment)
    if reason is not None:
        raise TranslationError(f"plan does not map to a feasible point: {reason}")
    return assignment
