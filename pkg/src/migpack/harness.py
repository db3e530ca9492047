"""Randomized test-case generation and batch experiment execution.

Cases mimic the production setting: roughly 60% of a homogeneous cluster's
GPUs carry randomly drawn workloads up to a random per-GPU utilization
target, the rest stay free, and initial-deployment cases add a fresh batch
of workloads worth 60% of the cluster's memory capacity. Everything flows
from one explicit 64-bit PRNG so a case regenerates bit-identically from its
seed, on any platform or implementation language.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import metrics as metrics_mod
from .feasibility import free_partitions, validate_state
from .heuristics import (
    _GpuBuild,
    compact,
    first_fit,
    load_balanced,
    place_initial,
    reconfigure,
)
from .metrics import METRIC_NAMES, MetricsReport, evaluate
from .model import (
    ClusterState,
    GpuSpec,
    IndexedPlacement,
    PROFILE_CATALOG,
    PlacementPlan,
    Workload,
)
from .wpm import (
    TranslationError,
    assignment_from_plan,
    build_instance,
    index_solution,
    solve,
)

USE_CASES = ("initial", "compaction", "reconfiguration")
APPROACHES = ("first-fit", "load-balanced", "rule-based", "mip", "joint-mip")
GENERATION_PROFILE_POOL = (5, 9, 14, 15, 19)
NEW_WORKLOAD_FRACTION = 0.6  # of total cluster memory slices
INITIAL_PACK_MARGIN = 0.76  # of effective free memory the new batch may claim


class SplitMix64:
    """splitmix64 PRNG (public-domain constants), chosen for portability.

    state += 0x9E3779B97F4A7C15
    z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

    ``random()`` maps the top 53 bits to [0, 1); ``choice`` uses a modulo
    draw (bias below 2**-60 for the tiny pools used here).
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self._state = seed & self.MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & self.MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def choice(self, seq):
        return seq[self.next_u64() % len(seq)]


@dataclass(frozen=True)
class TestCase:
    seed: int
    use_case: str
    cluster: ClusterState
    new_workloads: tuple[Workload, ...] = ()


def generate_case(n_gpus: int, seed: int, use_case: str) -> TestCase:
    """One reproducible random case on a homogeneous ``n_gpus`` cluster."""
    if n_gpus < 1:
        raise ValueError("n_gpus must be >= 1")
    if use_case not in USE_CASES:
        raise ValueError(f"use_case must be one of {USE_CASES}, got {use_case!r}")

    rng = SplitMix64(seed)
    spec = GpuSpec()
    gpus = tuple((f"gpu-{i:03d}", spec) for i in range(n_gpus))
    n_allocated = min(n_gpus, max(1, -(-(6 * n_gpus) // 10)))  # ceil(0.6 n)

    placements: list[IndexedPlacement] = []
    counter = 0
    for gid, _ in gpus[:n_allocated]:
        build = _GpuBuild(gid)
        target = 1.0 - rng.random()  # (0, 1]
        while build.utilization() < target:
            pid = rng.choice(GENERATION_PROFILE_POOL)
            idx = next(
                (
                    i
                    for i in PROFILE_CATALOG[pid].allowed_indexes
                    if build.can_place(pid, i)
                ),
                None,
            )
            if idx is None:
                break
            placement = IndexedPlacement(gid, f"wl-{counter:04d}", pid, idx)
            build.place(placement)
            placements.append(placement)
            counter += 1

    new_workloads: list[Workload] = []
    if use_case == "initial":
        # The batch targets 60% of cluster memory but is clipped so the
        # cluster stays deployable: at most INITIAL_PACK_MARGIN of the
        # effective free capacity (free-partition memory, which already
        # discounts stranded slices), and generation stops at the first
        # workload that no free partition or free GPU could hold at the
        # bin level. This leaves the cluster highly allocated after
        # deployment without generating demand that cannot fit.
        by_gpu: dict[str, list[IndexedPlacement]] = {gid: [] for gid, _ in gpus}
        for p in placements:
            by_gpu[p.gpu_id].append(p)
        witness_bins = [
            [part.compute_capacity, part.memory_capacity]
            for gid, _ in gpus
            for part in free_partitions(gid, by_gpu[gid])
        ]
        capacity = n_gpus * spec.total_memory_slices
        effective_free = sum(m for _, m in witness_bins)
        budget = min(NEW_WORKLOAD_FRACTION * capacity, INITIAL_PACK_MARGIN * effective_free)
        total = 0
        while total < budget:
            pid = rng.choice(GENERATION_PROFILE_POOL)
            prof = PROFILE_CATALOG[pid]
            fitting = [
                b
                for b in witness_bins
                if b[0] >= prof.compute_slices and b[1] >= prof.memory_slices
            ]
            if not fitting:
                break
            bin_ = min(fitting, key=lambda b: (b[1] - prof.memory_slices, b[0] - prof.compute_slices))
            bin_[0] -= prof.compute_slices
            bin_[1] -= prof.memory_slices
            new_workloads.append(Workload(f"new-{len(new_workloads):04d}", pid))
            total += prof.memory_slices

    cluster = ClusterState(gpus=gpus, placements=tuple(placements))
    validate_state(cluster)
    return TestCase(
        seed=seed, use_case=use_case, cluster=cluster, new_workloads=tuple(new_workloads)
    )


def generate_cases(n_gpus: int, seed: int, use_case: str, count: int) -> list[TestCase]:
    """``count`` cases seeded ``seed``, ``seed + 1``, ..."""
    return [generate_case(n_gpus, seed + i, use_case) for i in range(count)]


# ---------------------------------------------------------------------------
# approach dispatch


def _strip_movable(state: ClusterState) -> tuple[ClusterState, list[Workload]]:
    """Remove movable workloads for from-scratch re-placement baselines."""
    kept = tuple(p for p in state.placements if not p.movable or p.workload_id is None)
    stripped = ClusterState(gpus=state.gpus, placements=kept)
    workloads = sorted(
        (
            Workload(p.workload_id, p.profile_id, True)
            for p in state.placements
            if p.movable and p.workload_id is not None
        ),
        key=lambda w: w.workload_id,
    )
    return stripped, workloads


@dataclass(frozen=True)
class ApproachRun:
    plan: PlacementPlan
    report: MetricsReport
    solver_status: str = ""
    objective: Optional[float] = None
    optimality_gap: Optional[float] = None
    wall_time: float = 0.0


def run_approach(
    case: TestCase,
    approach: str,
    time_limit: Optional[float] = 30.0,
    node_limit: Optional[int] = None,
) -> ApproachRun:
    """Run one approach on one case and evaluate the resulting plan.

    ``mip`` pins existing placements for initial-deployment cases (only new
    workloads are decided); ``joint-mip`` lifts that restriction. Both are
    warm-started from the matching rule-based plan. For compaction and
    reconfiguration cases, the first-fit and load-balanced baselines re-place
    all movable workloads from scratch in id order, which is the only way a
    placement-only scheduler can produce a final state for those use cases.
    """
    state = case.cluster
    started = time.monotonic()

    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}; expected one of {APPROACHES}")

    if case.use_case == "initial":
        new = list(case.new_workloads)
        if approach == "first-fit":
            plan = first_fit(state, new)
        elif approach == "load-balanced":
            plan = load_balanced(state, new)
        elif approach == "rule-based":
            plan = place_initial(state, new)
        else:
            warm_plan = place_initial(state, new)
            inst = build_instance(state, new, pin_existing=(approach == "mip"))
            return _solve_run(case, inst, warm_plan, time_limit, node_limit, started)
    else:
        # compaction / reconfiguration: the baselines are placement-only
        # schedulers, so they re-place every movable workload from scratch
        # in id order; the rule-based procedures migrate selectively
        if approach == "first-fit":
            stripped, workloads = _strip_movable(state)
            plan = first_fit(stripped, workloads)
        elif approach == "load-balanced":
            stripped, workloads = _strip_movable(state)
            plan = load_balanced(stripped, workloads)
        elif approach == "rule-based":
            plan = compact(state) if case.use_case == "compaction" else reconfigure(state)
        else:
            warm_plan = compact(state) if case.use_case == "compaction" else reconfigure(state)
            inst = build_instance(state)
            return _solve_run(case, inst, warm_plan, time_limit, node_limit, started)

    report = evaluate(state, plan)
    return ApproachRun(plan=plan, report=report, wall_time=time.monotonic() - started)


def _solve_run(case, instance, warm_plan, time_limit, node_limit, started) -> ApproachRun:
    warm = None
    try:
        warm = assignment_from_plan(instance, warm_plan)
    except TranslationError:
        warm = None  # fall back to the solver's own dive incumbent
    solution = solve(instance, time_limit, node_limit=node_limit, initial=warm)
    plan = index_solution(instance, solution)
    report = evaluate(case.cluster, plan)
    return ApproachRun(
        plan=plan,
        report=report,
        solver_status=solution.solve_status,
        objective=solution.objective,
        optimality_gap=solution.optimality_gap,
        wall_time=time.monotonic() - started,
    )


# ---------------------------------------------------------------------------
# batch experiments


@dataclass
class ExperimentResult:
    use_case: str
    approaches: tuple[str, ...]
    reports: dict[str, list[MetricsReport]]
    rows: list[dict] = field(default_factory=list)
    averages: dict[str, dict[str, float]] = field(default_factory=dict)
    normalized: dict[str, dict[str, float]] = field(default_factory=dict)
    failures: list[tuple[int, str, str]] = field(default_factory=list)


def _worker_count() -> int:
    raw = os.environ.get("MIGPACK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _case_worker(args) -> list[tuple[str, Optional[ApproachRun], str]]:
    case, approaches, time_limit, node_limit = args
    out = []
    for approach in approaches:
        try:
            run = run_approach(case, approach, time_limit, node_limit)
            out.append((approach, run, ""))
        except Exception as exc:  # recorded, batch continues
            out.append((approach, None, f"{type(exc).__name__}: {exc}"))
    return out


def run_experiment(
    cases: Sequence[TestCase],
    approaches: Sequence[str],
    time_limit: Optional[float] = 30.0,
    node_limit: Optional[int] = None,
) -> ExperimentResult:
    """Run every approach on every case; average and normalize the metrics.

    Cases run in parallel when MIGPACK_THREADS exceeds 1; aggregation order
    is by case index either way, so results do not depend on the worker
    count. Per-case failures are recorded and skipped in the averages.
    """
    if not cases:
        raise ValueError("no cases given")
    use_cases = {c.use_case for c in cases}
    if len(use_cases) != 1:
        raise ValueError(f"all cases must share one use case, got {sorted(use_cases)}")
    use_case = use_cases.pop()
    approaches = tuple(dict.fromkeys(approaches))
    for a in approaches:
        if a not in APPROACHES:
            raise ValueError(f"unknown approach {a!r}; expected one of {APPROACHES}")

    jobs = [(case, approaches, time_limit, node_limit) for case in cases]
    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_case_worker, jobs))
    else:
        outcomes = [_case_worker(job) for job in jobs]

    result = ExperimentResult(
        use_case=use_case,
        approaches=approaches,
        reports={a: [] for a in approaches},
    )
    for index, (case, case_out) in enumerate(zip(cases, outcomes)):
        for approach, run, error in case_out:
            if run is None:
                result.failures.append((index, approach, error))
                continue
            result.reports[approach].append(run.report)
            row = {
                "case_index": index,
                "seed": case.seed,
                "approach": approach,
                **run.report.as_dict(),
                "solver_status": run.solver_status,
                "objective": run.objective,
                "optimality_gap": run.optimality_gap,
                "wall_time": round(run.wall_time, 4),
            }
            result.rows.append(row)

    counts = {len(rs) for rs in result.reports.values()}
    if len(counts) == 1 and not result.failures:
        result.averages, result.normalized = metrics_mod.normalize(result.reports)
    else:
        # failures left ragged report lists; average what succeeded
        result.averages = {
            a: {
                m: (sum(r.as_dict()[m] for r in rs) / len(rs)) if rs else 0.0
                for m in METRIC_NAMES
            }
            for a, rs in result.reports.items()
        }
        result.normalized = {}
        for m in METRIC_NAMES:
            top = max(abs(avg[m]) for avg in result.averages.values())
            for a in approaches:
                result.normalized.setdefault(a, {})[m] = (
                    result.averages[a][m] / top if top else 0.0
                )
    return result
