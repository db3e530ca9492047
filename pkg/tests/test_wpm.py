"""Placement-and-migration model: builder, exact solver, indexing."""

import random

import pytest

from migpack.model import ClusterState, GpuSpec, IndexedPlacement, Workload
from migpack.wpm import (
    WpmWeights,
    assignment_from_plan,
    assignment_infeasibility,
    build_instance,
    default_weights,
    evaluate_assignment,
    index_solution,
    solve,
)

from oracle_wpm import brute_force_optimum, random_mini_state


def cluster(*gpu_layouts, n_free=0):
    """Cluster from per-GPU placement lists; extra free GPUs appended."""
    gpus = []
    placements = []
    for i, layout in enumerate(gpu_layouts):
        gid = f"g{i}"
        gpus.append((gid, GpuSpec()))
        for entry in layout:
            placements.append(IndexedPlacement(gid, *entry))
    for j in range(n_free):
        gpus.append((f"f{j}", GpuSpec()))
    return ClusterState(gpus=tuple(gpus), placements=tuple(placements))


class TestBuildInstance:
    def test_fresh_cluster(self):
        state = cluster(n_free=2)
        new = [Workload(f"n{i}", 19) for i in range(3)]
        inst = build_instance(state, new)
        assert len(inst.free_gpu_bins) == 2
        assert inst.partition_bins == ()
        assert inst.imaginary_bins == ()
        assert inst.current_assignments == ()
        assert inst.gpu_pairs == ()
        assert len(inst.items) == 3

    def test_pinned_gpu_gets_partitions_but_no_twin(self):
        # three immovable 1g workloads at 0, 5, 6 leave 1g/2g/1g holes
        state = cluster(
            [("a", 19, 0, False), ("b", 19, 5, False), ("c", 19, 6, False)]
        )
        inst = build_instance(state, [Workload("n0", 15)])
        caps = [(b.compute_cap, b.memory_cap) for b in inst.partition_bins]
        assert caps == [(1, 1), (2, 2), (1, 1)]
        assert inst.imaginary_bins == ()
        assert "g0" in inst.forced_used_gpus

    def test_movable_resident_creates_twin_and_stay(self):
        state = cluster([("a", 14, 4, True)], n_free=1)
        inst = build_instance(state)
        assert len(inst.free_gpu_bins) == 1
        assert len(inst.imaginary_bins) == 1
        assert inst.gpu_pairs == (("g0", "imag:g0"),)
        assert inst.current_assignments == (("a", "g0"),)
        assert [b.stay_workload for b in inst.stay_bins] == ["a"]

    def test_pin_existing_freezes_everything(self):
        state = cluster([("a", 14, 4, True)])
        inst = build_instance(state, [Workload("n0", 19)], pin_existing=True)
        assert inst.imaginary_bins == ()
        assert inst.stay_bins == ()
        assert [i.workload_id for i in inst.items] == ["n0"]
        assert "g0" in inst.forced_used_gpus


class TestDefaultWeights:
    def test_small_instance_uses_plain_defaults(self):
        w = default_weights(8, 64)
        assert w == WpmWeights()
        # the chain itself: one GPU saved beats all penalties combined
        assert w.gpu_cost > 64 * w.migration_penalty + 8 * w.repartition_penalty + 6 * 8 * 15 * w.waste_penalty

    def test_large_instance_rescales_penalties_down(self):
        w = default_weights(80, 560)
        assert w.migration_penalty < 1.0
        assert w.repartition_penalty < 10.0
        assert w.waste_penalty < 0.05
        assert w.gpu_cost > (
            560 * w.migration_penalty + 80 * w.repartition_penalty + 6 * 80 * 15 * w.waste_penalty
        )

    def test_degenerate_empty_instance(self):
        assert default_weights(0, 0) == WpmWeights()


class TestSolve:
    def test_empty_model(self):
        inst = build_instance(cluster(n_free=1))
        sol = solve(inst)
        assert sol.objective == 0.0
        assert sol.solve_status == "optimal"
        assert sol.optimality_gap == 0.0

    def test_colocation_beats_two_gpus(self):
        # two movable 1g workloads on separate GPUs, no free GPUs: the
        # optimum parks both on one GPU and pays a single migration
        state = cluster([("a", 19, 0, True)], [("b", 19, 0, True)])
        inst = build_instance(state)
        sol = solve(inst)
        w = inst.weights
        assert sol.solve_status == "optimal"
        assert sol.objective == pytest.approx(
            2 * w.placement_reward - w.gpu_cost - w.migration_penalty
        )
        used = [g for g, v in sol.gpu_used.items() if v]
        assert len(used) == 1

    def test_matches_oracle_on_handmade_instance(self):
        state = cluster([("a", 14, 4, True), ("b", 19, 6, True)], n_free=1)
        inst = build_instance(state, [Workload("n0", 9), Workload("n1", 15)])
        sol = solve(inst)
        expected, _ = brute_force_optimum(inst)
        assert sol.solve_status == "optimal"
        assert sol.objective == expected

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle_on_random_instances(self, seed):
        rng = random.Random(1000 + seed)
        state = random_mini_state(rng, rng.randint(1, 3))
        n_new = rng.randint(0, max(0, 5 - len(state.placements)))
        new = [
            Workload(f"n{i}", rng.choice([5, 9, 14, 15, 19])) for i in range(n_new)
        ]
        inst = build_instance(state, new)
        if len(inst.items) > 6:
            pytest.skip("instance larger than oracle budget")
        sol = solve(inst)
        expected, _ = brute_force_optimum(inst)
        assert sol.solve_status == "optimal"
        assert sol.objective == expected

    def test_wastage_variables_are_exact(self):
        rng = random.Random(7)
        for _ in range(5):
            state = random_mini_state(rng, rng.randint(1, 3))
            new = [Workload(f"n{i}", rng.choice([9, 14, 15, 19])) for i in range(rng.randint(0, 3))]
            inst = build_instance(state, new)
            sol = solve(inst, time_limit=10)
            for bin_id, u in sol.compute_slack.items():
                v = sol.memory_slack[bin_id]
                assert sol.wasted_compute[bin_id] == max(0, u - v)
                if u == 0:
                    assert sol.wasted_memory[bin_id] == v
                else:
                    assert sol.wasted_memory[bin_id] == 0
                assert sol.compute_open[bin_id] == (1 if u >= 1 else 0)

    def test_twin_pairs_never_both_active(self):
        rng = random.Random(21)
        for _ in range(5):
            state = random_mini_state(rng, 3)
            inst = build_instance(state)
            sol = solve(inst, time_limit=10)
            for gid, twin in inst.gpu_pairs:
                assert sol.gpu_used[gid] + sol.gpu_used[twin] <= 1

    def test_node_limit_returns_valid_gap(self):
        state = cluster([("a", 19, 0, True)], [("b", 19, 0, True)], n_free=1)
        inst = build_instance(state, [Workload(f"n{i}", 14) for i in range(3)])
        sol = solve(inst, node_limit=1)
        assert sol.solve_status == "time-capped"
        full = solve(inst)
        assert full.solve_status == "optimal"
        assert sol.objective <= full.objective
        assert sol.objective + sol.optimality_gap >= full.objective


class TestIndexSolution:
    def test_two_profiles_on_free_gpu(self):
        state = cluster(n_free=1)
        inst = build_instance(state, [Workload("a", 5), Workload("b", 9)])
        sol = solve(inst)
        plan = index_solution(inst, sol)
        slots = {p.workload_id: (p.profile_id, p.start_index) for p in plan.final_state.placements}
        assert slots == {"a": (5, 0), "b": (9, 4)}
        assert plan.pending == ()

    def test_partition_layout_respects_region(self):
        # pinned 1g workloads at 0, 5, 6: a new 1g.20gb fits only index 2
        state = cluster(
            [("a", 19, 0, False), ("b", 19, 5, False), ("c", 19, 6, False)]
        )
        inst = build_instance(state, [Workload("n0", 15)])
        sol = solve(inst)
        plan = index_solution(inst, sol)
        placed = {p.workload_id: p.start_index for p in plan.final_state.placements}
        assert placed["n0"] == 2
        assert len(plan.migrations) == 1
        assert plan.migrations[0].from_gpu is None

    def test_staying_workload_is_not_a_migration(self):
        state = cluster([("a", 14, 4, True)], n_free=0)
        inst = build_instance(state)
        sol = solve(inst)
        plan = index_solution(inst, sol)
        assert plan.migrations == ()
        assert plan.repartitioned_gpus == frozenset()


class TestTranslation:
    def test_round_trip_solution_objective(self):
        state = cluster([("a", 14, 4, True), ("b", 19, 6, True)], n_free=1)
        inst = build_instance(state, [Workload("n0", 9)])
        sol = solve(inst)
        plan = index_solution(inst, sol)
        back = assignment_from_plan(inst, plan)
        assert assignment_infeasibility(inst, back) is None
        assert evaluate_assignment(inst, back) <= sol.objective
