"""Metric definitions, conservation identities, and normalization."""

import pytest

from migpack.feasibility import footprint
from migpack.metrics import (
    METRIC_NAMES,
    MetricsReport,
    evaluate,
    normalize,
    sequential_migrations,
)
from migpack.model import (
    ClusterState,
    GpuSpec,
    IndexedPlacement,
    Migration,
    PlacementPlan,
    Workload,
)


def fragmented_state():
    return ClusterState(
        gpus=(("gpu-01", GpuSpec()), ("gpu-02", GpuSpec()), ("gpu-03", GpuSpec())),
        placements=(
            IndexedPlacement("gpu-01", "w2", 9, 0),
            IndexedPlacement("gpu-02", "w1", 5, 0),
            IndexedPlacement("gpu-02", "w3", 14, 4),
            IndexedPlacement("gpu-03", "w6", 9, 0),
            IndexedPlacement("gpu-03", "w7", 19, 4),
        ),
    )


def identity_plan(state):
    return PlacementPlan(final_state=state)


class TestEvaluate:
    def test_fragmented_initial_accounting(self):
        state = fragmented_state()
        report = evaluate(state, identity_plan(state))
        assert report.gpus_used == 3
        assert report.compute_utilization == pytest.approx(13 / 21)
        assert report.memory_utilization == pytest.approx(15 / 24)
        assert report.compute_wastage == 2
        assert report.memory_wastage == 0
        assert report.migration_size == 0
        # 21 compute slices = 13 used + 6 free + 2 wasted
        assert report.availability == 6

    def test_compacted_final_accounting(self):
        state = fragmented_state()
        final = ClusterState(
            gpus=state.gpus,
            placements=(
                IndexedPlacement("gpu-01", "w2", 9, 0),
                IndexedPlacement("gpu-01", "w6", 9, 4),
                IndexedPlacement("gpu-02", "w1", 5, 0),
                IndexedPlacement("gpu-02", "w3", 14, 4),
                IndexedPlacement("gpu-02", "w7", 19, 6),
            ),
        )
        plan = PlacementPlan(
            final_state=final,
            migrations=(
                Migration("w6", "gpu-03", "gpu-01", 4),
                Migration("w7", "gpu-03", "gpu-02", 6),
            ),
        )
        report = evaluate(state, plan)
        assert report.gpus_used == 2
        assert report.compute_utilization == pytest.approx(13 / 14)
        assert report.memory_utilization == pytest.approx(15 / 16)
        assert report.migration_size == 5
        assert report.compute_wastage == 1  # the 3g stuck at index 0
        assert report.memory_wastage == 1  # the 1g sitting on the last slice
        assert report.availability == 7  # the vacated GPU

    def test_empty_cluster_all_zero(self):
        state = ClusterState(gpus=(("g", GpuSpec()),))
        report = evaluate(state, identity_plan(state))
        assert report == MetricsReport(0, 0, 0, 7.0, 0, 0, 0, 0.0, 0.0)

    def test_pending_reduces_availability_in_gpu_slices(self):
        state = ClusterState(gpus=(("g", GpuSpec()),))
        final = ClusterState(
            gpus=state.gpus,
            pending_workloads=(Workload("p1", 9), Workload("p2", 15)),
        )
        plan = PlacementPlan(final_state=final, pending=("p1", "p2"))
        report = evaluate(state, plan)
        # 3g pends as 4 GPU slices, 1g.20gb as 2
        assert report.availability == 7 - 4 - 2
        # pending size stays in memory slices
        assert report.pending_model_size == 4 + 2

    def test_same_gpu_move_costs_nothing(self):
        state = ClusterState(
            gpus=(("g", GpuSpec()),),
            placements=(IndexedPlacement("g", "w", 9, 0),),
        )
        final = ClusterState(
            gpus=state.gpus,
            placements=(IndexedPlacement("g", "w", 9, 4),),
        )
        plan = PlacementPlan(final_state=final, migrations=(Migration("w", "g", "g", 4),))
        report = evaluate(state, plan)
        assert report.migration_size == 0
        assert report.sequential_migrations == 0

    def test_slice_conservation_per_used_gpu(self):
        state = fragmented_state()
        final = state
        by_gpu = final.placements_by_gpu()
        for gid, group in by_gpu.items():
            if not group:
                continue
            used_c = sum(p.profile.compute_slices for p in group)
            used_m = sum(p.profile.memory_slices for p in group)
            wasted_c = sum(
                footprint(p.profile_id, p.start_index).wasted_compute_slices for p in group
            )
            wasted_m = sum(
                footprint(p.profile_id, p.start_index).wasted_extra_memory for p in group
            )
            occupied = sum(
                len(footprint(p.profile_id, p.start_index).occupied_slices) for p in group
            )
            free_c = 7 - occupied
            free_m = 8 - used_m - wasted_m
            assert used_c + free_c + wasted_c == 7
            assert used_m + free_m + wasted_m == 8


class TestSequentialMigrations:
    def test_move_into_free_footprint(self):
        state = ClusterState(
            gpus=(("g1", GpuSpec()), ("g2", GpuSpec())),
            placements=(IndexedPlacement("g1", "w", 14, 0),),
        )
        final = ClusterState(
            gpus=state.gpus, placements=(IndexedPlacement("g2", "w", 14, 0),)
        )
        plan = PlacementPlan(final_state=final, migrations=(Migration("w", "g1", "g2", 0),))
        assert sequential_migrations(state, plan) == (0, ())

    def test_move_onto_initially_held_slices(self):
        state = ClusterState(
            gpus=(("g1", GpuSpec()), ("g2", GpuSpec())),
            placements=(
                IndexedPlacement("g1", "w", 14, 0),
                IndexedPlacement("g2", "v", 14, 0),
            ),
        )
        final = ClusterState(
            gpus=state.gpus,
            placements=(
                IndexedPlacement("g2", "w", 14, 0),
                IndexedPlacement("g1", "v", 14, 0),
            ),
        )
        plan = PlacementPlan(
            final_state=final,
            migrations=(Migration("w", "g1", "g2", 0), Migration("v", "g2", "g1", 0)),
        )
        count, offenders = sequential_migrations(state, plan)
        assert count == 2
        assert set(offenders) == {"w", "v"}


class TestNormalize:
    def make_report(self, gpus, wastage=0):
        return MetricsReport(gpus, wastage, 0, 0.0, 0, 0, 0, 0.5, 0.5)

    def test_single_approach_normalizes_to_unit(self):
        averages, normalized = normalize({"only": [self.make_report(4)]})
        assert normalized["only"]["gpus_used"] == 1.0
        assert normalized["only"]["migration_size"] == 0.0
        assert averages["only"]["gpus_used"] == 4.0

    def test_two_approaches_scale_by_max(self):
        _, normalized = normalize(
            {"a": [self.make_report(10)], "b": [self.make_report(5)]}
        )
        assert normalized["a"]["gpus_used"] == 1.0
        assert normalized["b"]["gpus_used"] == 0.5

    def test_zero_column_stays_zero(self):
        _, normalized = normalize({"a": [self.make_report(1)], "b": [self.make_report(1)]})
        assert normalized["a"]["memory_wastage"] == 0.0

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ValueError):
            normalize({"a": [self.make_report(1)], "b": []})

    def test_metric_names_cover_the_nine(self):
        assert set(METRIC_NAMES) == {
            "gpus_used",
            "memory_wastage",
            "compute_wastage",
            "availability",
            "migration_size",
            "pending_model_size",
            "sequential_migrations",
            "memory_utilization",
            "compute_utilization",
        }
