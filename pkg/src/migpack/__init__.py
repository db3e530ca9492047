"""Placement optimization for LLM inference workloads on MIG-partitioned GPUs.

Submodules:
    model        profile catalog, workloads, cluster states, plans
    feasibility  footprints, layout validation/search, free partitions
    wpm          exact placement-and-migration optimizer
    heuristics   rule-based procedures and baseline schedulers
    metrics      plan quality metrics and normalization
    harness      random case generation and batch experiments
    serialization  JSON file formats
    cli          command-line entry point
"""

from .model import (
    A100_80GB,
    ClusterState,
    GpuSpec,
    IndexedPlacement,
    Migration,
    PROFILE_CATALOG,
    PlacementPlan,
    ProfileSpec,
    Workload,
    cache_size,
    joint_slice_utilization,
    min_gpus,
    profile_lookup,
)
from .feasibility import (
    Footprint,
    FreePartition,
    find_layout,
    footprint,
    free_partitions,
    validate_layout,
    validate_state,
)
from .heuristics import compact, first_fit, load_balanced, place_initial, reconfigure
from .metrics import MetricsReport, evaluate, normalize, sequential_migrations
from .wpm import (
    WpmInstance,
    WpmSolution,
    WpmWeights,
    build_instance,
    default_weights,
    index_solution,
    solve,
)

__version__ = "0.1.0"
