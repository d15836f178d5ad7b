"""Short-range molecular dynamics on cluster pair lists.

Particles are packed into fixed-size clusters; the neighbor list pairs whole
clusters so the force kernel can evaluate m x n_lane interaction blocks and
reuse the (buffered, prunable) list across steps.  A brute-force oracle, an
NVE integrator with worker parallelism and adaptive slab decomposition, a
section timer, and a benchmark CLI round out the package.
"""

from .engine import (
    ListPolicy,
    MDState,
    RunResult,
    SlabPartition,
    TimingError,
    TimingReport,
    assign_slabs,
    build_slab_partition,
    init_state,
    kinetic_energy,
    lifecycle_tick,
    parallel_forces,
    rebalance_slabs,
    run_md,
    temperature,
    timed_section,
    total_momentum,
    velocity_verlet_step,
)
from .gridder import ClusterGrid, build_cluster_grid, cluster_min_distance, scatter_to_original
from .kernels import (
    FlopCount,
    KernelLayout,
    compute_nonbonded,
    compute_nonbonded_original,
    flop_count,
    lj_coulomb_terms,
    pair_interaction,
)
from .model import (
    BOLTZMANN_KJ_MOL_K,
    COULOMB_CONSTANT,
    ForcesEnergies,
    NonbondedParams,
    ParameterError,
    ParticleSystem,
    SimBox,
    SingularityError,
    load_system,
    minimum_image,
    save_system,
    validate_system,
    wrap_position,
)
from .oracle import DriftTracker, brute_force_nonbonded, brute_force_pairs, update_drift
from .pairlist import (
    ClusterPairList,
    InteractionStats,
    admitted_pairs,
    build_pair_list,
    interaction_stats,
    prune_pair_list,
    write_pairs_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BOLTZMANN_KJ_MOL_K",
    "COULOMB_CONSTANT",
    "ClusterGrid",
    "ClusterPairList",
    "DriftTracker",
    "FlopCount",
    "ForcesEnergies",
    "InteractionStats",
    "KernelLayout",
    "ListPolicy",
    "MDState",
    "NonbondedParams",
    "ParameterError",
    "ParticleSystem",
    "RunResult",
    "SimBox",
    "SingularityError",
    "SlabPartition",
    "TimingError",
    "TimingReport",
    "admitted_pairs",
    "assign_slabs",
    "brute_force_nonbonded",
    "brute_force_pairs",
    "build_cluster_grid",
    "build_pair_list",
    "build_slab_partition",
    "cluster_min_distance",
    "compute_nonbonded",
    "compute_nonbonded_original",
    "flop_count",
    "init_state",
    "interaction_stats",
    "kinetic_energy",
    "lifecycle_tick",
    "lj_coulomb_terms",
    "load_system",
    "minimum_image",
    "pair_interaction",
    "parallel_forces",
    "prune_pair_list",
    "rebalance_slabs",
    "run_md",
    "save_system",
    "scatter_to_original",
    "temperature",
    "timed_section",
    "total_momentum",
    "update_drift",
    "validate_system",
    "velocity_verlet_step",
    "wrap_position",
]
