"""NVE integration loop, worker parallelism, slab balancing, and timing.

The force pass splits i-clusters (or super groups) into one contiguous chunk
per worker, each accumulating into its own buffer; buffers are reduced in
fixed worker order so results are bit-identical for a given worker count.
Chunk boundaries are chosen by admitted-pair counts, or by spatial slabs
along x when a SlabPartition is active.  Slab widths adapt to measured
per-slab force times at every list rebuild.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from .gridder import ClusterGrid, build_cluster_grid, scatter_to_original
from .kernels import KernelLayout, compute_nonbonded_into
from .model import (
    BOLTZMANN_KJ_MOL_K,
    ForcesEnergies,
    NonbondedParams,
    ParameterError,
    ParticleSystem,
    SingularityError,
    wrap_position,
)
from .oracle import DriftTracker, update_drift
from .pairlist import ClusterPairList, build_pair_list, prune_pair_list


class TimingError(RuntimeError):
    """Improper section nesting detected while timing in debug mode."""


@dataclass
class _Section:
    calls: int = 0
    seconds: float = 0.0


class TimingReport:
    """Named nested wall-time sections with call counts.

    Sections are opened with the `section` context manager; the parent of a
    section is whatever section was open at first entry.  Time accounting
    uses time.perf_counter, so a child's accumulated time can never exceed
    its parent's beyond clock resolution.
    """

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.sections: dict[str, _Section] = {}
        self.parent: dict[str, str | None] = {}
        self._stack: list[str] = []

    @contextmanager
    def section(self, name: str):
        if name in self._stack:
            if self.debug:
                raise TimingError(f"section {name!r} re-entered while active")
            yield self
            return
        current_parent = self._stack[-1] if self._stack else None
        known_parent = self.parent.get(name, current_parent)
        if known_parent != current_parent and self.debug:
            raise TimingError(
                f"section {name!r} opened under {current_parent!r}, "
                f"previously under {known_parent!r}"
            )
        self.parent.setdefault(name, current_parent)
        entry = self.sections.setdefault(name, _Section())
        self._stack.append(name)
        start = time.perf_counter()
        try:
            yield self
        finally:
            entry.seconds += time.perf_counter() - start
            entry.calls += 1
            self._stack.pop()

    def children(self, name: str | None) -> list[str]:
        return [s for s, p in self.parent.items() if p == name]

    def total(self, name: str) -> float:
        return self.sections[name].seconds

    def nesting_violations(self, slack: float = 1e-6) -> list[str]:
        """Sections whose children sum to more time than the section itself."""
        bad = []
        for name in self.sections:
            child_sum = sum(self.sections[c].seconds for c in self.children(name))
            if child_sum > self.sections[name].seconds + slack:
                bad.append(
                    f"{name}: children {child_sum:.6f}s > own {self.sections[name].seconds:.6f}s"
                )
        return bad

    def table_lines(self, wall_seconds: float | None = None) -> list[str]:
        """Indented breakdown table; percentages against wall_seconds if given."""
        base = wall_seconds
        if base is None:
            base = sum(self.sections[s].seconds for s in self.children(None)) or 1.0
        lines = [f"{'section':<24} {'calls':>10} {'wall_s':>14} {'percent':>8}"]

        def emit(name: str, depth: int):
            entry = self.sections[name]
            label = "  " * depth + name
            lines.append(
                f"{label:<24} {entry.calls:>10} {entry.seconds:>14.6f} "
                f"{100.0 * entry.seconds / base:>8.2f}"
            )
            for child in self.children(name):
                emit(child, depth + 1)

        for root in self.children(None):
            emit(root, 0)
        return lines


def timed_section(report: TimingReport | None, name: str, thunk):
    """Run thunk() inside a named section; passes through when report is None."""
    if report is None:
        return thunk()
    with report.section(name):
        return thunk()


@contextmanager
def _maybe_section(report: TimingReport | None, name: str):
    if report is None:
        yield
    else:
        with report.section(name):
            yield


@dataclass
class SlabPartition:
    """1D domain decomposition along x at cluster granularity.

    boundaries has n_slabs + 1 ascending entries spanning [0, Lx];
    assignments maps each schedulable unit (i-cluster, or super group when
    grouping is active) to a slab by its center x coordinate.
    """

    boundaries: np.ndarray
    min_width: float
    assignments: np.ndarray
    last_timings: np.ndarray | None = None

    @property
    def n_slabs(self) -> int:
        return self.boundaries.shape[0] - 1

    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)


def _unit_centers_x(grid: ClusterGrid, supercluster_size: int) -> np.ndarray:
    centers = grid.cluster_centers()[:, 0]
    if supercluster_size == 1:
        return centers
    n_groups = -(-grid.n_clusters // supercluster_size)
    out = np.empty(n_groups, dtype=np.float64)
    for g in range(n_groups):
        lo = g * supercluster_size
        hi = min(lo + supercluster_size, grid.n_clusters)
        out[g] = centers[lo:hi].mean()
    return out


def assign_slabs(boundaries: np.ndarray, centers_x: np.ndarray) -> np.ndarray:
    """Slab index per unit center; centers on a boundary go to the right slab."""
    idx = np.searchsorted(boundaries[1:-1], centers_x, side="right")
    return np.clip(idx, 0, boundaries.shape[0] - 2).astype(np.int64)


def build_slab_partition(
    box_length_x: float,
    n_slabs: int,
    min_width: float,
    grid: ClusterGrid | None = None,
    supercluster_size: int = 1,
) -> SlabPartition:
    """Equal-width initial partition of [0, Lx] into n_slabs slabs."""
    if n_slabs < 1:
        raise ParameterError(f"n_slabs must be >= 1, got {n_slabs}")
    if min_width <= 0.0 or n_slabs * min_width > box_length_x:
        raise ParameterError(
            f"{n_slabs} slabs of minimum width {min_width} do not fit in "
            f"box length {box_length_x}"
        )
    boundaries = np.linspace(0.0, box_length_x, n_slabs + 1)
    boundaries[-1] = box_length_x
    if grid is not None:
        assignments = assign_slabs(boundaries, _unit_centers_x(grid, supercluster_size))
    else:
        assignments = np.empty(0, dtype=np.int64)
    return SlabPartition(
        boundaries=boundaries, min_width=float(min_width), assignments=assignments
    )


def rebalance_slabs(
    partition: SlabPartition,
    timings,
    alpha: float = 0.5,
    grid: ClusterGrid | None = None,
    supercluster_size: int = 1,
) -> SlabPartition:
    """Shrink slow slabs and grow fast ones from observed per-slab times.

    Proposed widths scale each current width by t_mean / t_slab, are
    renormalized to span the box, clamped to min_width (redistributing the
    excess over unclamped slabs), and blended with the old widths by alpha.
    Equal timings leave the boundaries unchanged.  Assignments are refreshed
    when a grid is supplied, otherwise left for the caller.
    """
    t = np.asarray(timings, dtype=np.float64)
    n = partition.n_slabs
    if t.shape != (n,):
        raise ParameterError(f"expected {n} timings, got shape {t.shape}")
    if np.any(t <= 0.0) or not np.all(np.isfinite(t)):
        raise ParameterError("per-slab timings must be positive and finite")
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")

    span = float(partition.boundaries[-1] - partition.boundaries[0])
    old = partition.widths()
    proposed = old * (t.mean() / t)
    proposed *= span / proposed.sum()

    free = np.ones(n, dtype=bool)
    for _ in range(n):
        clamped = free & (proposed < partition.min_width)
        if not np.any(clamped):
            break
        free &= ~clamped
        proposed[~free] = partition.min_width
        remaining = span - partition.min_width * np.count_nonzero(~free)
        if np.any(free):
            proposed[free] *= remaining / proposed[free].sum()

    new_widths = alpha * proposed + (1.0 - alpha) * old
    boundaries = np.empty(n + 1, dtype=np.float64)
    boundaries[0] = partition.boundaries[0]
    np.cumsum(new_widths, out=boundaries[1:])
    boundaries[1:] += partition.boundaries[0]
    boundaries[-1] = partition.boundaries[-1]

    assignments = partition.assignments
    if grid is not None:
        assignments = assign_slabs(boundaries, _unit_centers_x(grid, supercluster_size))
    return SlabPartition(
        boundaries=boundaries,
        min_width=partition.min_width,
        assignments=assignments,
        last_timings=None,
    )


@dataclass
class ListPolicy:
    """When to rebuild the pair list and whether to prune fresh lists."""

    rebuild_interval: int = 10
    prune_on_build: bool = True

    def __post_init__(self):
        if self.rebuild_interval < 1:
            raise ParameterError(
                f"rebuild_interval must be >= 1, got {self.rebuild_interval}"
            )


@dataclass
class MDState:
    """Everything that evolves during a run."""

    system: ParticleSystem
    step: int
    grid: ClusterGrid
    plist: ClusterPairList
    drift: DriftTracker
    n_rebuilds: int = 0
    n_drift_rebuilds: int = 0
    slabs: SlabPartition | None = None


def _rebuild(
    state: MDState,
    params: NonbondedParams,
    policy: ListPolicy,
    timer: TimingReport | None,
) -> None:
    box = state.system.box
    with _maybe_section(timer, "grid_build"):
        grid = build_cluster_grid(state.system, state.grid.m)
    with _maybe_section(timer, "list_build"):
        plist = build_pair_list(
            grid,
            box,
            params.r_list,
            supercluster_size=state.plist.supercluster_size,
            n_lane=state.plist.n_lane,
            build_step=state.step,
        )
    if policy.prune_on_build and policy.rebuild_interval > 1:
        with _maybe_section(timer, "prune"):
            plist = prune_pair_list(plist, grid.clustered_positions, box)
    state.grid = grid
    state.plist = plist
    state.drift = DriftTracker(
        reference_positions=wrap_position(state.system.positions, box)
    )
    state.n_rebuilds += 1
    if state.slabs is not None:
        timings = state.slabs.last_timings
        if timings is not None and np.all(timings > 0.0):
            state.slabs = rebalance_slabs(
                state.slabs,
                timings,
                grid=grid,
                supercluster_size=state.plist.supercluster_size,
            )
        else:
            state.slabs.assignments = assign_slabs(
                state.slabs.boundaries,
                _unit_centers_x(grid, state.plist.supercluster_size),
            )


def init_state(
    system: ParticleSystem,
    params: NonbondedParams,
    layout: KernelLayout,
    *,
    supercluster_size: int = 1,
    policy: ListPolicy | None = None,
    n_slabs: int = 0,
    slab_min_width: float | None = None,
    timer: TimingReport | None = None,
) -> MDState:
    """Build the initial grid, list, and (optionally) slab partition."""
    if params.r_list < params.r_cut:
        raise ParameterError(
            f"r_list={params.r_list} must be >= r_cut={params.r_cut}"
        )
    policy = policy or ListPolicy()
    grid = build_cluster_grid(system, layout.m)
    plist = build_pair_list(
        grid,
        system.box,
        params.r_list,
        supercluster_size=supercluster_size,
        n_lane=layout.n_lane,
        build_step=0,
    )
    if policy.prune_on_build and policy.rebuild_interval > 1:
        plist = prune_pair_list(plist, grid.clustered_positions, system.box)
    state = MDState(
        system=system,
        step=0,
        grid=grid,
        plist=plist,
        drift=DriftTracker(
            reference_positions=wrap_position(system.positions, system.box)
        ),
        n_rebuilds=1,
    )
    if n_slabs > 0:
        width = params.r_list if slab_min_width is None else slab_min_width
        state.slabs = build_slab_partition(
            float(system.box.lengths[0]),
            n_slabs,
            width,
            grid=grid,
            supercluster_size=supercluster_size,
        )
    return state


def lifecycle_tick(
    state: MDState,
    params: NonbondedParams,
    policy: ListPolicy,
    timer: TimingReport | None = None,
) -> bool:
    """Rebuild grid and list when the interval or the drift guard demands it.

    The guard triggers once two particles could have closed the buffer gap:
    2 * max_displacement > r_list - r_cut.  Returns True when a rebuild
    happened.
    """
    interval_due = state.step - state.plist.build_step >= policy.rebuild_interval
    guard_due = 2.0 * state.drift.max_displacement > params.r_list - params.r_cut
    if not (interval_due or guard_due):
        return False
    if guard_due and not interval_due:
        state.n_drift_rebuilds += 1
    _rebuild(state, params, policy, timer)
    return True


def _chunk_by_weight(weights: np.ndarray, n_chunks: int) -> list[np.ndarray]:
    """Contiguous index ranges with roughly equal total weight."""
    n = weights.shape[0]
    if n_chunks <= 1 or n == 0:
        return [np.arange(n, dtype=np.int64)]
    cum = np.cumsum(weights, dtype=np.float64)
    total = cum[-1]
    if total <= 0.0:
        cuts = np.linspace(0, n, n_chunks + 1).astype(np.int64)
    else:
        targets = total * np.arange(1, n_chunks) / n_chunks
        cuts = np.concatenate(
            [[0], np.searchsorted(cum, targets, side="left") + 1, [n]]
        )
        cuts = np.minimum(np.maximum.accumulate(cuts), n)
    return [
        np.arange(cuts[k], cuts[k + 1], dtype=np.int64) for k in range(n_chunks)
    ]


def _schedule_units(state: MDState, workers: int) -> list[np.ndarray]:
    """Partition i-clusters (or groups) across workers.

    With an active slab partition the slabs are the chunks; otherwise
    contiguous ranges balanced by admitted-pair counts.
    """
    plist = state.plist
    grouped = plist.supercluster_size > 1
    n_units = plist.n_super_groups if grouped else plist.n_i_clusters
    if state.slabs is not None:
        chunks = []
        for s in range(state.slabs.n_slabs):
            chunks.append(
                np.nonzero(state.slabs.assignments == s)[0].astype(np.int64)
            )
        return chunks
    per_i = np.zeros(plist.n_i_clusters, dtype=np.float64)
    if plist.n_pairs:
        pair_weight = plist.masks.reshape(plist.n_pairs, -1).sum(axis=1)
        np.add.at(per_i, plist.pair_i_clusters(), pair_weight)
    if grouped:
        ssize = plist.supercluster_size
        padded = np.pad(per_i, (0, n_units * ssize - per_i.shape[0]))
        weights = (
            np.add.reduceat(padded, np.arange(0, n_units * ssize, ssize))
            if n_units
            else np.empty(0)
        )
    else:
        weights = per_i
    return _chunk_by_weight(weights, workers)


def parallel_forces(
    state: MDState,
    params: NonbondedParams,
    layout: KernelLayout,
    workers: int = 1,
    timer: TimingReport | None = None,
) -> ForcesEnergies:
    """Force pass over the current list; forces in original particle order.

    Results are independent of the worker count to within floating-point
    reduction order of per-worker buffers, and bit-identical across repeated
    calls with the same worker count.  With an active slab partition the
    worker count is the slab count and per-slab wall times are recorded for
    the next rebalance.
    """
    system = state.system
    grid = state.grid
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    if state.slabs is not None:
        workers = state.slabs.n_slabs
    chunks = _schedule_units(state, workers)

    def run_chunk(i_sel: np.ndarray):
        buf = np.zeros((grid.n_slots, 3), dtype=np.float64)
        start = time.perf_counter()
        e_lj, e_c = compute_nonbonded_into(
            state.plist,
            grid,
            system.positions,
            system.charges,
            system.lj_type,
            params,
            system.box,
            layout,
            buf,
            i_sel=i_sel,
        )
        return buf, e_lj, e_c, time.perf_counter() - start

    if len(chunks) == 1:
        results = [run_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run_chunk, chunks))

    f_clustered = np.zeros((grid.n_slots, 3), dtype=np.float64)
    e_lj = 0.0
    e_c = 0.0
    for buf, part_lj, part_c, _elapsed in results:
        f_clustered += buf
        e_lj += part_lj
        e_c += part_c
    if state.slabs is not None:
        state.slabs.last_timings = np.asarray(
            [elapsed for _, _, _, elapsed in results], dtype=np.float64
        )
    return ForcesEnergies(
        forces=scatter_to_original(grid, f_clustered), e_lj=e_lj, e_coulomb=e_c
    )


def kinetic_energy(system: ParticleSystem) -> float:
    return 0.5 * float(
        np.einsum("k,kd,kd->", system.masses, system.velocities, system.velocities)
    )


def temperature(system: ParticleSystem) -> float:
    """Instantaneous kinetic temperature with net-momentum modes removed."""
    n = system.n
    if n == 0:
        return 0.0
    dof = 3 * n - 3 if n > 1 else 3
    return 2.0 * kinetic_energy(system) / (dof * BOLTZMANN_KJ_MOL_K)


def total_momentum(system: ParticleSystem) -> np.ndarray:
    return np.einsum("k,kd->d", system.masses, system.velocities)


def velocity_verlet_step(
    state: MDState,
    params: NonbondedParams,
    dt: float,
    forces_in: ForcesEnergies,
    layout: KernelLayout,
    *,
    policy: ListPolicy | None = None,
    workers: int = 1,
    timer: TimingReport | None = None,
) -> ForcesEnergies:
    """Advance one step; mutates state, returns forces at the new positions.

    forces_in must have been evaluated at the current positions (original
    order).  Positions are wrapped into the box every step; the drift guard
    and rebuild interval run between the position update and the force pass.
    """
    policy = policy or ListPolicy()
    system = state.system
    inv_mass = (0.5 * dt) / system.masses[:, None]

    with _maybe_section(timer, "integrate"):
        velocities = system.velocities + forces_in.forces * inv_mass
        positions = wrap_position(system.positions + velocities * dt, system.box)
        state.system = replace(system, positions=positions, velocities=velocities)
        state.step += 1
        state.drift = update_drift(state.drift, positions, system.box)

    with _maybe_section(timer, "lifecycle"):
        lifecycle_tick(state, params, policy, timer)

    with _maybe_section(timer, "forces"):
        forces_out = parallel_forces(state, params, layout, workers, timer)

    with _maybe_section(timer, "integrate"):
        velocities = state.system.velocities + forces_out.forces * inv_mass
        state.system = replace(state.system, velocities=velocities)
    return forces_out


@dataclass
class RunResult:
    """Final state plus the per-interval series and timing of one run."""

    state: MDState
    forces: ForcesEnergies
    steps: np.ndarray
    e_kinetic: np.ndarray
    e_potential: np.ndarray
    temperature: np.ndarray
    max_drift: np.ndarray
    timing: TimingReport
    wall_seconds: float
    log_lines: list[str] = field(default_factory=list)

    @property
    def e_total(self) -> np.ndarray:
        return self.e_kinetic + self.e_potential

    def energy_drift(self) -> tuple[float, float]:
        """(max absolute, max relative) total-energy deviation from step 0."""
        e = self.e_total
        dev = float(np.abs(e - e[0]).max())
        scale = abs(float(e[0]))
        return dev, dev / scale if scale > 0 else dev


def run_md(
    system: ParticleSystem,
    params: NonbondedParams,
    layout: KernelLayout,
    dt: float,
    n_steps: int,
    *,
    supercluster_size: int = 1,
    policy: ListPolicy | None = None,
    workers: int = 1,
    n_slabs: int = 0,
    slab_min_width: float | None = None,
    report_interval: int = 100,
    timer: TimingReport | None = None,
) -> RunResult:
    """Integrate n_steps of NVE dynamics and log energies per interval.

    The log records step, kinetic/potential/total energy, temperature, and
    the tracked maximum drift; a timing breakdown is appended after the
    deterministic part.
    """
    if dt <= 0.0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if n_steps < 0:
        raise ParameterError(f"n_steps must be >= 0, got {n_steps}")
    policy = policy or ListPolicy()
    timer = timer or TimingReport()
    wall_start = time.perf_counter()

    with timer.section("setup"):
        state = init_state(
            system,
            params,
            layout,
            supercluster_size=supercluster_size,
            policy=policy,
            n_slabs=n_slabs,
            slab_min_width=slab_min_width,
        )
        forces = parallel_forces(state, params, layout, workers)

    steps: list[int] = []
    e_kin: list[float] = []
    e_pot: list[float] = []
    temps: list[float] = []
    drifts: list[float] = []
    log_lines = [
        "# clustermd run log",
        "# step e_kinetic e_potential e_total temperature_K max_drift_nm",
    ]

    def record():
        ke = kinetic_energy(state.system)
        pe = forces.e_potential
        steps.append(state.step)
        e_kin.append(ke)
        e_pot.append(pe)
        temps.append(temperature(state.system))
        drifts.append(state.drift.max_displacement)
        log_lines.append(
            f"{state.step} {ke:.10e} {pe:.10e} {ke + pe:.10e} "
            f"{temps[-1]:.6f} {drifts[-1]:.6e}"
        )

    record()
    for _ in range(n_steps):
        with timer.section("step"):
            forces = velocity_verlet_step(
                state, params, dt, forces, layout,
                policy=policy, workers=workers, timer=timer,
            )
            if state.step % report_interval == 0 or state.step == n_steps:
                with timer.section("report"):
                    record()
    wall_seconds = time.perf_counter() - wall_start

    e_kin_arr = np.asarray(e_kin)
    e_pot_arr = np.asarray(e_pot)
    e_tot = e_kin_arr + e_pot_arr
    dev = np.abs(e_tot - e_tot[0]).max() if e_tot.shape[0] else 0.0
    rel = dev / abs(e_tot[0]) if e_tot.shape[0] and e_tot[0] != 0 else dev
    log_lines.append(f"# energy drift: abs={dev:.6e} kJ/mol rel={rel:.6e}")
    log_lines.append("# timing breakdown")
    log_lines.extend(timer.table_lines(wall_seconds))

    return RunResult(
        state=state,
        forces=forces,
        steps=np.asarray(steps, dtype=np.int64),
        e_kinetic=e_kin_arr,
        e_potential=e_pot_arr,
        temperature=np.asarray(temps),
        max_drift=np.asarray(drifts),
        timing=timer,
        wall_seconds=wall_seconds,
        log_lines=log_lines,
    )
