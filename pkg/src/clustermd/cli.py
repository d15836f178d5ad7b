"""Command line interface: gen, run, verify, bench.

Exit codes: 0 success, 1 tolerance or validation failure, 2 usage error
(bad flags, unreadable files, out-of-range parameters).
"""

from __future__ import annotations

import argparse
import math
import statistics
import sys
from dataclasses import dataclass

import numpy as np

from .engine import (
    ListPolicy,
    TimingReport,
    init_state,
    parallel_forces,
    run_md,
)
from .gridder import build_cluster_grid
from .kernels import KernelLayout, flop_count
from .model import (
    BOLTZMANN_KJ_MOL_K,
    NonbondedParams,
    ParameterError,
    ParticleSystem,
    SimBox,
    SingularityError,
    load_system,
    save_system,
    validate_system,
    wrap_position,
)
from .oracle import brute_force_nonbonded, brute_force_pairs
from .pairlist import (
    admitted_pairs,
    build_pair_list,
    interaction_stats,
    prune_pair_list,
    write_pairs_csv,
)

ORACLE_PARTICLE_LIMIT = 20_000

VERIFY_FORCE_TOL = 1e-10
VERIFY_ENERGY_TOL = 1e-12

ARGON_EPSILON = 0.996   # kJ/mol
ARGON_SIGMA = 0.34      # nm
ARGON_MASS = 39.948     # u

BENCH_CSV_HEADER = "# clustermd-bench-csv-v1"


class GenerationError(RuntimeError):
    """Requested system parameters cannot be realized without overlaps."""


@dataclass
class RunConfig:
    """Flat run parameters; file entries override defaults, flags override both."""

    system: str = ""
    out: str = ""
    dt: float = 2e-3
    steps: int = 100
    r_cut: float = 0.9
    r_list: float = 1.0
    m: int = 4
    n_lane: int = 4
    supercluster: int = 1
    rebuild_interval: int = 10
    prune: bool = True
    shift_potential: bool = True
    workers: int = 1
    slabs: int = 0
    slab_min_width: float = 0.0
    seed: int = 2024
    report_interval: int = 100


_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _coerce(value: str, target_type):
    if target_type is bool:
        word = value.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ParameterError(f"cannot parse boolean from {value!r}")
    return target_type(value)


def load_config(path) -> RunConfig:
    """Parse a flat `key = value` file with # comments into a RunConfig."""
    config = RunConfig()
    concrete = {"system": str, "out": str, "dt": float, "steps": int,
                "r_cut": float, "r_list": float, "m": int, "n_lane": int,
                "supercluster": int, "rebuild_interval": int, "prune": bool,
                "shift_potential": bool, "workers": int, "slabs": int,
                "slab_min_width": float, "seed": int, "report_interval": int}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(
                    f"{path}:{lineno}: expected `key = value`, got {raw.rstrip()!r}"
                )
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in concrete:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(config, key, _coerce(value, concrete[key]))
    return config


def _apply_flag_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    mapping = {
        "system": "system",
        "out": "out",
        "dt": "dt",
        "steps": "steps",
        "rlist": "r_list",
        "rcut": "r_cut",
        "supercluster": "supercluster",
        "rebuild_interval": "rebuild_interval",
        "workers": "workers",
        "slabs": "slabs",
        "seed": "seed",
        "report_interval": "report_interval",
    }
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, key, value)
    layout = getattr(args, "layout", None)
    if layout is not None:
        config.m, config.n_lane = _parse_layout(layout)
    return config


def _parse_layout(text: str) -> tuple[int, int]:
    try:
        m_str, n_str = text.split(",")
        return int(m_str), int(n_str)
    except ValueError as exc:
        raise ParameterError(f"layout must be `M,N`, got {text!r}") from exc


def generate_system(
    kind: str,
    n: int,
    density: float,
    temperature: float,
    seed: int,
    charge: float = 0.2,
) -> tuple[ParticleSystem, np.ndarray]:
    """Deterministically generate a fluid configuration in a cubic box.

    Particles start on a cubic lattice with uniform jitter small enough that
    no pair comes closer than 0.8 sigma; velocities are Maxwell-Boltzmann at
    the requested temperature with the net momentum removed.  Identical
    arguments produce identical systems.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if density <= 0.0:
        raise ParameterError(f"density must be positive, got {density}")
    if temperature < 0.0:
        raise ParameterError(f"temperature must be >= 0, got {temperature}")

    if kind == "lj_fluid":
        lj_table = np.array([[[ARGON_EPSILON, ARGON_SIGMA]]])
        lj_type = np.zeros(n, dtype=np.int64)
        masses = np.full(n, ARGON_MASS)
        charges = np.zeros(n)
    elif kind == "charged_fluid":
        eps = np.array([ARGON_EPSILON, 0.8])
        sig = np.array([ARGON_SIGMA, 0.30])
        cross_eps = math.sqrt(eps[0] * eps[1])
        cross_sig = 0.5 * (sig[0] + sig[1])
        lj_table = np.array(
            [
                [[eps[0], sig[0]], [cross_eps, cross_sig]],
                [[cross_eps, cross_sig], [eps[1], sig[1]]],
            ]
        )
        lj_type = (np.arange(n) % 2).astype(np.int64)
        masses = np.where(lj_type == 0, ARGON_MASS, 20.180)
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        charges = charge * signs
        if n % 2 == 1:
            charges[-1] = 0.0  # keep the box neutral for odd counts
    else:
        raise ParameterError(f"unknown system kind {kind!r}")

    edge = (n / density) ** (1.0 / 3.0)
    box = SimBox([edge, edge, edge])

    k = max(1, int(round(n ** (1.0 / 3.0))))
    while k * k * k < n:
        k += 1
    spacing = edge / k
    sigma_max = float(lj_table[:, :, 1].max())
    min_sep = 0.8 * sigma_max
    if spacing <= min_sep:
        raise GenerationError(
            f"density {density} nm^-3 packs lattice spacing {spacing:.4f} nm "
            f"below the minimum separation {min_sep:.4f} nm"
        )

    idx = np.arange(n)
    sites = np.stack(
        [idx // (k * k), (idx // k) % k, idx % k], axis=1
    ).astype(np.float64)
    positions = sites * spacing

    rng = np.random.default_rng(seed)
    if n > 1:
        amplitude = 0.45 * (spacing - min_sep)
        positions = positions + rng.uniform(-amplitude, amplitude, (n, 3))

    if temperature > 0.0:
        scale = np.sqrt(BOLTZMANN_KJ_MOL_K * temperature / masses)
        velocities = scale[:, None] * rng.standard_normal((n, 3))
        if n > 1:
            total_mass = masses.sum()
            for _ in range(2):  # second pass removes the rounding residue
                momentum = np.einsum("k,kd->d", masses, velocities)
                velocities = velocities - momentum / total_mass
    else:
        velocities = np.zeros((n, 3))

    system = ParticleSystem(
        positions=positions,
        velocities=velocities,
        masses=masses,
        charges=charges,
        lj_type=lj_type,
        box=box,
    )
    return system, lj_table


def _params_from_config(config: RunConfig, lj_table) -> NonbondedParams:
    return NonbondedParams(
        r_cut=config.r_cut,
        r_list=config.r_list,
        lj_table=lj_table,
        shift_potential=config.shift_potential,
    )


def cmd_gen(args: argparse.Namespace) -> int:
    system, lj_table = generate_system(
        args.kind, args.n, args.density, args.temperature, args.seed
    )
    save_system(args.out, system, lj_table)
    print(f"wrote {args.kind} n={system.n} box={system.box.lengths.tolist()} to {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    config = _apply_flag_overrides(config, args)
    if not config.system:
        raise ParameterError("run requires --system or a config `system` entry")
    system, lj_table = load_system(config.system)
    params = _params_from_config(config, lj_table)
    problems = validate_system(system, params)
    if problems:
        for p in problems:
            print(f"validation: {p}", file=sys.stderr)
        return 1

    layout = KernelLayout(m=config.m, n_lane=config.n_lane)
    policy = ListPolicy(
        rebuild_interval=config.rebuild_interval, prune_on_build=config.prune
    )
    result = run_md(
        system,
        params,
        layout,
        config.dt,
        config.steps,
        supercluster_size=config.supercluster,
        policy=policy,
        workers=config.workers,
        n_slabs=config.slabs,
        slab_min_width=config.slab_min_width or None,
        report_interval=config.report_interval,
    )
    text = "\n".join(result.log_lines) + "\n"
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if getattr(args, "final_system", None):
        save_system(args.final_system, result.state.system, lj_table)
    return 0


def _drop_heaviest_pair(plist, positions, box, r_cut):
    """Fault injection: remove the cluster pair admitting the most in-range pairs."""
    from dataclasses import replace as dc_replace

    from .pairlist import _pair_min_dist_sq  # deliberate test hook

    if plist.n_pairs == 0:
        return plist
    per_pair = plist.masks.reshape(plist.n_pairs, -1).sum(axis=1)
    min_dist_sq = _pair_min_dist_sq(plist, positions, box)
    in_range = min_dist_sq <= r_cut * r_cut
    candidates = np.where(in_range, per_pair, -1)
    victim = int(np.argmax(candidates))
    keep = np.ones(plist.n_pairs, dtype=bool)
    keep[victim] = False
    ci_arr = plist.pair_i_clusters()
    counts = np.bincount(ci_arr[keep], minlength=plist.n_i_clusters)
    offsets = np.zeros(plist.n_i_clusters + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return dc_replace(
        plist,
        offsets=offsets,
        j_idx=plist.j_idx[keep],
        masks=plist.masks[keep],
        super_offsets=None,
        super_j_idx=None,
        super_pair_idx=None,
        supercluster_size=1,
    )


def cmd_verify(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    config = _apply_flag_overrides(config, args)
    if not config.system:
        raise ParameterError("verify requires --system or a config `system` entry")
    system, lj_table = load_system(config.system)
    if system.n > ORACLE_PARTICLE_LIMIT:
        print(
            f"refusing brute-force verification of n={system.n} particles "
            f"(limit {ORACLE_PARTICLE_LIMIT})",
            file=sys.stderr,
        )
        return 2
    params = _params_from_config(config, lj_table)
    problems = validate_system(system, params)
    if problems:
        for p in problems:
            print(f"validation: {p}", file=sys.stderr)
        return 1

    layout = KernelLayout(m=config.m, n_lane=config.n_lane)
    grid = build_cluster_grid(system, layout.m)
    plist = build_pair_list(
        grid,
        system.box,
        params.r_list,
        supercluster_size=config.supercluster,
        n_lane=config.n_lane,
    )
    if config.prune:
        plist = prune_pair_list(plist, grid.clustered_positions, system.box)
    if args.inject_drop_pair:
        plist = _drop_heaviest_pair(
            plist, grid.clustered_positions, system.box, params.r_cut
        )
    if args.csv:
        write_pairs_csv(plist, grid, system.box, args.csv)

    from .kernels import compute_nonbonded_original

    engine_result = compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    reference = brute_force_nonbonded(system, params)

    if system.n:
        force_scale = float(np.abs(reference.forces).max())
        force_dev = float(np.abs(engine_result.forces - reference.forces).max())
    else:
        force_scale = force_dev = 0.0
    force_rel = force_dev / force_scale if force_scale > 0 else force_dev

    def rel_err(value, ref):
        return abs(value - ref) / abs(ref) if ref != 0 else abs(value - ref)

    e_lj_rel = rel_err(engine_result.e_lj, reference.e_lj)
    e_c_rel = rel_err(engine_result.e_coulomb, reference.e_coulomb)

    admitted = admitted_pairs(plist, grid)
    wrapped = wrap_position(system.positions, system.box)
    required = brute_force_pairs(wrapped, system.box, params.r_cut)
    missing = required - admitted
    stats = interaction_stats(
        plist, grid, grid.clustered_positions, system.box, params.r_cut
    )

    ok = (
        force_rel <= VERIFY_FORCE_TOL
        and e_lj_rel <= VERIFY_ENERGY_TOL
        and e_c_rel <= VERIFY_ENERGY_TOL
        and not missing
    )
    print(f"n: {system.n}")
    print(f"layout: m={layout.m} n_lane={layout.n_lane} supercluster={config.supercluster}")
    print(f"force_max_rel_error: {force_rel:.3e} (tol {VERIFY_FORCE_TOL:.0e})")
    print(f"e_lj_rel_error: {e_lj_rel:.3e} (tol {VERIFY_ENERGY_TOL:.0e})")
    print(f"e_coulomb_rel_error: {e_c_rel:.3e} (tol {VERIFY_ENERGY_TOL:.0e})")
    print(f"coverage_missing_pairs: {len(missing)} of {len(required)} required")
    print(f"admitted_pairs: {stats.n_admitted} within_cutoff: {stats.n_within_cutoff} "
          f"ratio: {stats.ratio:.3f}")
    print(f"verdict: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    config = _apply_flag_overrides(config, args)
    if not config.system:
        raise ParameterError("bench requires --system or a config `system` entry")
    system, lj_table = load_system(config.system)
    params = _params_from_config(config, lj_table)
    problems = validate_system(system, params)
    if problems:
        for p in problems:
            print(f"validation: {p}", file=sys.stderr)
        return 1

    layouts = [_parse_layout(part) for part in args.layouts.split(";")] if args.layouts \
        else [(config.m, config.n_lane)]
    worker_counts = [int(w) for w in args.workers_list.split(",")] if args.workers_list \
        else [config.workers]
    intervals = [int(r) for r in args.rebuild_intervals.split(",")] if args.rebuild_intervals \
        else [config.rebuild_interval]
    repeats = args.repeats

    rows = []
    for m, n_lane in layouts:
        layout = KernelLayout(m=m, n_lane=n_lane)
        for workers in worker_counts:
            for interval in intervals:
                policy = ListPolicy(rebuild_interval=interval, prune_on_build=config.prune)
                rates = []
                last = None
                for _ in range(repeats):
                    result = run_md(
                        system, params, layout, config.dt, config.steps,
                        supercluster_size=config.supercluster, policy=policy,
                        workers=workers, report_interval=max(config.steps, 1),
                    )
                    step_wall = result.timing.total("step")
                    rates.append(config.steps / step_wall if step_wall > 0 else 0.0)
                    last = result
                median_rate = statistics.median(rates)
                spread = (max(rates) - min(rates)) / median_rate if median_rate else 0.0
                ns_per_day = median_rate * config.dt * 86.4

                grid = build_cluster_grid(system, m)
                plist = build_pair_list(
                    grid, system.box, params.r_list,
                    supercluster_size=config.supercluster, n_lane=n_lane,
                )
                if config.prune:
                    plist = prune_pair_list(plist, grid.clustered_positions, system.box)
                stats = interaction_stats(
                    plist, grid, grid.clustered_positions, system.box, params.r_cut
                )
                flops = flop_count(plist, grid, layout, system.box, params.r_cut)

                step_total = last.timing.total("step") or 1.0
                shares = {}
                for name in ("forces", "lifecycle", "integrate"):
                    shares[name] = (
                        last.timing.sections[name].seconds / step_total
                        if name in last.timing.sections
                        else 0.0
                    )
                rows.append(
                    [
                        m, n_lane, config.supercluster, workers, interval,
                        config.steps, repeats,
                        repr(median_rate), repr(spread), repr(ns_per_day),
                        repr(stats.ratio), repr(flops.ratio),
                        repr(shares["forces"]), repr(shares["lifecycle"]),
                        repr(shares["integrate"]),
                        repr(float(last.e_total[0])),
                    ]
                )

    out_path = args.csv
    columns = [
        "m", "n_lane", "supercluster", "workers", "rebuild_interval",
        "steps", "repeats", "steps_per_s_median", "steps_per_s_spread",
        "ns_per_day", "pair_ratio", "useful_flop_ratio",
        "share_forces", "share_lifecycle", "share_integrate", "e_total_step0",
    ]
    lines = [BENCH_CSV_HEADER, ",".join(columns)]
    lines += [",".join(str(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clustermd",
        description="Short-range MD on cluster pair lists: generate, run, "
        "verify against brute force, and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a fluid system JSON")
    p_gen.add_argument("--kind", choices=["lj_fluid", "charged_fluid"],
                       default="lj_fluid")
    p_gen.add_argument("--n", type=int, default=1000)
    p_gen.add_argument("--density", type=float, default=26.3,
                       help="number density in nm^-3")
    p_gen.add_argument("--temperature", type=float, default=120.0)
    p_gen.add_argument("--seed", type=int, default=2024)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(handler=cmd_gen)

    def add_shared(p):
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--system", default=None, help="system JSON path")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--layout", default=None, metavar="M,N")
        p.add_argument("--supercluster", type=int, choices=[1, 8], default=None)
        p.add_argument("--rlist", type=float, default=None)
        p.add_argument("--rcut", type=float, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--rebuild-interval", dest="rebuild_interval",
                       type=int, default=None)
        p.add_argument("--slabs", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="integrate NVE dynamics and log energies")
    add_shared(p_run)
    p_run.add_argument("--out", default=None, help="log path (default stdout)")
    p_run.add_argument("--report-interval", dest="report_interval",
                       type=int, default=None)
    p_run.add_argument("--final-system", dest="final_system", default=None,
                       help="write the final state as system JSON")
    p_run.set_defaults(handler=cmd_run)

    p_verify = sub.add_parser(
        "verify", help="compare one force evaluation against brute force"
    )
    add_shared(p_verify)
    p_verify.add_argument("--csv", default=None,
                          help="write per-pair distance diagnostics CSV")
    p_verify.add_argument("--inject-drop-pair", action="store_true",
                          help="drop one cluster pair to prove the check can fail")
    p_verify.set_defaults(handler=cmd_verify)

    p_bench = sub.add_parser("bench", help="sweep layouts and emit a CSV")
    add_shared(p_bench)
    p_bench.add_argument("--layouts", default=None,
                         help="semicolon-separated M,N list, e.g. 4,4;8,8")
    p_bench.add_argument("--workers-list", dest="workers_list", default=None)
    p_bench.add_argument("--rebuild-intervals", dest="rebuild_intervals",
                         default=None)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--csv", default=None, help="output CSV (default stdout)")
    p_bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ParameterError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, GenerationError) else 2
    except SingularityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
