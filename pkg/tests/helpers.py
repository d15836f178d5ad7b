"""Shared builders and independent reference computations for the tests."""

from __future__ import annotations

from dataclasses import replace
from itertools import product

import numpy as np

import clustermd as cm
from clustermd.cli import generate_system

ARGON_TABLE = np.array([[[0.996, 0.34]]])


def uniform_system(n, box_lengths, seed, charged=False, n_types=1):
    """Uniform random positions in an arbitrary box, zero velocities."""
    rng = np.random.default_rng(seed)
    box = cm.SimBox(box_lengths)
    positions = rng.uniform(0.0, 1.0, (n, 3)) * np.asarray(box_lengths)
    charges = np.zeros(n)
    if charged:
        charges = 0.1 * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    lj_type = (np.arange(n) % n_types).astype(np.int64)
    return cm.ParticleSystem(
        positions=positions,
        velocities=np.zeros((n, 3)),
        masses=np.full(n, 39.948),
        charges=charges,
        lj_type=lj_type,
        box=box,
    )


def type_table(n_types, base_eps=0.996, base_sig=0.34):
    """Symmetric LJ table with mildly distinct per-type parameters."""
    eps = base_eps * (1.0 + 0.1 * np.arange(n_types))
    sig = base_sig * (1.0 - 0.05 * np.arange(n_types))
    table = np.empty((n_types, n_types, 2))
    for a in range(n_types):
        for b in range(n_types):
            table[a, b, 0] = np.sqrt(eps[a] * eps[b])
            table[a, b, 1] = 0.5 * (sig[a] + sig[b])
    return table


def fluid(kind, n, density, temperature, seed):
    """generate_system plus matching params at r_cut=0.9, r_list=1.0."""
    system, table = generate_system(kind, n, density, temperature, seed)
    params = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=table, shift_potential=True
    )
    return system, params


def max_rel_force_error(f_test, f_ref):
    scale = float(np.abs(f_ref).max())
    dev = float(np.abs(np.asarray(f_test) - np.asarray(f_ref)).max())
    if scale == 0.0:
        return dev
    return dev / scale


def rel_or_abs(value, ref):
    return abs(value - ref) / abs(ref) if ref != 0.0 else abs(value - ref)


def min_image_brute(dr, lengths, reach=2):
    """Minimum-norm image of dr by full enumeration over shifted copies."""
    dr = np.asarray(dr, dtype=np.float64)
    best = None
    best_norm = np.inf
    shifts = range(-reach, reach + 1)
    for kx, ky, kz in product(shifts, shifts, shifts):
        cand = dr + np.asarray([kx, ky, kz], dtype=np.float64) * lengths
        norm = float(np.dot(cand, cand))
        if norm < best_norm:
            best_norm = norm
            best = cand
    return best


def exact_cluster_pair_set(grid, box, r_list):
    """All (ci, cj), ci <= cj, whose real members come within r_list.

    Independent of the pair list module: enumerates every cluster pair and
    measures exact minimum-image distances between non-filler slots.
    Diagonal pairs are always included.
    """
    m = grid.m
    pos = grid.clustered_positions.reshape(grid.n_clusters, m, 3)
    real = (~grid.fill_mask).reshape(grid.n_clusters, m)
    limit_sq = r_list * r_list
    pairs = set()
    for ci in range(grid.n_clusters):
        pi = pos[ci][real[ci]]
        pairs.add((ci, ci))
        for cj in range(ci + 1, grid.n_clusters):
            pj = pos[cj][real[cj]]
            dr = cm.minimum_image(pi[:, None, :] - pj[None, :, :], box)
            r2_min = float(np.einsum("abd,abd->ab", dr, dr).min())
            if r2_min <= limit_sq:
                pairs.add((ci, cj))
    return pairs


def equilibrate(system, params, layout, dt, n_steps, t_target, rescale_every=25):
    """Velocity-rescaling warm-up; returns the equilibrated system."""
    policy = cm.ListPolicy()
    state = cm.init_state(system, params, layout, policy=policy)
    forces = cm.parallel_forces(state, params, layout)
    for _ in range(n_steps):
        forces = cm.velocity_verlet_step(
            state, params, dt, forces, layout, policy=policy
        )
        if state.step % rescale_every == 0:
            t_now = cm.temperature(state.system)
            if t_now > 0.0:
                lam = np.sqrt(t_target / t_now)
                state.system = replace(
                    state.system, velocities=state.system.velocities * lam
                )
    return state.system


def required_pair_set(system, r_cut):
    wrapped = cm.wrap_position(system.positions, system.box)
    return cm.brute_force_pairs(wrapped, system.box, r_cut)
