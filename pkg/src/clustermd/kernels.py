"""Nonbonded force kernels over cluster pair lists.

The inner loop evaluates interactions in m x n_lane blocks: for every
i-cluster the admitted j-clusters are taken j_unroll at a time, their m slots
concatenated into one particle stream, and the stream swept n_lane slots per
block against all m i-slots.  Off-stream lanes in the final block and
mask-rejected slot pairs are skipped before any arithmetic, so padding slots
(which duplicate real coordinates) can never produce a zero distance.

pair_interaction is the single scalar definition of the potential; the
compiled kernels repeat its expressions verbatim so both paths round
identically, and the brute-force oracle imports it directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .gridder import ClusterGrid, scatter_to_original
from .model import (
    ForcesEnergies,
    NonbondedParams,
    ParameterError,
    SimBox,
    SingularityError,
)
from .pairlist import ClusterPairList, interaction_stats

VALID_LANE_COUNTS = (1, 2, 4, 8)

# Flop cost model per evaluated slot pair, counted whether or not the pair
# survives masking or the cutoff: distance (3 subs, 3 shifts at 2 ops, 3 muls,
# 2 adds and the two comparisons folded in), LJ (sr2 chain, energy, force),
# Coulomb (sqrt, divides, energy, force).  The absolute numbers only matter
# up to the useful/total ratio staying a pure pair-count ratio.
FLOPS_DISTANCE = 17
FLOPS_LJ = 12
FLOPS_COULOMB = 11
FLOPS_PER_PAIR = FLOPS_DISTANCE + FLOPS_LJ + FLOPS_COULOMB


@dataclass(frozen=True)
class KernelLayout:
    """Block shape of the inner loop.

    m is the cluster size (particles per i-cluster), n_lane the number of
    j-slots swept per block.  j_unroll is how many j-clusters share one
    particle stream; 0 selects the natural max(1, n_lane // m) so one block
    spans whole clusters whenever n_lane >= m.
    """

    m: int
    n_lane: int
    j_unroll: int = 0

    def __post_init__(self):
        if self.m not in (1, 2, 4, 8):
            raise ParameterError(f"m must be one of (1, 2, 4, 8), got {self.m}")
        if self.n_lane not in VALID_LANE_COUNTS:
            raise ParameterError(
                f"n_lane must be one of {VALID_LANE_COUNTS}, got {self.n_lane}"
            )
        if self.j_unroll == 0:
            object.__setattr__(self, "j_unroll", max(1, self.n_lane // self.m))
        if self.j_unroll < 1:
            raise ParameterError(f"j_unroll must be >= 1, got {self.j_unroll}")


@dataclass(frozen=True)
class FlopCount:
    """Total block-evaluation flops versus flops spent on in-range pairs."""

    useful_flops: int
    total_flops: int

    @property
    def ratio(self) -> float:
        return self.useful_flops / self.total_flops if self.total_flops else 1.0


def lj_coulomb_terms(r2, type_i, type_j, q_i, q_j, params: NonbondedParams):
    """Split interaction terms for squared distance r2 (scalar or array).

    Returns (e_lj, e_coulomb, f_over_r) where f_over_r scales the
    displacement vector r_i - r_j to give the force on particle i.  When
    params.shift_potential is set each energy term is shifted by its value at
    r_cut; the force is unaffected.
    """
    r2 = np.asarray(r2, dtype=np.float64)
    if np.any(r2 == 0.0):
        raise SingularityError("zero distance between interacting particles")
    eps = params.lj_table[type_i, type_j, 0]
    sig = params.lj_table[type_i, type_j, 1]
    sr2 = (sig * sig) / r2
    sr6 = sr2 * sr2 * sr2
    e_lj = 4.0 * eps * (sr6 * sr6 - sr6)
    f_over_r = 48.0 * eps * (sr6 * sr6 - 0.5 * sr6) / r2
    r = np.sqrt(r2)
    qq = params.coulomb_scale * np.asarray(q_i, dtype=np.float64) * q_j
    e_coulomb = qq / r
    f_over_r = f_over_r + qq / (r2 * r)
    if params.shift_potential:
        rc2 = params.r_cut * params.r_cut
        src2 = (sig * sig) / rc2
        src6 = src2 * src2 * src2
        e_lj = e_lj - 4.0 * eps * (src6 * src6 - src6)
        e_coulomb = e_coulomb - qq / params.r_cut
    return e_lj, e_coulomb, f_over_r


def pair_interaction(r2, type_i, type_j, q_i, q_j, params: NonbondedParams):
    """Total pair energy and f_over_r for squared distance r2.

    The sole authority for the nonbonded functional form: LJ 12-6 plus cutoff
    Coulomb, both optionally shifted to vanish at r_cut.
    """
    e_lj, e_coulomb, f_over_r = lj_coulomb_terms(r2, type_i, type_j, q_i, q_j, params)
    return e_lj + e_coulomb, f_over_r


@njit(cache=True, nogil=True)
def _kernel_blocks(
    pos, q, typ, eps_t, sig_t, shift_lj_t, use_shift, coul, r_cut, lengths, rc2,
    offsets, j_idx, masks, m, n_lane, j_unroll, i_sel, f_out,
):
    e_lj_total = 0.0
    e_c_total = 0.0
    fi = np.zeros((m, 3), dtype=np.float64)
    for s in range(i_sel.shape[0]):
        ci = i_sel[s]
        base_i = ci * m
        for a in range(m):
            fi[a, 0] = 0.0
            fi[a, 1] = 0.0
            fi[a, 2] = 0.0
        e_lj = 0.0
        e_c = 0.0
        lo = offsets[ci]
        hi = offsets[ci + 1]
        g0 = lo
        while g0 < hi:
            g1 = min(g0 + j_unroll, hi)
            stream_len = (g1 - g0) * m
            s0 = 0
            while s0 < stream_len:
                for a in range(m):
                    slot_i = base_i + a
                    xi = pos[slot_i, 0]
                    yi = pos[slot_i, 1]
                    zi = pos[slot_i, 2]
                    qi = q[slot_i]
                    ti = typ[slot_i]
                    for lane in range(n_lane):
                        sp = s0 + lane
                        if sp >= stream_len:
                            continue
                        p = g0 + sp // m
                        b = sp - (sp // m) * m
                        if not masks[p, a, b]:
                            continue
                        slot_j = j_idx[p] * m + b
                        dx = xi - pos[slot_j, 0]
                        dy = yi - pos[slot_j, 1]
                        dz = zi - pos[slot_j, 2]
                        dx -= np.floor(dx / lengths[0] + 0.5) * lengths[0]
                        dy -= np.floor(dy / lengths[1] + 0.5) * lengths[1]
                        dz -= np.floor(dz / lengths[2] + 0.5) * lengths[2]
                        if dx >= 0.5 * lengths[0]:
                            dx -= lengths[0]
                        elif dx < -0.5 * lengths[0]:
                            dx += lengths[0]
                        if dy >= 0.5 * lengths[1]:
                            dy -= lengths[1]
                        elif dy < -0.5 * lengths[1]:
                            dy += lengths[1]
                        if dz >= 0.5 * lengths[2]:
                            dz -= lengths[2]
                        elif dz < -0.5 * lengths[2]:
                            dz += lengths[2]
                        r2 = dx * dx + dy * dy + dz * dz
                        if r2 > rc2:
                            continue
                        if r2 == 0.0:
                            return e_lj_total, e_c_total, slot_i, slot_j
                        tj = typ[slot_j]
                        eps = eps_t[ti, tj]
                        sig = sig_t[ti, tj]
                        sr2 = (sig * sig) / r2
                        sr6 = sr2 * sr2 * sr2
                        e_pair_lj = 4.0 * eps * (sr6 * sr6 - sr6)
                        f_over_r = 48.0 * eps * (sr6 * sr6 - 0.5 * sr6) / r2
                        r = np.sqrt(r2)
                        qq = coul * qi * q[slot_j]
                        e_pair_c = qq / r
                        f_over_r = f_over_r + qq / (r2 * r)
                        if use_shift:
                            e_pair_lj = e_pair_lj - shift_lj_t[ti, tj]
                            e_pair_c = e_pair_c - qq / r_cut
                        e_lj += e_pair_lj
                        e_c += e_pair_c
                        fx = f_over_r * dx
                        fy = f_over_r * dy
                        fz = f_over_r * dz
                        fi[a, 0] += fx
                        fi[a, 1] += fy
                        fi[a, 2] += fz
                        f_out[slot_j, 0] -= fx
                        f_out[slot_j, 1] -= fy
                        f_out[slot_j, 2] -= fz
                s0 += n_lane
            g0 = g1
        for a in range(m):
            f_out[base_i + a, 0] += fi[a, 0]
            f_out[base_i + a, 1] += fi[a, 1]
            f_out[base_i + a, 2] += fi[a, 2]
        e_lj_total += e_lj
        e_c_total += e_c
    return e_lj_total, e_c_total, -1, -1


@njit(cache=True, nogil=True)
def _kernel_super_blocks(
    pos, q, typ, eps_t, sig_t, shift_lj_t, use_shift, coul, r_cut, lengths, rc2,
    super_offsets, super_j_idx, super_pair_idx, masks,
    m, n_lane, ssize, g_sel, f_out,
):
    e_lj_total = 0.0
    e_c_total = 0.0
    for gs in range(g_sel.shape[0]):
        g = g_sel[gs]
        base_cluster = g * ssize
        e_lj = 0.0
        e_c = 0.0
        for e in range(super_offsets[g], super_offsets[g + 1]):
            cj = super_j_idx[e]
            base_j = cj * m
            for k in range(ssize):
                p = super_pair_idx[e, k]
                if p < 0:
                    continue
                base_i = (base_cluster + k) * m
                s0 = 0
                while s0 < m:
                    for a in range(m):
                        slot_i = base_i + a
                        xi = pos[slot_i, 0]
                        yi = pos[slot_i, 1]
                        zi = pos[slot_i, 2]
                        qi = q[slot_i]
                        ti = typ[slot_i]
                        for lane in range(n_lane):
                            b = s0 + lane
                            if b >= m:
                                continue
                            if not masks[p, a, b]:
                                continue
                            slot_j = base_j + b
                            dx = xi - pos[slot_j, 0]
                            dy = yi - pos[slot_j, 1]
                            dz = zi - pos[slot_j, 2]
                            dx -= np.floor(dx / lengths[0] + 0.5) * lengths[0]
                            dy -= np.floor(dy / lengths[1] + 0.5) * lengths[1]
                            dz -= np.floor(dz / lengths[2] + 0.5) * lengths[2]
                            if dx >= 0.5 * lengths[0]:
                                dx -= lengths[0]
                            elif dx < -0.5 * lengths[0]:
                                dx += lengths[0]
                            if dy >= 0.5 * lengths[1]:
                                dy -= lengths[1]
                            elif dy < -0.5 * lengths[1]:
                                dy += lengths[1]
                            if dz >= 0.5 * lengths[2]:
                                dz -= lengths[2]
                            elif dz < -0.5 * lengths[2]:
                                dz += lengths[2]
                            r2 = dx * dx + dy * dy + dz * dz
                            if r2 > rc2:
                                continue
                            if r2 == 0.0:
                                return e_lj_total, e_c_total, slot_i, slot_j
                            tj = typ[slot_j]
                            eps = eps_t[ti, tj]
                            sig = sig_t[ti, tj]
                            sr2 = (sig * sig) / r2
                            sr6 = sr2 * sr2 * sr2
                            e_pair_lj = 4.0 * eps * (sr6 * sr6 - sr6)
                            f_over_r = 48.0 * eps * (sr6 * sr6 - 0.5 * sr6) / r2
                            r = np.sqrt(r2)
                            qq = coul * qi * q[slot_j]
                            e_pair_c = qq / r
                            f_over_r = f_over_r + qq / (r2 * r)
                            if use_shift:
                                e_pair_lj = e_pair_lj - shift_lj_t[ti, tj]
                                e_pair_c = e_pair_c - qq / r_cut
                            e_lj += e_pair_lj
                            e_c += e_pair_c
                            fx = f_over_r * dx
                            fy = f_over_r * dy
                            fz = f_over_r * dz
                            f_out[slot_i, 0] += fx
                            f_out[slot_i, 1] += fy
                            f_out[slot_i, 2] += fz
                            f_out[slot_j, 0] -= fx
                            f_out[slot_j, 1] -= fy
                            f_out[slot_j, 2] -= fz
                    s0 += n_lane
        e_lj_total += e_lj
        e_c_total += e_c
    return e_lj_total, e_c_total, -1, -1


def _type_tables(params: NonbondedParams):
    eps_t = np.ascontiguousarray(params.lj_table[:, :, 0])
    sig_t = np.ascontiguousarray(params.lj_table[:, :, 1])
    if params.shift_potential:
        rc2 = params.r_cut * params.r_cut
        src2 = (sig_t * sig_t) / rc2
        src6 = src2 * src2 * src2
        shift_lj_t = 4.0 * eps_t * (src6 * src6 - src6)
    else:
        shift_lj_t = np.zeros_like(eps_t)
    return eps_t, sig_t, np.ascontiguousarray(shift_lj_t)


def compute_nonbonded_into(
    plist: ClusterPairList,
    grid: ClusterGrid,
    positions: np.ndarray,
    charges: np.ndarray,
    lj_types: np.ndarray,
    params: NonbondedParams,
    box: SimBox,
    layout: KernelLayout,
    f_out: np.ndarray,
    i_sel: np.ndarray | None = None,
) -> tuple[float, float]:
    """Accumulate clustered forces for a subset of i-clusters (or groups).

    positions/charges/lj_types are in original particle order; the clustered
    view is gathered through grid.perm.  With superclusters enabled i_sel
    indexes groups, otherwise i-clusters; None means all.  f_out has shape
    (n_slots, 3) and is added to, supporting per-worker accumulation buffers.
    Returns (e_lj, e_coulomb) for the subset.
    """
    if layout.m != grid.m or plist.m != grid.m:
        raise ParameterError(
            f"layout m={layout.m}, grid m={grid.m}, list m={plist.m} must agree"
        )
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != (grid.n, 3):
        raise ParameterError(
            f"positions must have shape ({grid.n}, 3), got {positions.shape}"
        )
    if f_out.shape != (grid.n_slots, 3):
        raise ParameterError(
            f"f_out must have shape ({grid.n_slots}, 3), got {f_out.shape}"
        )

    pos_c = np.ascontiguousarray(positions[grid.perm])
    q_c = np.ascontiguousarray(np.asarray(charges, dtype=np.float64)[grid.perm])
    t_c = np.ascontiguousarray(np.asarray(lj_types, dtype=np.int64)[grid.perm])
    eps_t, sig_t, shift_lj_t = _type_tables(params)
    rc2 = params.r_cut * params.r_cut
    lengths = box.lengths

    if plist.supercluster_size == 1:
        if i_sel is None:
            i_sel = np.arange(plist.n_i_clusters, dtype=np.int64)
        e_lj, e_c, bad_i, bad_j = _kernel_blocks(
            pos_c, q_c, t_c, eps_t, sig_t, shift_lj_t,
            params.shift_potential, params.coulomb_scale, params.r_cut,
            lengths, rc2, plist.offsets, plist.j_idx, plist.masks,
            layout.m, layout.n_lane, layout.j_unroll,
            np.ascontiguousarray(i_sel, dtype=np.int64), f_out,
        )
    else:
        if i_sel is None:
            i_sel = np.arange(plist.n_super_groups, dtype=np.int64)
        e_lj, e_c, bad_i, bad_j = _kernel_super_blocks(
            pos_c, q_c, t_c, eps_t, sig_t, shift_lj_t,
            params.shift_potential, params.coulomb_scale, params.r_cut,
            lengths, rc2, plist.super_offsets, plist.super_j_idx,
            plist.super_pair_idx, plist.masks,
            layout.m, layout.n_lane, plist.supercluster_size,
            np.ascontiguousarray(i_sel, dtype=np.int64), f_out,
        )
    if bad_i >= 0:
        oi = int(grid.perm[bad_i])
        oj = int(grid.perm[bad_j])
        raise SingularityError(
            f"particles {oi} and {oj} overlap exactly", i=oi, j=oj
        )
    return float(e_lj), float(e_c)


def compute_nonbonded(
    plist: ClusterPairList,
    grid: ClusterGrid,
    positions: np.ndarray,
    charges: np.ndarray,
    lj_types: np.ndarray,
    params: NonbondedParams,
    box: SimBox,
    layout: KernelLayout,
) -> ForcesEnergies:
    """Forces and energies over the full list; forces in clustered slot order.

    Use gridder.scatter_to_original to return to particle order.  Pairs
    admitted by the list but outside r_cut at the current positions
    contribute exactly zero.
    """
    f_out = np.zeros((grid.n_slots, 3), dtype=np.float64)
    e_lj, e_c = compute_nonbonded_into(
        plist, grid, positions, charges, lj_types, params, box, layout, f_out
    )
    return ForcesEnergies(forces=f_out, e_lj=e_lj, e_coulomb=e_c)


def compute_nonbonded_original(
    plist: ClusterPairList,
    grid: ClusterGrid,
    positions: np.ndarray,
    charges: np.ndarray,
    lj_types: np.ndarray,
    params: NonbondedParams,
    box: SimBox,
    layout: KernelLayout,
) -> ForcesEnergies:
    """compute_nonbonded with forces scattered back to original order."""
    result = compute_nonbonded(
        plist, grid, positions, charges, lj_types, params, box, layout
    )
    return ForcesEnergies(
        forces=scatter_to_original(grid, result.forces),
        e_lj=result.e_lj,
        e_coulomb=result.e_coulomb,
    )


def flop_count(
    plist: ClusterPairList,
    grid: ClusterGrid,
    layout: KernelLayout,
    box: SimBox,
    r_cut: float,
) -> FlopCount:
    """Cost-model flops for one traversal of the list at its build positions.

    total charges every slot of every m x n_lane block the canonical (non
    super) traversal would issue, padding lanes included; useful charges only
    slot pairs admitted by the masks and within r_cut at the list's build
    positions.  box and r_cut are needed because the list itself only records
    r_list.
    """
    if layout.m != plist.m:
        raise ParameterError(f"layout m={layout.m} does not match list m={plist.m}")
    counts = np.diff(plist.offsets)
    ju = layout.j_unroll
    m = layout.m
    nl = layout.n_lane
    full_groups = counts // ju
    rem = counts % ju
    blocks = full_groups * ((ju * m + nl - 1) // nl)
    blocks = blocks + np.where(rem > 0, (rem * m + nl - 1) // nl, 0)
    total_slots = int(blocks.sum()) * nl * m
    stats = interaction_stats(plist, grid, plist.build_positions, box, r_cut)
    return FlopCount(
        useful_flops=stats.n_within_cutoff * FLOPS_PER_PAIR,
        total_flops=total_slots * FLOPS_PER_PAIR,
    )
