"""Brute-force references and the displacement guard for list reuse.

These are the ground truth the clustered path is validated against.  Every
operation here loops over all particle pairs directly; no grid, list, or
blocking code is shared with the fast path.  The potential itself is shared
deliberately (kernels.lj_coulomb_terms) so the comparison isolates traversal
correctness from the functional form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import lj_coulomb_terms
from .model import (
    ForcesEnergies,
    NonbondedParams,
    ParameterError,
    ParticleSystem,
    SimBox,
    SingularityError,
    minimum_image,
)


def brute_force_nonbonded(
    system: ParticleSystem, params: NonbondedParams
) -> ForcesEnergies:
    """All-pairs forces and energies within r_cut, original particle order.

    O(n^2); intended for validation of modest systems, not production use.
    """
    n = system.n
    pos = system.positions
    forces = np.zeros((n, 3), dtype=np.float64)
    e_lj_total = 0.0
    e_c_total = 0.0
    r_cut_sq = params.r_cut * params.r_cut
    box = system.box
    for i in range(n - 1):
        dr = minimum_image(pos[i] - pos[i + 1:], box)
        r2 = np.einsum("kd,kd->k", dr, dr)
        within = r2 <= r_cut_sq
        if np.any(within & (r2 == 0.0)):
            j = i + 1 + int(np.nonzero(within & (r2 == 0.0))[0][0])
            raise SingularityError(
                f"particles {i} and {j} overlap exactly", i=i, j=j
            )
        idx = np.nonzero(within)[0]
        if idx.shape[0] == 0:
            continue
        e_lj, e_c, f_over_r = lj_coulomb_terms(
            r2[idx],
            system.lj_type[i],
            system.lj_type[i + 1 + idx],
            system.charges[i],
            system.charges[i + 1 + idx],
            params,
        )
        e_lj_total += float(np.sum(e_lj))
        e_c_total += float(np.sum(e_c))
        fv = f_over_r[:, None] * dr[idx]
        forces[i] += fv.sum(axis=0)
        forces[i + 1 + idx] -= fv
    return ForcesEnergies(forces=forces, e_lj=e_lj_total, e_coulomb=e_c_total)


def brute_force_pairs(
    positions: np.ndarray, box: SimBox, r: float
) -> set[tuple[int, int]]:
    """All index pairs (i, j), i < j, within distance r (closed ball)."""
    if r < 0.0:
        raise ParameterError(f"radius must be non-negative, got {r}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    r_sq = r * r
    pairs: set[tuple[int, int]] = set()
    for i in range(n - 1):
        dr = minimum_image(pos[i] - pos[i + 1:], box)
        r2 = np.einsum("kd,kd->k", dr, dr)
        for j in np.nonzero(r2 <= r_sq)[0]:
            pairs.add((i, i + 1 + int(j)))
    return pairs


@dataclass(frozen=True)
class DriftTracker:
    """Largest minimum-image displacement since the reference snapshot.

    The tracked maximum never decreases between resets; a pair list built at
    the reference positions stays complete while
    2 * max_displacement <= r_list - r_cut.
    """

    reference_positions: np.ndarray  # (n, 3)
    max_displacement: float = 0.0

    def __post_init__(self):
        ref = np.ascontiguousarray(self.reference_positions, dtype=np.float64)
        ref.setflags(write=False)
        object.__setattr__(self, "reference_positions", ref)


def update_drift(
    tracker: DriftTracker, current_positions: np.ndarray, box: SimBox
) -> DriftTracker:
    """Fold the current positions into the tracked maximum displacement."""
    cur = np.asarray(current_positions, dtype=np.float64).reshape(-1, 3)
    if cur.shape != tracker.reference_positions.shape:
        raise ParameterError(
            f"positions shape {cur.shape} does not match reference "
            f"{tracker.reference_positions.shape}"
        )
    if cur.shape[0] == 0:
        return tracker
    disp = minimum_image(cur - tracker.reference_positions, box)
    largest = float(np.sqrt(np.einsum("kd,kd->k", disp, disp).max()))
    return DriftTracker(
        reference_positions=tracker.reference_positions,
        max_displacement=max(tracker.max_displacement, largest),
    )
