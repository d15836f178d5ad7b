"""Spatial gridding: pack particles into fixed-size clusters.

Particles are gridded on x/y columns and binned along z inside each column,
then packed into clusters of exactly `m` consecutive slots.  A short column
tail is padded with copies of its last real particle; padding slots are
flagged in `fill_mask` and excluded from all interactions by construction.
Cluster extents are kept as axis-aligned bounding boxes so list building can
use a cheap conservative distance criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ParameterError, ParticleSystem, SimBox, wrap_position

VALID_CLUSTER_SIZES = (1, 2, 4, 8)


@dataclass(frozen=True)
class ClusterGrid:
    """Clustered particle layout frozen at build time.

    perm maps clustered slot -> original particle index; padding slots repeat
    the index of the column's last real particle so gathered coordinates stay
    finite.  inverse_perm maps original index -> slot and is total (every real
    particle lands in exactly one non-filler slot).
    """

    m: int
    n_clusters: int
    perm: np.ndarray                 # (n_slots,) slot -> original index
    inverse_perm: np.ndarray         # (n,) original index -> slot
    fill_mask: np.ndarray            # (n_slots,) True where the slot is padding
    cell_counts: tuple[int, int]     # (cells_x, cells_y)
    cell_of_cluster: np.ndarray      # (n_clusters,) flat x/y cell per cluster
    clustered_positions: np.ndarray  # (n_slots, 3) wrapped build-time snapshot
    bboxes: np.ndarray               # (n_clusters, 2, 3) lower/upper corners

    def __post_init__(self):
        for name in (
            "perm",
            "inverse_perm",
            "fill_mask",
            "cell_of_cluster",
            "clustered_positions",
            "bboxes",
        ):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_slots(self) -> int:
        return self.n_clusters * self.m

    @property
    def n(self) -> int:
        return self.inverse_perm.shape[0]

    def cluster_centers(self) -> np.ndarray:
        """Bounding-box midpoints, (n_clusters, 3)."""
        return 0.5 * (self.bboxes[:, 0] + self.bboxes[:, 1])


def build_cluster_grid(
    system: ParticleSystem, m: int, target_occupancy: float | None = None
) -> ClusterGrid:
    """Grid particles in x/y, order each column by z, pack into m-clusters.

    The x/y cell count per side is round(sqrt(n / target_occupancy)) clamped
    to at least 1, with target_occupancy defaulting to 2*m particles per cell.
    Within a column particles are packed in ascending z (ties broken by
    original index); only the last cluster of a column can contain padding.
    Clusters never span two x/y cells.
    """
    if m not in VALID_CLUSTER_SIZES:
        raise ParameterError(f"cluster size m must be one of {VALID_CLUSTER_SIZES}, got {m}")
    if target_occupancy is None:
        target_occupancy = 2.0 * m
    if target_occupancy <= 0:
        raise ParameterError(f"target occupancy must be positive, got {target_occupancy}")

    n = system.n
    box = system.box
    pos = wrap_position(system.positions, box)

    cells = max(1, int(round(math.sqrt(n / target_occupancy))))
    ix = np.minimum((pos[:, 0] / box.lengths[0] * cells).astype(np.int64), cells - 1)
    iy = np.minimum((pos[:, 1] / box.lengths[1] * cells).astype(np.int64), cells - 1)
    cell_id = ix * cells + iy

    # Stable order: by column, then z, then original index.
    order = np.lexsort((np.arange(n), pos[:, 2], cell_id))
    sorted_cells = cell_id[order]
    bounds = np.searchsorted(sorted_cells, np.arange(cells * cells + 1))

    perm_parts: list[np.ndarray] = []
    fill_parts: list[np.ndarray] = []
    cluster_cells: list[int] = []
    for c in range(cells * cells):
        a, b = bounds[c], bounds[c + 1]
        k = b - a
        if k == 0:
            continue
        idx = order[a:b]
        pad = (-k) % m
        flags = np.zeros(k + pad, dtype=bool)
        if pad:
            idx = np.concatenate([idx, np.repeat(idx[-1], pad)])
            flags[k:] = True
        perm_parts.append(idx)
        fill_parts.append(flags)
        cluster_cells.extend([c] * ((k + pad) // m))

    if perm_parts:
        perm = np.concatenate(perm_parts)
        fill_mask = np.concatenate(fill_parts)
    else:
        perm = np.empty(0, dtype=np.int64)
        fill_mask = np.empty(0, dtype=bool)
    n_clusters = perm.shape[0] // m

    inverse_perm = np.empty(n, dtype=np.int64)
    slots = np.arange(perm.shape[0])
    real = ~fill_mask
    inverse_perm[perm[real]] = slots[real]

    clustered_positions = pos[perm] if n else np.empty((0, 3), dtype=np.float64)
    grouped = clustered_positions.reshape(n_clusters, m, 3)
    bboxes = np.stack([grouped.min(axis=1), grouped.max(axis=1)], axis=1) if n_clusters else np.empty((0, 2, 3))

    return ClusterGrid(
        m=m,
        n_clusters=n_clusters,
        perm=perm,
        inverse_perm=inverse_perm,
        fill_mask=fill_mask,
        cell_counts=(cells, cells),
        cell_of_cluster=np.asarray(cluster_cells, dtype=np.int64),
        clustered_positions=clustered_positions,
        bboxes=bboxes,
    )


def scatter_to_original(grid: ClusterGrid, clustered_values: np.ndarray) -> np.ndarray:
    """Scatter a per-slot array back to original particle order.

    Padding slots are dropped; the leading axis goes from n_slots to n.
    """
    values = np.asarray(clustered_values)
    if values.shape[0] != grid.n_slots:
        raise ParameterError(
            f"expected leading axis {grid.n_slots}, got {values.shape[0]}"
        )
    out = np.zeros((grid.n,) + values.shape[1:], dtype=values.dtype)
    real = ~grid.fill_mask
    out[grid.perm[real]] = values[real]
    return out


def bbox_gap_sq(lo_i, hi_i, lo_j, hi_j, lengths) -> np.ndarray:
    """Squared minimum distance between periodic axis-aligned boxes.

    Per dimension the gap is minimized over image shifts {-L, 0, +L}; this is
    exact for orthorhombic boxes no larger than the cell, and conservative
    (never an overestimate) for the true minimum over all images.
    lo_j/hi_j may carry a leading batch axis.
    """
    lo_j = np.asarray(lo_j, dtype=np.float64)
    hi_j = np.asarray(hi_j, dtype=np.float64)
    gap_sq = np.zeros(lo_j.shape[:-1], dtype=np.float64)
    for d in range(3):
        span = lengths[d]
        a = lo_j[..., d] - hi_i[d]
        b = lo_i[d] - hi_j[..., d]
        g0 = np.maximum(0.0, np.maximum(a, b))
        gm = np.maximum(0.0, np.maximum(a - span, b + span))
        gp = np.maximum(0.0, np.maximum(a + span, b - span))
        g = np.minimum(g0, np.minimum(gm, gp))
        gap_sq = gap_sq + g * g
    return gap_sq


def cluster_min_distance(grid: ClusterGrid, i: int, j: int, box: SimBox) -> float:
    """Conservative minimum distance between two clusters' bounding boxes."""
    if not (0 <= i < grid.n_clusters and 0 <= j < grid.n_clusters):
        raise ParameterError(
            f"cluster indices ({i}, {j}) out of range [0, {grid.n_clusters})"
        )
    lo_i, hi_i = grid.bboxes[i]
    lo_j, hi_j = grid.bboxes[j]
    return float(np.sqrt(bbox_gap_sq(lo_i, hi_i, lo_j, hi_j, box.lengths)))
