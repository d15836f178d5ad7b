"""Cluster-pair neighbor list: build, prune, reuse bookkeeping, diagnostics.

A list entry pairs an i-cluster with a j-cluster (j >= i) whenever the
conservative bounding-box distance is within r_list; a per-pair m x m bit
mask then admits individual slot pairs (excluding padding, and keeping only
the upper triangle on the diagonal so each particle pair appears exactly
once).  Built lists are immutable snapshots: they record the positions they
were built against and stay valid while no particle has drifted more than
half the buffer r_list - r_cut.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .gridder import ClusterGrid, bbox_gap_sq
from .model import ParameterError, SimBox, minimum_image

VALID_SUPERCLUSTER_SIZES = (1, 8)

_CHUNK = 4096  # pairs per vectorized distance batch; bounds peak memory


@dataclass(frozen=True)
class ClusterPairList:
    """CSR-like cluster pair structure plus optional super-cluster grouping.

    For i-cluster ci the admitted j-clusters are
    j_idx[offsets[ci]:offsets[ci+1]], ascending, with ci itself first.
    masks[p, a, b] is True when slot a of the i-cluster and slot b of the
    j-cluster of pair p must be evaluated.

    When supercluster_size == 8, consecutive i-clusters are grouped and their
    j-lists merged: group g owns the ascending union super_j_idx[
    super_offsets[g]:super_offsets[g+1]]; super_pair_idx[e, k] holds the row
    of the canonical pair (member k, j-cluster of entry e), or -1 when that
    member does not interact with it.
    """

    m: int
    n_lane: int
    offsets: np.ndarray          # (n_i_clusters + 1,) int64
    j_idx: np.ndarray            # (n_pairs,) int64
    masks: np.ndarray            # (n_pairs, m, m) bool
    r_list: float
    build_positions: np.ndarray  # (n_slots, 3) clustered snapshot at build
    build_step: int
    supercluster_size: int = 1
    super_offsets: np.ndarray | None = None
    super_j_idx: np.ndarray | None = None
    super_pair_idx: np.ndarray | None = None

    def __post_init__(self):
        for name in ("offsets", "j_idx", "masks", "build_positions",
                     "super_offsets", "super_j_idx", "super_pair_idx"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_i_clusters(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def n_pairs(self) -> int:
        return self.j_idx.shape[0]

    @property
    def n_super_groups(self) -> int:
        if self.super_offsets is None:
            return 0
        return self.super_offsets.shape[0] - 1

    def entries(self, ci: int) -> np.ndarray:
        """j-cluster indices paired with i-cluster ci, ascending."""
        return self.j_idx[self.offsets[ci]:self.offsets[ci + 1]]

    def pair_i_clusters(self) -> np.ndarray:
        """i-cluster index of every pair row, (n_pairs,)."""
        return np.repeat(
            np.arange(self.n_i_clusters, dtype=np.int64), np.diff(self.offsets)
        )

    def super_flags(self) -> np.ndarray | None:
        """Per-member interaction flags for each super entry, or None."""
        if self.super_pair_idx is None:
            return None
        return self.super_pair_idx >= 0


@dataclass(frozen=True)
class InteractionStats:
    """Admitted versus strictly-needed slot pair counts for one list."""

    n_admitted: int
    n_within_cutoff: int
    ratio: float


def _build_masks(ci_arr, cj_arr, fill_mask, m) -> np.ndarray:
    real = ~fill_mask.reshape(-1, m)
    masks = real[ci_arr][:, :, None] & real[cj_arr][:, None, :]
    diag = ci_arr == cj_arr
    if np.any(diag):
        masks[diag] &= np.triu(np.ones((m, m), dtype=bool), k=1)
    return masks


def _build_super_layout(offsets, j_idx, n_clusters, size):
    n_groups = -(-n_clusters // size)
    super_offsets = np.zeros(n_groups + 1, dtype=np.int64)
    j_parts: list[np.ndarray] = []
    row_parts: list[np.ndarray] = []
    for g in range(n_groups):
        first = g * size
        members = range(first, min(first + size, n_clusters))
        merged: dict[int, np.ndarray] = {}
        for k, ci in enumerate(members):
            lo, hi = offsets[ci], offsets[ci + 1]
            for p in range(lo, hi):
                cj = int(j_idx[p])
                rows = merged.get(cj)
                if rows is None:
                    rows = np.full(size, -1, dtype=np.int64)
                    merged[cj] = rows
                rows[k] = p
        union = sorted(merged)
        super_offsets[g + 1] = super_offsets[g] + len(union)
        if union:
            j_parts.append(np.asarray(union, dtype=np.int64))
            row_parts.append(np.stack([merged[cj] for cj in union]))
    if j_parts:
        super_j_idx = np.concatenate(j_parts)
        super_pair_idx = np.concatenate(row_parts, axis=0)
    else:
        super_j_idx = np.empty(0, dtype=np.int64)
        super_pair_idx = np.empty((0, size), dtype=np.int64)
    return super_offsets, super_j_idx, super_pair_idx


def build_pair_list(
    grid: ClusterGrid,
    box: SimBox,
    r_list: float,
    *,
    supercluster_size: int = 1,
    n_lane: int = 1,
    build_step: int = 0,
) -> ClusterPairList:
    """List every cluster pair whose bounding boxes come within r_list.

    The criterion is the conservative periodic box-box distance, so the list
    is a superset of the exact-distance list at the same radius.  Each
    unordered cluster pair appears once with i <= j; the diagonal pair (ci,
    ci) is always present.  n_lane is carried as layout metadata for
    consumers; it does not change the admitted set.
    """
    if r_list <= 0.0:
        raise ParameterError(f"r_list must be positive, got {r_list}")
    if np.any(box.lengths < 2.0 * r_list):
        raise ParameterError(
            f"every box edge must be >= 2*r_list={2.0 * r_list} "
            f"for the single-image convention, got {box.lengths}"
        )
    if supercluster_size not in VALID_SUPERCLUSTER_SIZES:
        raise ParameterError(
            f"supercluster_size must be one of {VALID_SUPERCLUSTER_SIZES}, "
            f"got {supercluster_size}"
        )

    n_clusters = grid.n_clusters
    m = grid.m
    r_list_sq = r_list * r_list
    lows = grid.bboxes[:, 0] if n_clusters else np.empty((0, 3))
    highs = grid.bboxes[:, 1] if n_clusters else np.empty((0, 3))

    counts = np.zeros(n_clusters, dtype=np.int64)
    entry_parts: list[np.ndarray] = []
    for ci in range(n_clusters):
        gap_sq = bbox_gap_sq(lows[ci], highs[ci], lows[ci:], highs[ci:], box.lengths)
        js = np.nonzero(gap_sq <= r_list_sq)[0].astype(np.int64) + ci
        counts[ci] = js.shape[0]
        entry_parts.append(js)

    offsets = np.zeros(n_clusters + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    j_idx = (
        np.concatenate(entry_parts) if entry_parts else np.empty(0, dtype=np.int64)
    )
    ci_arr = np.repeat(np.arange(n_clusters, dtype=np.int64), counts)
    masks = (
        _build_masks(ci_arr, j_idx, grid.fill_mask, m)
        if j_idx.size
        else np.empty((0, m, m), dtype=bool)
    )

    plist = ClusterPairList(
        m=m,
        n_lane=n_lane,
        offsets=offsets,
        j_idx=j_idx,
        masks=masks,
        r_list=float(r_list),
        build_positions=grid.clustered_positions,
        build_step=build_step,
        supercluster_size=supercluster_size,
    )
    if supercluster_size > 1:
        so, sj, sp = _build_super_layout(offsets, j_idx, n_clusters, supercluster_size)
        plist = replace(plist, super_offsets=so, super_j_idx=sj, super_pair_idx=sp)
    return plist


def _pair_min_dist_sq(
    plist: ClusterPairList, positions: np.ndarray, box: SimBox
) -> np.ndarray:
    """Exact minimum squared distance over admitted slot pairs, per pair row.

    Rows with no admitted slot pair report +inf.
    """
    m = plist.m
    pos = positions.reshape(-1, m, 3)
    ci_arr = plist.pair_i_clusters()
    out = np.empty(plist.n_pairs, dtype=np.float64)
    for start in range(0, plist.n_pairs, _CHUNK):
        stop = min(start + _CHUNK, plist.n_pairs)
        pi = pos[ci_arr[start:stop]]
        pj = pos[plist.j_idx[start:stop]]
        dr = minimum_image(pi[:, :, None, :] - pj[:, None, :, :], box)
        dist_sq = np.einsum("pabd,pabd->pab", dr, dr)
        dist_sq[~plist.masks[start:stop]] = np.inf
        out[start:stop] = dist_sq.min(axis=(1, 2))
    return out


def prune_pair_list(
    plist: ClusterPairList, positions: np.ndarray, box: SimBox
) -> ClusterPairList:
    """Drop pairs whose exact minimum admitted-slot distance exceeds r_list.

    positions must be the clustered (n_slots, 3) coordinates the list indexes
    into.  Masks of surviving pairs are unchanged; diagonal pairs always
    survive (their minimum distance is bounded by the intra-cluster spread).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape != plist.build_positions.shape:
        raise ParameterError(
            f"positions shape {positions.shape} does not match the list's "
            f"slot layout {plist.build_positions.shape}"
        )
    if plist.n_pairs == 0:
        return plist
    min_dist_sq = _pair_min_dist_sq(plist, positions, box)
    ci_arr = plist.pair_i_clusters()
    keep = (min_dist_sq <= plist.r_list * plist.r_list) | (ci_arr == plist.j_idx)

    new_counts = np.bincount(
        ci_arr[keep], minlength=plist.n_i_clusters
    ).astype(np.int64)
    offsets = np.zeros(plist.n_i_clusters + 1, dtype=np.int64)
    np.cumsum(new_counts, out=offsets[1:])
    pruned = replace(
        plist,
        offsets=offsets,
        j_idx=plist.j_idx[keep],
        masks=plist.masks[keep],
        super_offsets=None,
        super_j_idx=None,
        super_pair_idx=None,
    )
    if plist.supercluster_size > 1:
        so, sj, sp = _build_super_layout(
            pruned.offsets, pruned.j_idx, plist.n_i_clusters, plist.supercluster_size
        )
        pruned = replace(pruned, super_offsets=so, super_j_idx=sj, super_pair_idx=sp)
    return pruned


def admitted_pairs(plist: ClusterPairList, grid: ClusterGrid) -> set[tuple[int, int]]:
    """The set of admitted original-index pairs (i, j) with i < j.

    Each unordered pair appears at most once: a particle lives in exactly one
    cluster and each cluster pair is listed once.
    """
    if plist.n_pairs == 0:
        return set()
    m = plist.m
    ci_arr = plist.pair_i_clusters()
    p, a, b = np.nonzero(plist.masks)
    oi = grid.perm[ci_arr[p] * m + a]
    oj = grid.perm[plist.j_idx[p] * m + b]
    lo = np.minimum(oi, oj)
    hi = np.maximum(oi, oj)
    return set(zip(lo.tolist(), hi.tolist()))


def _count_within(
    plist: ClusterPairList, positions: np.ndarray, box: SimBox, r_cut: float
) -> int:
    m = plist.m
    pos = positions.reshape(-1, m, 3)
    ci_arr = plist.pair_i_clusters()
    r_cut_sq = r_cut * r_cut
    total = 0
    for start in range(0, plist.n_pairs, _CHUNK):
        stop = min(start + _CHUNK, plist.n_pairs)
        pi = pos[ci_arr[start:stop]]
        pj = pos[plist.j_idx[start:stop]]
        dr = minimum_image(pi[:, :, None, :] - pj[:, None, :, :], box)
        dist_sq = np.einsum("pabd,pabd->pab", dr, dr)
        total += int(
            np.count_nonzero((dist_sq <= r_cut_sq) & plist.masks[start:stop])
        )
    return total


def interaction_stats(
    plist: ClusterPairList,
    grid: ClusterGrid,
    positions: np.ndarray,
    box: SimBox,
    r_cut: float,
) -> InteractionStats:
    """Compare admitted slot pairs against those actually within r_cut.

    The ratio (admitted / within-cutoff) measures how many extra pair
    evaluations the cluster blocking admits relative to a perfect list.
    positions are clustered (n_slots, 3) coordinates.
    """
    if r_cut > plist.r_list:
        raise ParameterError(
            f"r_cut={r_cut} must not exceed the list radius r_list={plist.r_list}"
        )
    positions = np.asarray(positions, dtype=np.float64)
    n_admitted = int(np.count_nonzero(plist.masks))
    n_within = _count_within(plist, positions, box, r_cut) if plist.n_pairs else 0
    ratio = float(n_admitted) / float(n_within) if n_within else float("inf")
    if n_admitted == 0:
        ratio = 1.0 if n_within == 0 else 0.0
    return InteractionStats(n_admitted=n_admitted, n_within_cutoff=n_within, ratio=ratio)


def write_pairs_csv(plist: ClusterPairList, grid: ClusterGrid, box: SimBox, path) -> None:
    """Dump per-pair diagnostics: conservative vs exact distance at build time."""
    ci_arr = plist.pair_i_clusters()
    gap_sq = np.empty(plist.n_pairs, dtype=np.float64)
    for p in range(plist.n_pairs):
        lo_i, hi_i = grid.bboxes[ci_arr[p]]
        lo_j, hi_j = grid.bboxes[plist.j_idx[p]]
        gap_sq[p] = bbox_gap_sq(lo_i, hi_i, lo_j, hi_j, box.lengths)
    min_dist_sq = (
        _pair_min_dist_sq(plist, plist.build_positions, box)
        if plist.n_pairs
        else np.empty(0)
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["i_cluster", "j_cluster", "bbox_distance_nm", "exact_min_distance_nm"]
        )
        for p in range(plist.n_pairs):
            exact = float(np.sqrt(min_dist_sq[p])) if np.isfinite(min_dist_sq[p]) else float("nan")
            writer.writerow(
                [
                    int(ci_arr[p]),
                    int(plist.j_idx[p]),
                    repr(float(np.sqrt(gap_sq[p]))),
                    repr(exact),
                ]
            )
