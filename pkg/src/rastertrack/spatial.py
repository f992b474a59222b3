"""Spatial reasoning on the raster map.

Covers co-visibility clustering of same-frame detections, the local 3x3
walkability probability raster, and the camera-level Markov transfer chain
used to predict where a vanished target reappears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRasterError, ModelError, OffMapError
from .rastermap import FramePosResult, RasterMap


@dataclass
class Cluster:
    """Same-frame detections of (probably) one physical target."""

    members: list[int]  # indices into the FramePosResult list
    anchor_cell: tuple[int, int]


@dataclass
class ClusterSet:
    clusters: list[Cluster] = field(default_factory=list)

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def cluster_covisible(fprs: list[FramePosResult], rmap: RasterMap,
                      radius_cells: float = 1.5) -> ClusterSet:
    """Group same-frame detections that co-observe one ground target.

    Two detections join when their cameras differ, both cameras see both
    cells, and their ground distance is within radius_cells * cell_size.
    A group never holds two detections from one camera; a union that would
    violate that is skipped (pairs are visited in index order, so the
    result is deterministic). Singletons are kept.
    """
    n = len(fprs)
    uf = _UnionFind(n)
    limit = radius_cells * rmap.cell_size

    def group_cams(root: int) -> set[int]:
        return {fprs[k].camera_id for k in range(n) if uf.find(k) == root}

    for a in range(n):
        for b in range(a + 1, n):
            fa, fb = fprs[a], fprs[b]
            if fa.camera_id == fb.camera_id:
                continue
            pair = {fa.camera_id, fb.camera_id}
            if not (pair <= fa.covisible and pair <= fb.covisible):
                continue
            dist = math.hypot(fa.ground[0] - fb.ground[0],
                              fa.ground[1] - fb.ground[1])
            if dist > limit:
                continue
            ra, rb = uf.find(a), uf.find(b)
            if ra == rb:
                continue
            if group_cams(ra) & group_cams(rb):
                continue  # would put two same-camera detections together
            uf.union(a, b)

    groups: dict[int, list[int]] = {}
    for k in range(n):
        groups.setdefault(uf.find(k), []).append(k)
    clusters = []
    for root in sorted(groups, key=lambda r: min(groups[r])):
        members = sorted(groups[root])
        clusters.append(Cluster(members=members,
                                anchor_cell=fprs[members[0]].cell))
    return ClusterSet(clusters)


@dataclass(frozen=True)
class ProbRaster:
    """3x3 walkability-masked Gaussian around a center cell, sum == 1."""

    center: tuple[int, int]
    values: np.ndarray  # (3, 3); values[di+1, dj+1] is cell (i+di, j+dj)

    def mass(self, cell) -> float:
        """Probability mass of a cell, 0.0 outside the 3x3 footprint."""
        di = cell[0] - self.center[0]
        dj = cell[1] - self.center[1]
        if abs(di) > 1 or abs(dj) > 1:
            return 0.0
        return float(self.values[di + 1, dj + 1])


def probability_raster(cell, rmap: RasterMap, sigma: float = 1.0) -> ProbRaster:
    """Gaussian transition raster over the 3x3 neighborhood of a cell.

    Weight exp(-(di^2 + dj^2) / (2 sigma^2)) is forced to zero on
    non-walkable or out-of-bounds cells, then the raster is renormalized.
    All nine cells blocked -> DegenerateRasterError.
    """
    if sigma <= 0:
        raise DegenerateRasterError(f"sigma must be positive, got {sigma}")
    i0, j0 = cell
    if not rmap.in_bounds(i0, j0):
        raise OffMapError(f"cell {cell} outside grid")
    values = np.zeros((3, 3))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i, j = i0 + di, j0 + dj
            if rmap.in_bounds(i, j) and rmap.walkable[i, j]:
                values[di + 1, dj + 1] = math.exp(
                    -(di * di + dj * dj) / (2.0 * sigma * sigma))
    total = values.sum()
    if total <= 0:
        raise DegenerateRasterError(
            f"no walkable support in the 3x3 neighborhood of {cell}")
    return ProbRaster(center=(i0, j0), values=values / total)


@dataclass(frozen=True)
class TransferMatrix:
    """Row-stochastic one-step camera transfer matrix."""

    camera_ids: tuple[int, ...]
    P: np.ndarray  # (n, n), rows sum to 1

    def index(self, camera_id: int) -> int:
        return self.camera_ids.index(camera_id)


def build_transfer_matrix(rmap: RasterMap, camera_ids=None,
                          stay_prob: float = 0.0) -> TransferMatrix:
    """One-step transfer matrix from camera adjacency.

    Each row puts stay_prob on the diagonal and distributes the rest over
    outgoing adjacency edges proportionally to their weights (uniform when
    all weights are equal). A camera with no outgoing edge keeps all mass
    on itself when stay_prob > 0 and is a ModelError otherwise.
    """
    if not 0.0 <= stay_prob <= 1.0:
        raise ModelError(f"stay_prob {stay_prob} outside [0, 1]")
    ids = tuple(sorted(camera_ids)) if camera_ids is not None else tuple(rmap.camera_ids())
    if not ids:
        raise ModelError("no cameras to build a transfer matrix over")
    pos = {c: k for k, c in enumerate(ids)}
    n = len(ids)
    P = np.zeros((n, n))
    out_weight = np.zeros(n)
    for edge in rmap.adjacency:
        if edge.from_id not in pos or edge.to_id not in pos:
            continue
        if edge.weight < 0:
            raise ModelError(f"negative adjacency weight on "
                             f"{edge.from_id}->{edge.to_id}")
        a, b = pos[edge.from_id], pos[edge.to_id]
        P[a, b] += edge.weight
        out_weight[a] += edge.weight
    for k in range(n):
        if out_weight[k] > 0:
            P[k] *= (1.0 - stay_prob) / out_weight[k]
            P[k, k] += stay_prob
        elif stay_prob > 0:
            P[k, k] = 1.0
        else:
            raise ModelError(
                f"camera {ids[k]} has no outgoing adjacency and stay_prob=0")
    return TransferMatrix(camera_ids=ids, P=P)


def n_step(tm: TransferMatrix, n: int) -> np.ndarray:
    """N-step transfer probabilities P^N (N = 0 gives the identity)."""
    if n < 0:
        raise ModelError(f"step count must be >= 0, got {n}")
    return np.linalg.matrix_power(tm.P, n)


def predict_reappearance(camera_id: int, tm: TransferMatrix,
                         n_max: int = 5) -> list[tuple[int, float]]:
    """Rank destination cameras by max_{1<=N<=n_max} P_ij(N).

    Returns every camera as (camera_id, score), sorted by descending score;
    ties prefer the destination reached at the smaller N, then the smaller
    camera id. The output is a permutation of all cameras.
    """
    if n_max < 1:
        raise ModelError(f"n_max must be >= 1, got {n_max}")
    src = tm.index(camera_id)
    n = len(tm.camera_ids)
    best = np.full(n, -1.0)
    best_step = np.full(n, n_max + 1, dtype=int)
    power = np.eye(n)
    for step in range(1, n_max + 1):
        power = power @ tm.P
        row = power[src]
        improved = row > best + 1e-15
        best_step[improved] = step
        best = np.maximum(best, row)
    order = sorted(range(n), key=lambda j: (-best[j], best_step[j],
                                            tm.camera_ids[j]))
    return [(tm.camera_ids[j], float(best[j])) for j in order]
