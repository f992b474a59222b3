"""Appearance feature bank and cosine matching.

The bank holds one exponentially-averaged centroid per identity plus the
identity's last-seen cell, camera, and timestamp. Candidate retrieval is
gated by the raster map (radius + connected region), by age, and by a
camera-handover rule driven by the transfer chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimError, EmptyBankError, NormError
from .rastermap import RasterMap
from .spatial import ProbRaster, TransferMatrix, predict_reappearance


def appearance_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; NormError on zero vectors, DimError on shape."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise NormError("zero-norm embedding in similarity")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class BankEntry:
    identity: int
    centroid: np.ndarray  # unit norm
    count: int
    last_cell: tuple[int, int]
    last_camera: int
    last_time: float


@dataclass
class FeatureBank:
    momentum: float = 0.1
    entries: dict[int, BankEntry] = field(default_factory=dict)

    def __contains__(self, identity: int) -> bool:
        return identity in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, identity: int) -> BankEntry:
        if identity not in self.entries:
            raise EmptyBankError(f"identity {identity} not in bank")
        return self.entries[identity]


def update_bank(bank: FeatureBank, identity: int, embedding: np.ndarray,
                cell, camera_id: int, timestamp: float) -> BankEntry:
    """EMA-update (or create) an identity's centroid and last-seen state.

    centroid <- normalize((1 - momentum) * centroid + momentum * embedding);
    a new identity starts at the normalized embedding with count 1.
    """
    emb = np.asarray(embedding, dtype=np.float64).ravel()
    norm = np.linalg.norm(emb)
    if norm < 1e-12:
        raise NormError(f"zero-norm embedding for identity {identity}")
    unit = emb / norm
    entry = bank.entries.get(identity)
    if entry is None:
        entry = BankEntry(identity, unit, 1, tuple(cell), camera_id, timestamp)
        bank.entries[identity] = entry
        return entry
    if entry.centroid.shape != unit.shape:
        raise DimError(
            f"identity {identity}: embedding dim {unit.shape[0]} != "
            f"bank dim {entry.centroid.shape[0]}")
    mixed = (1.0 - bank.momentum) * entry.centroid + bank.momentum * unit
    mnorm = np.linalg.norm(mixed)
    if mnorm < 1e-12:
        raise NormError(f"identity {identity}: centroid collapsed to zero")
    entry.centroid = mixed / mnorm
    entry.count += 1
    entry.last_cell = tuple(cell)
    entry.last_camera = camera_id
    entry.last_time = timestamp
    return entry


def local_subset(bank: FeatureBank, cell, rmap: RasterMap,
                 transfer: TransferMatrix | None = None,
                 radius_cells: int = 3, max_age_s: float = 30.0,
                 now: float = 0.0, query_camera: int | None = None,
                 handover_grace_s: float = 1.0, handover_top_k: int = 2,
                 raster: ProbRaster | None = None,
                 exclude: set[int] | None = None) -> list[BankEntry]:
    """Identities worth comparing against a query at `cell`.

    An identity qualifies when (a) its last cell is within Chebyshev
    radius_cells AND in the same connected region as the query cell, or
    (b) it is stale (age > handover_grace_s) and the query camera ranks in
    the top-k of predict_reappearance(last_camera). Identities older than
    max_age_s never qualify. Candidates whose last cell carries zero mass
    under the query's 3x3 raster are dropped (walkability veto inside the
    footprint only).
    """
    qi, qj = cell
    q_region = int(rmap.regions[qi, qj]) if rmap.in_bounds(qi, qj) else -1
    rankings: dict[int, list[int]] = {}
    out: list[BankEntry] = []
    for identity in sorted(bank.entries):
        if exclude and identity in exclude:
            continue
        entry = bank.entries[identity]
        age = now - entry.last_time
        if age > max_age_s:
            continue
        li, lj = entry.last_cell
        cheb = max(abs(li - qi), abs(lj - qj))
        near = False
        if cheb <= radius_cells and rmap.in_bounds(li, lj):
            same_region = (q_region >= 0 and
                           int(rmap.regions[li, lj]) == q_region)
            near = same_region
        via_handover = False
        if not near and transfer is not None and age > handover_grace_s:
            if entry.last_camera in transfer.camera_ids:
                if entry.last_camera not in rankings:
                    ranked = predict_reappearance(entry.last_camera, transfer)
                    rankings[entry.last_camera] = [c for c, _ in ranked]
                top = rankings[entry.last_camera][:handover_top_k]
                if query_camera is not None:
                    via_handover = query_camera in top
                else:
                    covis = rmap._covisible(qi, qj) if rmap.in_bounds(qi, qj) else frozenset()
                    via_handover = any(c in top for c in covis)
        if not (near or via_handover):
            continue
        if raster is not None and cheb <= 1 and raster.mass(entry.last_cell) == 0.0:
            continue
        out.append(entry)
    return out


@dataclass(frozen=True)
class MatchResult:
    identity: int | None
    similarity: float  # best cosine seen, -1.0 when no candidates
    candidates: int


def match_features(query: np.ndarray, candidates: list[BankEntry],
                   accept_threshold: float = 0.6) -> MatchResult:
    """Best-candidate cosine match with an accept threshold.

    Ties on similarity prefer the most recently seen identity, then the
    smaller identity integer; the result does not depend on candidate
    order. No candidate at or above the threshold -> identity None.
    """
    best: BankEntry | None = None
    best_sim = -1.0
    for entry in candidates:
        sim = appearance_similarity(query, entry.centroid)
        if sim > best_sim + 1e-15:
            best, best_sim = entry, sim
        elif best is not None and abs(sim - best_sim) <= 1e-15:
            if (entry.last_time, -entry.identity) > (best.last_time, -best.identity):
                best = entry
    if best is None or best_sim < accept_threshold:
        return MatchResult(None, best_sim, len(candidates))
    return MatchResult(best.identity, best_sim, len(candidates))
