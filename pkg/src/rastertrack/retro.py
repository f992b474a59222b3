"""Backward relabeling sweep and confidence back-propagation.

After the forward pass and the global solve, the per-frame record is
swept newest to oldest once. Detections that ended up unlabeled, or whose
forward identity was absorbed into another trajectory, are re-tested with
the final feature bank and their stored space-time / map channels; a
passing fused probability relabels them. Relabels along a superseded
single-camera tracklet propagate backward only while contiguous — the
first failing member stops the chain. The input history is never edited
in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InternalError
from .features import FeatureBank, appearance_similarity
from .fusion import FusionInput, fuse_probabilities


@dataclass(frozen=True)
class HistoryRecord:
    """One detection's forward-pass outcome."""

    frame: int
    camera_id: int
    det_index: int
    box: tuple
    identity: int | None
    confidence: float
    p_spacetime: float
    p_map: float
    fused: float = 1.0
    embedding: np.ndarray | None = None
    head_box: tuple | None = None


@dataclass(frozen=True)
class Correction:
    frame: int
    camera_id: int
    det_index: int
    old_identity: int | None
    new_identity: int
    fused: float


@dataclass(frozen=True)
class TrackHistory:
    """Forward record + final identity map + final bank snapshot.

    final_ids maps forward identities to the identity that ultimately owns
    them (merge edges); identities absent from the map own themselves.
    """

    records: tuple[HistoryRecord, ...]
    final_ids: dict[int, int] = field(default_factory=dict)
    bank: FeatureBank | None = None

    def resolve(self, identity: int) -> int:
        seen = set()
        while identity in self.final_ids and \
                self.final_ids[identity] != identity:
            if identity in seen:
                raise InternalError("cycle in identity merge map")
            seen.add(identity)
            identity = self.final_ids[identity]
        return identity


def _sim_prob(embedding, centroid) -> float:
    return float(np.clip(appearance_similarity(embedding, centroid), 0.0, 1.0))


def _bank_candidates(history: TrackHistory):
    """(final identity, centroid) pairs, best centroid per final identity.

    Only identities still labeling at least one record qualify: an
    unlabeled record must not be resurrected by its own orphaned bank
    entry after the global pass discarded the whole tracklet.
    """
    if history.bank is None:
        return []
    surviving = {history.resolve(rec.identity)
                 for rec in history.records if rec.identity is not None}
    by_final: dict[int, np.ndarray] = {}
    for identity in sorted(history.bank.entries):
        final = history.resolve(identity)
        if final not in surviving:
            continue
        by_final.setdefault(final, history.bank.entries[identity].centroid)
    return sorted(by_final.items())


def reverse_pass(history: TrackHistory, fuse_threshold: float = 0.05,
                 accept_threshold: float = 0.6
                 ) -> tuple[TrackHistory, list[Correction]]:
    """Single newest-to-oldest relabeling sweep.

    Superseded records are retargeted at their merge destination;
    unlabeled ones at the best-matching final bank identity, which must
    clear the same appearance acceptance bar as a forward match. Either
    way the stored channels are fused with the fresh appearance term and
    the relabel applies only at or above fuse_threshold. Labels already
    equal to their final identity are never touched, and a second
    application is a no-op.
    """
    if not history.records:
        return history, []
    candidates = _bank_candidates(history)
    order = sorted(range(len(history.records)),
                   key=lambda k: (history.records[k].frame,
                                  history.records[k].camera_id,
                                  history.records[k].det_index),
                   reverse=True)
    new_records = list(history.records)
    corrections: list[Correction] = []
    broken: set[tuple[int, int]] = set()
    for k in order:
        rec = history.records[k]
        if rec.identity is not None:
            final = history.resolve(rec.identity)
            if final == rec.identity:
                continue
            # superseded tracklet member: relabel while the chain holds
            chain = (rec.camera_id, rec.identity)
            if chain in broken:
                continue
            new_identity = final
            centroid = None
            if history.bank is not None:
                entry = history.bank.entries.get(rec.identity) or \
                    history.bank.entries.get(final)
                centroid = entry.centroid if entry is not None else None
            p_feat = _sim_prob(rec.embedding, centroid) \
                if rec.embedding is not None and centroid is not None else 1.0
            fused, ok = fuse_probabilities(
                FusionInput(p_feat, rec.p_spacetime, rec.p_map),
                fuse_threshold)
            if not ok:
                broken.add(chain)
                continue
        else:
            if rec.embedding is None or not candidates:
                continue
            best = None
            for identity, centroid in candidates:
                sim = _sim_prob(rec.embedding, centroid)
                if best is None or sim > best[1] + 1e-15:
                    best = (identity, sim)
            new_identity, p_feat = best
            if p_feat < accept_threshold:
                continue
            fused, ok = fuse_probabilities(
                FusionInput(p_feat, rec.p_spacetime, rec.p_map),
                fuse_threshold)
            if not ok:
                continue
        new_records[k] = dataclasses.replace(rec, identity=new_identity,
                                             fused=fused)
        corrections.append(Correction(rec.frame, rec.camera_id,
                                      rec.det_index, rec.identity,
                                      new_identity, fused))
    return TrackHistory(tuple(new_records), dict(history.final_ids),
                        history.bank), corrections


def compensate_confidence(history: TrackHistory,
                          decay: float = 0.99) -> TrackHistory:
    """Raise member confidences toward each trajectory's peak.

    Within every final identity, confidence becomes
    max(own, max_j conf_j * decay^|frame_i - frame_j|); two linear sweeps
    per group. Unlabeled records are untouched.
    """
    groups: dict[int, list[int]] = {}
    for k, rec in enumerate(history.records):
        if rec.identity is None:
            continue
        groups.setdefault(history.resolve(rec.identity), []).append(k)
    new_records = list(history.records)
    for _, members in sorted(groups.items()):
        members.sort(key=lambda k: history.records[k].frame)
        n = len(members)
        best = [history.records[k].confidence for k in members]
        fwd = best[:]
        for i in range(1, n):
            gap = history.records[members[i]].frame - \
                history.records[members[i - 1]].frame
            fwd[i] = max(fwd[i], fwd[i - 1] * decay ** gap)
        bwd = best[:]
        for i in range(n - 2, -1, -1):
            gap = history.records[members[i + 1]].frame - \
                history.records[members[i]].frame
            bwd[i] = max(bwd[i], bwd[i + 1] * decay ** gap)
        for i, k in enumerate(members):
            new_conf = max(best[i], fwd[i], bwd[i])
            if new_conf != history.records[k].confidence:
                new_records[k] = dataclasses.replace(
                    history.records[k], confidence=new_conf)
    return TrackHistory(tuple(new_records), dict(history.final_ids),
                        history.bank)
