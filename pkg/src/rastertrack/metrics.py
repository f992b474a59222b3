"""Tracking evaluation: MOTA, identification measures, cross-camera score.

Track rows are numpy arrays with columns (frame, id, left, top, w, h,
global_id); multi-camera inputs are dicts keyed by camera id. Identity
measures follow the truth-to-result matching formulation: each true
identity is paired with at most one predicted identity by a global
assignment maximizing per-frame gated co-occurrence, and IDP/IDR/IDF1
summarize the matched detection counts. MOTA uses per-frame gated
matching with continuity preference and switch counting against the
last known correspondence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, EvalError, ParseError
from .kernels import iou_matrix, solve_assignment

_GATE_COST = 1e6


def load_track_rows(path) -> np.ndarray:
    """Parse a MOT-style CSV into (frame, id, l, t, w, h, global_id) rows.

    The 13th column, when present, is the global id; otherwise the local
    id is reused. Extra columns (conf, class, head box) are ignored.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 6:
                raise ParseError(f"{path}:{lineno}: expected >=6 columns, "
                                 f"got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            gid = vals[12] if len(parts) >= 13 else vals[1]
            rows.append((vals[0], vals[1], vals[2], vals[3], vals[4],
                         vals[5], gid))
    if not rows:
        return np.zeros((0, 7))
    out = np.asarray(rows, dtype=np.float64)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def _by_frame(rows: np.ndarray, id_col: int = 1):
    """frame -> (ids int array, boxes (n, 4)); duplicate ids rejected."""
    frames: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if rows.size == 0:
        return frames
    ordered = rows[np.argsort(rows[:, 0], kind="stable")]
    fvals = ordered[:, 0]
    starts = np.flatnonzero(np.r_[True, fvals[1:] != fvals[:-1]])
    for s, e in zip(starts, np.r_[starts[1:], fvals.size]):
        sel = ordered[s:e]
        ids = sel[:, id_col].astype(np.int64)
        if np.unique(ids).size != ids.size:
            raise EvalError(f"frame {int(fvals[s])}: duplicate track ids")
        frames[int(fvals[s])] = (ids, sel[:, 2:6].copy())
    return frames


@dataclass(frozen=True)
class ClearResult:
    tp: int
    fp: int
    fn: int
    idsw: int
    gt_total: int
    # frame -> {gt_id: pred_id} for downstream link accounting
    correspondences: dict = field(default_factory=dict, compare=False)


def clear_matching(gt: np.ndarray, pred: np.ndarray,
                   iou_threshold: float = 0.5,
                   id_col: int = 1) -> ClearResult:
    """Per-frame gated matching with continuity preference.

    Pairs matched in the previous frame stay matched while their IoU
    holds; the remainder is resolved by a min-cost assignment on 1 - IoU.
    A switch is counted when a truth id matches a different predicted id
    than its last recorded correspondence (gaps included).
    """
    gt_frames = _by_frame(gt, id_col)
    pred_frames = _by_frame(pred, id_col)
    last: dict[int, int] = {}
    prev_pairs: dict[int, int] = {}
    tp = fp = fn = idsw = 0
    correspondences: dict[int, dict[int, int]] = {}
    for f in sorted(set(gt_frames) | set(pred_frames)):
        g_ids, g_boxes = gt_frames.get(f, (np.zeros(0, np.int64),
                                           np.zeros((0, 4))))
        p_ids, p_boxes = pred_frames.get(f, (np.zeros(0, np.int64),
                                             np.zeros((0, 4))))
        iou = iou_matrix(g_boxes, p_boxes) if g_ids.size and p_ids.size \
            else np.zeros((g_ids.size, p_ids.size))
        pairs: dict[int, int] = {}
        # carry over still-valid pairs first so jitter cannot flip ids
        p_index = {int(pid): k for k, pid in enumerate(p_ids)}
        g_index = {int(gid): k for k, gid in enumerate(g_ids)}
        used_p = set()
        for gid, pid in prev_pairs.items():
            gi = g_index.get(gid)
            pi = p_index.get(pid)
            if gi is None or pi is None:
                continue
            if iou[gi, pi] >= iou_threshold:
                pairs[gid] = pid
                used_p.add(pid)
        free_g = [gid for gid in g_index if gid not in pairs]
        free_p = [pid for pid in p_index if pid not in used_p]
        if free_g and free_p:
            cost = np.full((len(free_g), len(free_p)), _GATE_COST)
            for a, gid in enumerate(free_g):
                for b, pid in enumerate(free_p):
                    v = iou[g_index[gid], p_index[pid]]
                    if v >= iou_threshold:
                        cost[a, b] = 1.0 - v
            r, c = solve_assignment(cost)
            for a, b in zip(r, c):
                if cost[a, b] < _GATE_COST / 2:
                    pairs[free_g[a]] = free_p[b]
        for gid, pid in pairs.items():
            if gid in last and last[gid] != pid:
                idsw += 1
            last[gid] = pid
        tp += len(pairs)
        fn += g_ids.size - len(pairs)
        fp += p_ids.size - len(pairs)
        correspondences[f] = pairs
        prev_pairs = pairs
    return ClearResult(tp, fp, fn, idsw, sum(
        v[0].size for v in gt_frames.values()), correspondences)


@dataclass(frozen=True)
class MotaResult:
    mota: float
    fn: int
    fp: int
    idsw: int
    gt_total: int


def compute_mota(gt: np.ndarray, pred: np.ndarray,
                 iou_threshold: float = 0.5) -> MotaResult:
    res = clear_matching(gt, pred, iou_threshold)
    if res.gt_total == 0:
        raise DegenerateError("MOTA undefined without ground-truth boxes")
    mota = 1.0 - (res.fn + res.fp + res.idsw) / res.gt_total
    return MotaResult(mota, res.fn, res.fp, res.idsw, res.gt_total)


@dataclass(frozen=True)
class IdResult:
    idf1: float
    idp: float
    idr: float
    idtp: int
    idfp: int
    idfn: int


def _as_camera_dict(rows) -> dict:
    return rows if isinstance(rows, dict) else {0: rows}


def compute_idf1(gt, pred, iou_threshold: float = 0.5, id_col: int = 1,
                 namespace: bool = False) -> IdResult:
    """Identification precision/recall/F1 over one camera or a dict of them.

    Co-occurrence counts are tallied per (camera, frame) with an IoU gate,
    then a single assignment pairs true and predicted identities to
    maximize matched detections. With namespace=True ids are scoped per
    camera (for aggregating independent per-camera id spaces); leave it
    off when the id column is globally consistent.
    """
    gt, pred = _as_camera_dict(gt), _as_camera_dict(pred)
    overlap: dict[tuple, int] = {}
    ngt = npred = 0
    gt_seen: dict = {}
    pred_seen: dict = {}
    for cam in sorted(set(gt) | set(pred)):
        g_frames = _by_frame(gt.get(cam, np.zeros((0, 7))), id_col)
        p_frames = _by_frame(pred.get(cam, np.zeros((0, 7))), id_col)

        def scoped(raw):
            return (cam, int(raw)) if namespace else int(raw)

        for f, (g_ids, g_boxes) in g_frames.items():
            ngt += g_ids.size
            for gid in g_ids:
                gt_seen.setdefault(scoped(gid), len(gt_seen))
            p = p_frames.get(f)
            if p is None:
                continue
            iou = iou_matrix(g_boxes, p[1])
            hit = np.argwhere(iou >= iou_threshold)
            for gi, pi in hit:
                key = (scoped(g_ids[gi]), scoped(p[0][pi]))
                overlap[key] = overlap.get(key, 0) + 1
        for f, (p_ids, _) in p_frames.items():
            npred += p_ids.size
            for pid in p_ids:
                pred_seen.setdefault(scoped(pid), len(pred_seen))
    idtp = 0
    if overlap:
        counts = np.zeros((len(gt_seen), len(pred_seen)))
        for (gid, pid), n in overlap.items():
            counts[gt_seen[gid], pred_seen[pid]] = n
        # max-weight one-to-one pairing; non-negative weights make the
        # forced rectangular assignment harmless
        r, c = solve_assignment(-counts)
        idtp = int(counts[r, c].sum())
    idp = idtp / npred if npred else 0.0
    idr = idtp / ngt if ngt else 0.0
    idf1 = 2 * idtp / (ngt + npred) if ngt + npred else 0.0
    return IdResult(idf1, idp, idr, idtp, npred - idtp, ngt - idtp)


@dataclass(frozen=True)
class MctaResult:
    mcta: float
    f1: float
    within_mismatches: int
    within_links: int
    handover_mismatches: int
    handover_links: int


def _visits(obs: list[tuple[int, int]], visit_gap: int):
    """Split (frame, camera) observations into per-camera visit runs."""
    visits = []
    for frame, cam in sorted(obs):
        if visits and visits[-1][0] == cam and \
                frame - visits[-1][1][-1] <= visit_gap:
            visits[-1][1].append(frame)
        else:
            visits.append((cam, [frame]))
    return visits


def compute_mcta(gt: dict, pred: dict, iou_threshold: float = 0.5,
                 visit_gap: int = 25) -> MctaResult:
    """Detection F1 discounted by within-camera and handover mismatch rates.

    Links are consecutive matched observations of a truth identity: within
    a camera visit for the within term, and between the closing/opening
    matched frames of consecutive different-camera visits for the handover
    term. Only links with both endpoints matched are counted; a term with
    zero links contributes a factor of one.
    """
    if set(gt) != set(pred):
        raise EvalError(f"camera sets differ: gt={sorted(gt)} "
                        f"pred={sorted(pred)}")
    tp = fp = fn = 0
    per_cam: dict[int, ClearResult] = {}
    for cam in sorted(gt):
        res = clear_matching(gt[cam], pred[cam], iou_threshold, id_col=6)
        per_cam[cam] = res
        tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0

    # observations and matched pred id per (gt id, camera, frame)
    obs: dict[int, list[tuple[int, int]]] = {}
    matched: dict[tuple[int, int, int], int] = {}
    for cam in sorted(gt):
        for f, (ids, _) in _by_frame(gt[cam], id_col=6).items():
            for gid in ids:
                obs.setdefault(int(gid), []).append((f, cam))
        for f, pairs in per_cam[cam].correspondences.items():
            for gid, pid in pairs.items():
                matched[(gid, cam, f)] = pid
    m_w = t_w = m_h = t_h = 0
    for gid, observations in sorted(obs.items()):
        visits = _visits(observations, visit_gap)
        for cam, frames in visits:
            for f0, f1_ in zip(frames, frames[1:]):
                a = matched.get((gid, cam, f0))
                b = matched.get((gid, cam, f1_))
                if a is None or b is None:
                    continue
                t_w += 1
                m_w += a != b
        for (cam_a, frames_a), (cam_b, frames_b) in zip(visits, visits[1:]):
            if cam_a == cam_b:
                continue
            ends = [matched.get((gid, cam_a, f)) for f in frames_a]
            starts = [matched.get((gid, cam_b, f)) for f in frames_b]
            ends = [p for p in ends if p is not None]
            starts = [p for p in starts if p is not None]
            if not ends or not starts:
                continue
            t_h += 1
            m_h += ends[-1] != starts[0]
    within = 1.0 - m_w / t_w if t_w else 1.0
    handover = 1.0 - m_h / t_h if t_h else 1.0
    return MctaResult(f1 * within * handover, f1, m_w, t_w, m_h, t_h)


def run_eval(gt: dict, pred: dict, iou_threshold: float = 0.5) -> dict:
    """Full report: per-camera MOTA + id measures, overall, cross-camera.

    Per-camera and overall numbers use local ids (column 1); the
    cross-camera block uses global ids (column 6) pooled over cameras.
    """
    if set(gt) != set(pred):
        raise EvalError(f"camera sets differ: gt={sorted(gt)} "
                        f"pred={sorted(pred)}")
    if not gt:
        raise EvalError("no cameras to evaluate")
    report: dict = {"per_camera": {}, "overall": {}, "cross_camera": {}}
    fn = fp = idsw = gt_total = 0
    for cam in sorted(gt):
        mota = compute_mota(gt[cam], pred[cam], iou_threshold)
        ids = compute_idf1(gt[cam], pred[cam], iou_threshold)
        report["per_camera"][str(cam)] = {
            "idf1": ids.idf1, "idp": ids.idp, "idr": ids.idr,
            "mota": mota.mota, "fn": mota.fn, "fp": mota.fp,
            "idsw": mota.idsw, "gt": mota.gt_total,
        }
        fn, fp, idsw = fn + mota.fn, fp + mota.fp, idsw + mota.idsw
        gt_total += mota.gt_total
    overall_ids = compute_idf1(gt, pred, iou_threshold, namespace=True)
    report["overall"] = {
        "idf1": overall_ids.idf1, "idp": overall_ids.idp,
        "idr": overall_ids.idr,
        "mota": 1.0 - (fn + fp + idsw) / gt_total,
        "fn": fn, "fp": fp, "idsw": idsw, "gt": gt_total,
    }
    cross_ids = compute_idf1(gt, pred, iou_threshold, id_col=6)
    mcta = compute_mcta(gt, pred, iou_threshold)
    report["cross_camera"] = {
        "idf1": cross_ids.idf1, "idp": cross_ids.idp, "idr": cross_ids.idr,
        "mcta": mcta.mcta, "f1": mcta.f1,
        "within_mismatches": mcta.within_mismatches,
        "within_links": mcta.within_links,
        "handover_mismatches": mcta.handover_mismatches,
        "handover_links": mcta.handover_links,
    }
    return report


def report_text(report: dict) -> str:
    """Render the report as a fixed-width table, one row per camera."""
    lines = [f"{'sequence':<14}{'IDF1':>10}{'IDP':>10}{'IDR':>10}"
             f"{'MOTA':>10}{'IDsw':>6}"]
    for cam in sorted(report["per_camera"], key=lambda c: int(c)):
        row = report["per_camera"][cam]
        lines.append(f"{'cam' + cam:<14}{row['idf1']:>10.6f}"
                     f"{row['idp']:>10.6f}{row['idr']:>10.6f}"
                     f"{row['mota']:>10.6f}{row['idsw']:>6d}")
    row = report["overall"]
    lines.append(f"{'OVERALL':<14}{row['idf1']:>10.6f}{row['idp']:>10.6f}"
                 f"{row['idr']:>10.6f}{row['mota']:>10.6f}{row['idsw']:>6d}")
    cross = report["cross_camera"]
    lines.append("")
    lines.append(f"{'cross-camera':<14}IDF1 {cross['idf1']:.6f}  "
                 f"IDP {cross['idp']:.6f}  IDR {cross['idr']:.6f}  "
                 f"MCTA {cross['mcta']:.6f}")
    return "\n".join(lines)
