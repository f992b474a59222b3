"""Forward tracking engine: every stage wired over a recorded dataset.

Per frame, in order: project all cameras' detections onto the map, assign
them to live tracks camera by camera, re-check provisional identities
against the feature bank, open tracks for leftover detections (adopting a
bank identity when appearance, space-time and map evidence fuse above
threshold), align co-visible cross-camera observations, refine one query
per identity, fold the frame into the feature bank, then age out missed
tracks. After the last frame the closed tracklets enter the global
min-cost-flow pass; records of uncovered tracklets are unlabeled (false
alarm semantics) before the reverse pass gets a chance to rescue or
relabel, and confidences are compensated along each final trajectory.

Every stage iterates cameras, tracks and identities in sorted order, so
two runs over the same inputs produce byte-identical result files.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import (DegenerateRasterError, FormatError, ModelError,
                     OffMapError, UsageError)
from .features import FeatureBank, local_subset, match_features, update_bank
from .fusion import (FusionInput, QueryBank, RefineWeights, TrackQuery,
                     attend, build_track_query, fuse_probabilities,
                     push_query, refine)
from .geometry import load_calibration, load_detections, load_embeddings
from .logic import (Tracklet, TrackView, TransitModel, align_overlapping,
                    frame_assign, solve_global_graph, transit_probability)
from .rastermap import encode_frame, load_map
from .retro import (HistoryRecord, TrackHistory, compensate_confidence,
                    reverse_pass)
from .spatial import (build_transfer_matrix, cluster_covisible,
                      probability_raster)

_OUT_CLASS = 1
_NO_HEAD = (-1.0, -1.0, -1.0, -1.0)


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def _cos01(a: np.ndarray | None, b: np.ndarray | None) -> float:
    """Clipped cosine, 1.0 when either side carries no appearance."""
    if a is None or b is None:
        return 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 1.0
    return _clip01(float(np.dot(a, b) / (na * nb)))


@dataclass
class _Track:
    """Mutable per-camera track state between frames."""

    camera_id: int
    identity: int
    confirmed: bool  # False until the bank agrees with the identity
    start_frame: int
    start_time: float
    last_frame: int
    last_time: float
    ground: tuple
    head_ground: tuple | None
    cell: tuple
    start_cell: tuple
    misses: int = 0
    alphas: list = field(default_factory=list)
    embedding_sum: np.ndarray | None = None
    count: int = 0
    records: list = field(default_factory=list)  # indices into the history

    def add_embedding(self, emb: np.ndarray) -> None:
        if self.embedding_sum is None:
            self.embedding_sum = np.asarray(emb, dtype=np.float64).copy()
        else:
            self.embedding_sum += emb
        self.count += 1


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    camera_paths: dict
    global_path: Path
    manifest_path: Path
    history: TrackHistory
    corrections: list


class _Engine:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.cameras = load_calibration(cfg.calibration_path)
        self.rmap = load_map(cfg.map_path, self.cameras)
        self.dets: dict[int, list] = {}
        self.embeds: dict[int, np.ndarray] | None = \
            {} if cfg.embeddings_dir is not None else None
        det_dir = Path(cfg.detections_dir)
        for cam in self.cameras:
            path = det_dir / f"cam{cam.camera_id}.csv"
            if not path.exists():
                raise FormatError(f"{path}: missing detections file")
            dets = load_detections(path, cam.camera_id, cfg.fps)
            self.dets[cam.camera_id] = dets
            if self.embeds is None:
                continue
            epath = Path(cfg.embeddings_dir) / f"cam{cam.camera_id}.bin"
            if not epath.exists():
                raise FormatError(f"{epath}: missing embeddings file")
            table = load_embeddings(epath)
            if len(table) != len(dets):
                raise FormatError(
                    f"{epath}: {len(table)} embeddings for "
                    f"{len(dets)} detections")
            if len(table) and table.shape[1] != cfg.embed_dim:
                raise FormatError(
                    f"{epath}: embedding dim {table.shape[1]}, "
                    f"config says {cfg.embed_dim}")
            self.embeds[cam.camera_id] = table

        self.by_frame: dict[int, list] = {}
        for cam_id in sorted(self.dets):
            for det in self.dets[cam_id]:
                self.by_frame.setdefault(det.frame, []).append(det)

        try:
            self.transfer = build_transfer_matrix(
                self.rmap, stay_prob=cfg.stay_prob)
        except ModelError:
            self.transfer = None
        try:
            self.transit = TransitModel.from_adjacency(
                self.rmap, cfg.transit_bin_s, cfg.transit_max_s)
        except ModelError:
            self.transit = None

        if cfg.stcn_weights is not None:
            self.weights = RefineWeights.load(
                cfg.stcn_weights, cfg.stcn_dim, cfg.stcn_dff)
        else:
            self.weights = RefineWeights.identity_init(
                cfg.stcn_dim, cfg.stcn_dff)
        self.bank = FeatureBank(momentum=cfg.momentum)
        self.qbank = QueryBank(m=cfg.stcn_bank_m)
        self.refined: dict[int, np.ndarray] = {}

        self.live: dict[int, list[_Track]] = {}
        self.records: list[HistoryRecord] = []
        self.final_ids: dict[int, int] = {}
        self.tracklets: list[Tracklet] = []
        self.next_id = 1
        self.rejects = 0
        self.detections = sum(len(d) for d in self.dets.values())

    # -- channels ---------------------------------------------------------

    def _new_identity(self) -> int:
        ident = self.next_id
        self.next_id += 1
        return ident

    def _raster_or_none(self, cell):
        try:
            return probability_raster(cell, self.rmap, self.cfg.sigma_cells)
        except (DegenerateRasterError, OffMapError):
            return None

    def _map_channel(self, prev_cell, det_cell) -> float:
        """Max-normalized transition mass of the detection's cell.

        Outside the 3x3 footprint of the previous cell the raster is
        uninformative: 1.0 on walkable ground, floor elsewhere.
        """
        raster = self._raster_or_none(prev_cell)
        if raster is not None:
            m = raster.mass(det_cell)
            if m > 0.0:
                return m / float(raster.values.max())
        inside = abs(det_cell[0] - prev_cell[0]) <= 1 and \
            abs(det_cell[1] - prev_cell[1]) <= 1
        if inside:
            return 1e-6
        return 1.0 if self.rmap.is_walkable(det_cell) else 1e-6

    def _st_channel(self, entry, camera_id: int, now: float) -> float:
        """Space-time plausibility of a bank identity showing up here now."""
        dt = now - entry.last_time
        if entry.last_camera == camera_id or dt <= self.cfg.handover_grace_s:
            return 1.0
        if self.transit is None:
            return 1.0
        return _clip01(transit_probability(
            self.transit, entry.last_camera, camera_id, dt))

    def _adopt_map_channel(self, entry, det_cell, camera_id: int) -> float:
        if entry.last_camera != camera_id:
            return 1.0 if self.rmap.is_walkable(det_cell) else 1e-6
        return self._map_channel(entry.last_cell, det_cell)

    def _track_embedding(self, trk: _Track) -> np.ndarray | None:
        if self.cfg.stcn_feedback and trk.identity in self.refined:
            return self.refined[trk.identity]
        if self.cfg.use_feature and trk.identity in self.bank:
            return self.bank.get(trk.identity).centroid
        if trk.embedding_sum is not None and trk.count > 0:
            norm = np.linalg.norm(trk.embedding_sum)
            if norm > 1e-12:
                return trk.embedding_sum / norm
        return None

    # -- per-frame stages --------------------------------------------------

    def _frame(self, f: int) -> None:
        cfg = self.cfg
        now = f / cfg.fps
        fprs, rejected = encode_frame(
            self.by_frame.get(f, []), self.rmap, self.cameras, self.embeds)
        self.rejects += len(rejected)

        cam_idx: dict[int, list[int]] = {}
        for k, fpr in enumerate(fprs):
            cam_idx.setdefault(fpr.camera_id, []).append(k)

        identities: dict[int, int] = {}
        confidences: dict[int, float] = {}
        owner: dict[int, _Track] = {}
        frame_pairs: list[tuple[int, int]] = []  # (record idx, fpr idx)
        for cam_id in sorted(cam_idx):
            self._camera_frame(f, now, cam_id, fprs, cam_idx[cam_id],
                               identities, confidences, owner, frame_pairs)

        if cfg.use_logic and len(fprs) > 1:
            clusters = cluster_covisible(
                fprs, self.rmap, cfg.cluster_radius_cells)
            actions = align_overlapping(clusters, fprs, identities,
                                        confidences, self.rmap,
                                        cfg.thresh_scale)
            self._apply_align(f, actions, identities, confidences, owner)

        reps = self._frame_reps(fprs, frame_pairs)
        self._stcn_pass(f, reps, fprs)
        if cfg.use_feature:
            for identity in sorted(reps):
                _, k = reps[identity]
                fpr = fprs[k]
                update_bank(self.bank, identity, fpr.embedding, fpr.cell,
                            fpr.camera_id, now)

        for cam_id in sorted(self.live):
            tracks = self.live[cam_id]
            for trk in list(tracks):
                if trk.last_frame < f:
                    trk.misses += 1
                    if trk.misses > cfg.miss_tolerance:
                        self._close(trk)
                        tracks.remove(trk)

    def _camera_frame(self, f, now, cam_id, fprs, idxs,
                      identities, confidences, owner, frame_pairs):
        cfg = self.cfg
        tracks = self.live.setdefault(cam_id, [])
        cam_fprs = [fprs[k] for k in idxs]
        assign_fprs = cam_fprs
        if cfg.stcn_feedback:
            # compare in query space when refined queries drive matching
            assign_fprs = [
                fpr if fpr.embedding is None else replace(
                    fpr, embedding=build_track_query(
                        fpr.embedding, fpr.cell,
                        fpr.detection.confidence, cfg.stcn_dim))
                for fpr in cam_fprs]
        views = [TrackView(t.ground, self._track_embedding(t), t.head_ground)
                 for t in tracks]
        res = frame_assign(views, assign_fprs, self.rmap, cfg.w_dist,
                           cfg.w_app, cfg.gate_cells, cfg.min_similarity)

        updated: set[int] = set()
        recheck: list[tuple[_Track, int, int]] = []
        for ti, di, _cost, sim in sorted(res.matches):
            trk = tracks[ti]
            k = idxs[di]
            fpr = fprs[k]
            det = fpr.detection
            p_feat = _cos01(views[ti].embedding, assign_fprs[di].embedding)
            p_st = _clip01(sim)
            p_map = self._map_channel(trk.cell, fpr.cell)
            fused, _ = fuse_probabilities(
                FusionInput(p_feat, p_st, p_map), cfg.fuse_threshold)
            trk.last_frame, trk.last_time = f, now
            trk.ground, trk.head_ground = fpr.ground, fpr.head_ground
            trk.cell = fpr.cell
            trk.misses = 0
            trk.alphas.append(det.confidence * sim)
            if fpr.embedding is not None:
                trk.add_embedding(fpr.embedding)
            rec_idx = self._record(f, cam_id, k, det, trk.identity,
                                   p_st, p_map, fused, fpr)
            trk.records.append(rec_idx)
            frame_pairs.append((rec_idx, k))
            identities[k], confidences[k] = trk.identity, det.confidence
            owner[k] = trk
            updated.add(trk.identity)
            if not trk.confirmed:
                recheck.append((trk, k, rec_idx))

        if cfg.use_feature:
            for trk, k, rec_idx in recheck:
                self._recheck(f, now, cam_id, tracks, trk, k, rec_idx,
                              fprs, identities, updated)

        for di in sorted(res.births):
            k = idxs[di]
            fpr = fprs[k]
            det = fpr.detection
            identity = None
            adopted = False
            p_st = p_map = fused = 1.0
            if cfg.use_feature and fpr.embedding is not None:
                cands = local_subset(
                    self.bank, fpr.cell, self.rmap, self.transfer,
                    cfg.local_radius_cells, cfg.max_age_s, now, cam_id,
                    cfg.handover_grace_s, cfg.handover_top_k,
                    self._raster_or_none(fpr.cell), exclude=set(updated))
                m = match_features(fpr.embedding, cands, cfg.accept_threshold)
                if m.identity is not None:
                    entry = self.bank.get(m.identity)
                    st = self._st_channel(entry, cam_id, now)
                    pm = self._adopt_map_channel(entry, fpr.cell, cam_id)
                    fz, ok = fuse_probabilities(
                        FusionInput(_clip01(m.similarity), st, pm),
                        cfg.fuse_threshold)
                    if ok:
                        identity, adopted = m.identity, True
                        p_st, p_map, fused = st, pm, fz
            if identity is None:
                identity = self._new_identity()
            else:
                self._steal(cam_id, identity, f, keeper=None)
            trk = _Track(cam_id, identity, confirmed=adopted, start_frame=f,
                         start_time=now, last_frame=f, last_time=now,
                         ground=fpr.ground, head_ground=fpr.head_ground,
                         cell=fpr.cell, start_cell=fpr.cell)
            trk.alphas.append(det.confidence)
            if fpr.embedding is not None:
                trk.add_embedding(fpr.embedding)
            tracks.append(trk)
            rec_idx = self._record(f, cam_id, k, det, identity,
                                   p_st, p_map, fused, fpr)
            trk.records.append(rec_idx)
            frame_pairs.append((rec_idx, k))
            identities[k], confidences[k] = identity, det.confidence
            owner[k] = trk
            updated.add(identity)

    def _recheck(self, f, now, cam_id, tracks, trk, k, rec_idx,
                 fprs, identities, updated):
        """Provisional identity: ask the bank again, supersede on consent."""
        cfg = self.cfg
        fpr = fprs[k]
        if fpr.embedding is None:
            return
        cands = local_subset(
            self.bank, fpr.cell, self.rmap, self.transfer,
            cfg.local_radius_cells, cfg.max_age_s, now, cam_id,
            cfg.handover_grace_s, cfg.handover_top_k,
            self._raster_or_none(fpr.cell),
            exclude=updated - {trk.identity})
        m = match_features(fpr.embedding, cands, cfg.accept_threshold)
        if m.identity is None:
            return
        if m.identity == trk.identity or \
                self._resolve_final(m.identity) == trk.identity:
            trk.confirmed = True
            return
        entry = self.bank.get(m.identity)
        p_st = self._st_channel(entry, cam_id, now)
        p_map = self._adopt_map_channel(entry, fpr.cell, cam_id)
        fused, ok = fuse_probabilities(
            FusionInput(_clip01(m.similarity), p_st, p_map),
            cfg.fuse_threshold)
        if not ok:
            return
        if any(o is not trk and o.identity == m.identity and
               o.last_frame == f for o in tracks):
            return
        self._steal(cam_id, m.identity, f, keeper=trk)
        old = trk.identity
        self.final_ids[old] = m.identity
        # the losing label must not linger as a match target
        self.bank.entries.pop(old, None)
        trk.identity, trk.confirmed = m.identity, True
        self.records[rec_idx] = replace(
            self.records[rec_idx], identity=m.identity,
            p_spacetime=p_st, p_map=p_map, fused=fused)
        identities[k] = m.identity
        updated.discard(old)
        updated.add(m.identity)

    def _steal(self, cam_id, identity, f, keeper):
        """Close a missing same-camera holder when its identity is adopted."""
        tracks = self.live.get(cam_id, [])
        for other in list(tracks):
            if other is keeper or other.identity != identity:
                continue
            if other.last_frame < f:
                self._close(other)
                tracks.remove(other)

    def _apply_align(self, f, actions, identities, confidences, owner):
        for act in sorted(actions, key=lambda a: a.det_index):
            trk = owner.get(act.det_index)
            if trk is None:
                continue
            new_id = act.new_identity
            rec_idx = trk.records[-1]
            if new_id != trk.identity:
                cam_tracks = self.live.get(trk.camera_id, [])
                if any(o is not trk and o.identity == new_id and
                       o.last_frame == f for o in cam_tracks):
                    continue
                old = trk.identity
                if trk.start_frame == f and old not in self.final_ids \
                        and self._resolve_final(new_id) != old:
                    self.final_ids[old] = new_id
                    self.bank.entries.pop(old, None)
                trk.identity = new_id
                trk.confirmed = True
            self.records[rec_idx] = replace(
                self.records[rec_idx], identity=new_id,
                confidence=act.new_confidence)
            identities[act.det_index] = new_id
            confidences[act.det_index] = act.new_confidence

    def _frame_reps(self, fprs, frame_pairs):
        """Per identity, this frame's representative observation.

        Lowest camera id wins (then detection index) so the choice does not
        depend on processing order; identity-less or appearance-less
        records never represent.
        """
        reps: dict[int, tuple[int, int]] = {}
        for rec_idx, k in frame_pairs:
            rec = self.records[rec_idx]
            if rec.identity is None or fprs[k].embedding is None:
                continue
            best = reps.get(rec.identity)
            key = (fprs[k].camera_id, k)
            if best is None or key < (fprs[best[1]].camera_id, best[1]):
                reps[rec.identity] = (rec_idx, k)
        return reps

    def _stcn_pass(self, f, reps, fprs):
        for identity in sorted(reps):
            rec_idx, k = reps[identity]
            fpr = fprs[k]
            q = build_track_query(fpr.embedding, fpr.cell,
                                  self.records[rec_idx].confidence,
                                  self.cfg.stcn_dim)
            push_query(self.qbank, TrackQuery(identity, q, f))
            queue = self.qbank.bank_of(identity)
            q_sa = attend(queue)
            q_mean = np.mean([tq.vector for tq in queue], axis=0)
            self.refined[identity] = refine(q_sa, q_mean, self.weights)

    def _record(self, f, cam_id, k, det, identity, p_st, p_map, fused, fpr):
        head = tuple(det.head_box) if det.head_box is not None else None
        rec = HistoryRecord(
            frame=f, camera_id=cam_id, det_index=k, box=tuple(det.box),
            identity=identity, confidence=det.confidence,
            p_spacetime=p_st, p_map=p_map, fused=fused,
            embedding=fpr.embedding, head_box=head)
        self.records.append(rec)
        return len(self.records) - 1

    def _close(self, trk: _Track) -> None:
        tid = len(self.tracklets)
        self.tracklets.append(Tracklet(
            tracklet_id=tid, camera_id=trk.camera_id, identity=trk.identity,
            start_frame=trk.start_frame, end_frame=trk.last_frame,
            start_time=trk.start_time, end_time=trk.last_time,
            alphas=list(trk.alphas), embedding_sum=trk.embedding_sum,
            start_cell=trk.start_cell, end_cell=trk.cell,
            records=list(trk.records)))

    # -- end of sequence ----------------------------------------------------

    def _flow_pass(self) -> int:
        """Global min-cost-flow sweep; returns suppressed record count."""
        cfg = self.cfg
        trajset = solve_global_graph(self.tracklets, self.transit,
                                     cfg.k_a, cfg.k_t, cfg.link_gate_s)
        suppressed = 0
        for t in self.tracklets:
            if trajset.covered(t.tracklet_id):
                continue
            for rec_idx in t.records:
                if self.records[rec_idx].identity is not None:
                    self.records[rec_idx] = replace(
                        self.records[rec_idx], identity=None)
                    suppressed += 1
        for traj in trajset.trajectories:
            if len(traj.tracklet_ids) < 2:
                continue
            for tid in traj.tracklet_ids:
                ident = self.tracklets[tid].identity
                if ident == traj.identity or ident in self.final_ids:
                    continue
                if self._chains_to(traj.identity, ident):
                    continue  # never close a supersede loop
                self.final_ids[ident] = traj.identity
        return suppressed

    def _chains_to(self, start: int, target: int) -> bool:
        return self._resolve_final(start) == target

    def _resolve_final(self, identity: int) -> int:
        seen = set()
        cur = identity
        while cur in self.final_ids and cur not in seen:
            seen.add(cur)
            cur = self.final_ids[cur]
        return cur

    def run(self, out_dir: Path) -> RunResult:
        t0 = time.perf_counter()
        frames = sorted(self.by_frame)
        for f in range(frames[0], frames[-1] + 1) if frames else []:
            self._frame(f)
        for cam_id in sorted(self.live):
            for trk in list(self.live[cam_id]):
                self._close(trk)
            self.live[cam_id] = []

        suppressed = 0
        if self.cfg.use_logic and self.tracklets:
            suppressed = self._flow_pass()

        history = TrackHistory(tuple(self.records), dict(self.final_ids),
                               self.bank)
        corrections: list = []
        if self.cfg.use_retrospective and self.cfg.retrospective:
            history, corrections = reverse_pass(
                history, self.cfg.fuse_threshold, self.cfg.accept_threshold)
            history = compensate_confidence(history, self.cfg.conf_decay)

        out_dir.mkdir(parents=True, exist_ok=True)
        camera_paths, global_path, identities = \
            self._write_outputs(history, out_dir)

        manifest = {
            "version": __version__,
            "config_hash": self.cfg.canonical_hash(),
            "seed": self.cfg.seed,
            "cameras": [cam.camera_id for cam in self.cameras],
            "frames": [frames[0], frames[-1]] if frames else None,
            "detections": self.detections,
            "rejects": self.rejects,
            "tracklets": len(self.tracklets),
            "identities": identities,
            "suppressed": suppressed,
            "corrections": len(corrections),
            "wall_time_s": round(time.perf_counter() - t0, 6),
        }
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2,
                                            sort_keys=True) + "\n")
        return RunResult(out_dir, manifest, camera_paths, global_path,
                         manifest_path, history, corrections)

    def _write_outputs(self, history: TrackHistory, out_dir: Path):
        by_cam: dict[int, list] = {cam.camera_id: [] for cam in self.cameras}
        pooled: list = []
        idents: set[int] = set()
        for rec in history.records:
            if rec.identity is None:
                continue
            idents.add(rec.identity)
            head = rec.head_box if rec.head_box is not None else _NO_HEAD
            row = (rec.frame, rec.identity, rec.box, rec.confidence, head)
            by_cam[rec.camera_id].append(row)
            pooled.append((rec.camera_id,) + row)

        def fmt(frame, ident, box, conf, head) -> str:
            cells = [str(frame), str(ident)]
            cells += [f"{v:.6f}" for v in box]
            cells += [f"{conf:.6f}", str(_OUT_CLASS)]
            cells += [f"{v:.6f}" for v in head]
            cells.append(str(ident))
            return ",".join(cells)

        camera_paths: dict[int, Path] = {}
        for cam_id in sorted(by_cam):
            rows = sorted(by_cam[cam_id], key=lambda r: (r[0], r[1]))
            path = out_dir / f"cam{cam_id}.csv"
            path.write_text("".join(fmt(*row) + "\n" for row in rows))
            camera_paths[cam_id] = path
        pooled.sort(key=lambda r: (r[1], r[0], r[2]))
        global_path = out_dir / "global.csv"
        global_path.write_text("".join(
            f"{row[0]}," + fmt(*row[1:]) + "\n" for row in pooled))
        return camera_paths, global_path, len(idents)


def run_track(cfg: RunConfig, out_dir=None) -> RunResult:
    """Track a recorded dataset end to end and write result files.

    `out_dir` (argument, else cfg.out_dir) receives cam<k>.csv per camera,
    a pooled global.csv with a leading camera column, and manifest.json.
    Result rows carry the final identity in both the id and global-id
    columns.
    """
    target = out_dir if out_dir is not None else cfg.out_dir
    if target is None:
        raise UsageError("no output directory given")
    return _Engine(cfg).run(Path(target))
