"""Deterministic synthetic multi-camera world generator.

Produces a complete dataset bundle — semantic map, camera calibrations,
per-camera detection CSVs, embedding banks, and ground-truth files — from
a compact scenario spec. Agents perform goal-directed walks between
camera zones on the walkable grid (shortest 4-connected paths, one cell
per frame, collisions resolved by sidestepping), so camera-to-camera
transit times are tight enough to train a usable transition model from
the declared adjacency alone.

All randomness flows through one numpy default_rng (PCG64) seeded from
the spec; identical (spec, seed) yields byte-identical files. Floats are
written with fixed six-decimal formatting, embeddings as little-endian
f32, JSON with sorted keys.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecError
from .geometry import load_calibration, save_embeddings
from .rastermap import build_map

_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class CameraSpec:
    camera_id: int
    rect: tuple  # (i0, j0, i1, j1) cell bounds, exclusive upper
    scale: float = 20.0  # pixels per world unit; 1/scale must be exact

    def fov_polygon(self, origin, cell_size):
        i0, j0, i1, j1 = self.rect
        x0, y0 = origin[0] + i0 * cell_size, origin[1] + j0 * cell_size
        x1, y1 = origin[0] + i1 * cell_size, origin[1] + j1 * cell_size
        return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


@dataclass
class AdjacencySpec:
    from_id: int
    to_id: int
    mean_transit_s: float
    std_s: float = 1.0
    weight: float = 1.0


@dataclass
class OcclusionSpec:
    agent: int
    start: int  # inclusive frame window
    end: int
    camera: int | None = None  # None: occluded everywhere


@dataclass
class ScenarioSpec:
    name: str
    width: int
    height: int
    cameras: list
    agents: int
    frames: int
    fps: float = 5.0
    cell_size: float = 1.0
    origin: tuple = (0.0, 0.0)
    walkable_rects: list | None = None  # None: fully walkable
    walls: list = field(default_factory=list)
    adjacency: list = field(default_factory=list)
    seed: int = 0
    miss_rate: float = 0.0
    jitter_px: float = 0.0
    embed_noise: float = 0.0
    embed_corrupt_rate: float = 0.0  # chance of a heavily blurred embedding
    corrupt_sigma: float = 0.2
    clutter_rate: float = 0.0
    occlusions: list = field(default_factory=list)
    embed_dim: int = 128
    stay_prob: float = 0.0
    heads: bool = False
    box_w: float = 0.5  # world units
    box_h: float = 1.75
    clutter_conf: tuple = (0.25, 0.45)
    tracker_overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SpecError(f"{self.name}: non-positive grid")
        if not 0.0 <= self.miss_rate < 1.0:
            raise SpecError(f"{self.name}: miss_rate {self.miss_rate}")
        if not 0.0 <= self.clutter_rate < 1.0:
            raise SpecError(f"{self.name}: clutter_rate {self.clutter_rate}")
        if self.agents < 0 or self.frames < 0 or self.fps <= 0:
            raise SpecError(f"{self.name}: bad agents/frames/fps")
        if not self.cameras:
            raise SpecError(f"{self.name}: no cameras")


def spec_from_json(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> ScenarioSpec:
    try:
        raw = dict(raw)
        raw["cameras"] = [CameraSpec(c["camera_id"], tuple(c["rect"]),
                                     c.get("scale", 20.0))
                          for c in raw["cameras"]]
        raw["adjacency"] = [AdjacencySpec(a["from_id"], a["to_id"],
                                          a["mean_transit_s"],
                                          a.get("std_s", 1.0),
                                          a.get("weight", 1.0))
                            for a in raw.get("adjacency", [])]
        raw["occlusions"] = [OcclusionSpec(o["agent"], o["start"], o["end"],
                                           o.get("camera"))
                             for o in raw.get("occlusions", [])]
        # JSON has no tuples; restore the tuple-typed fields exactly
        if raw.get("walkable_rects") is not None:
            raw["walkable_rects"] = [tuple(r) for r in raw["walkable_rects"]]
        if "walls" in raw:
            raw["walls"] = [tuple(r) for r in raw["walls"]]
        if "clutter_conf" in raw:
            raw["clutter_conf"] = tuple(raw["clutter_conf"])
        if "origin" in raw:
            raw["origin"] = tuple(raw["origin"])
        return ScenarioSpec(**raw)
    except (KeyError, TypeError) as exc:
        raise SpecError(f"bad scenario spec: {exc}") from exc


def _walkable_grid(spec: ScenarioSpec) -> np.ndarray:
    grid = np.zeros((spec.width, spec.height), dtype=bool)
    if spec.walkable_rects is None:
        grid[:] = True
    else:
        for i0, j0, i1, j1 in spec.walkable_rects:
            grid[i0:i1, j0:j1] = True
    for i0, j0, i1, j1 in spec.walls:
        grid[i0:i1, j0:j1] = False
    if not grid.any():
        raise SpecError(f"{spec.name}: no walkable cells")
    return grid


def _map_dict(spec: ScenarioSpec, grid: np.ndarray) -> dict:
    fov_cells = {}
    for cam in spec.cameras:
        i0, j0, i1, j1 = cam.rect
        cells = [[i, j]
                 for i in range(max(i0, 0), min(i1, spec.width))
                 for j in range(max(j0, 0), min(j1, spec.height))
                 if grid[i, j]]
        fov_cells[str(cam.camera_id)] = cells
    return {
        "origin": list(spec.origin),
        "cell_size": spec.cell_size,
        "width": spec.width,
        "height": spec.height,
        # flat list in row-major frame order k = j * width + i
        "walkable": [int(grid[i, j]) for j in range(spec.height)
                     for i in range(spec.width)],
        "fov_cells": fov_cells,
        "adjacency": [
            {"from": a.from_id, "to": a.to_id,
             "mean_transit_s": a.mean_transit_s, "std_s": a.std_s,
             "weight": a.weight}
            for a in spec.adjacency],
    }


def _calibration_dict(spec: ScenarioSpec) -> dict:
    cams = []
    for cam in spec.cameras:
        i0, j0 = cam.rect[0], cam.rect[1]
        x0 = spec.origin[0] + i0 * spec.cell_size
        y0 = spec.origin[1] + j0 * spec.cell_size
        inv = 1.0 / cam.scale
        cams.append({
            "id": cam.camera_id,
            "H": [[inv, 0.0, x0], [0.0, inv, y0], [0.0, 0.0, 1.0]],
            "fov": cam.fov_polygon(spec.origin, spec.cell_size),
        })
    return {"cameras": cams}


def _bfs_path(grid: np.ndarray, start, goal):
    """Shortest 4-connected path start..goal (start excluded), or None."""
    if start == goal:
        return []
    w, h = grid.shape
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            break
        for di, dj in _NEIGHBORS:
            nxt = (cur[0] + di, cur[1] + dj)
            if 0 <= nxt[0] < w and 0 <= nxt[1] < h and \
                    grid[nxt] and nxt not in parent:
                parent[nxt] = cur
                queue.append(nxt)
    if goal not in parent:
        return None
    path = []
    cur = goal
    while cur != start:
        path.append(cur)
        cur = parent[cur]
    path.reverse()
    return path


class _Agent:
    __slots__ = ("cell", "path", "base")

    def __init__(self, cell, base):
        self.cell = cell
        self.path: list = []
        self.base = base


@dataclass
class ScenarioBundle:
    spec: ScenarioSpec
    out_dir: Path
    map_path: Path
    calibration_path: Path
    detection_paths: dict
    embedding_paths: dict
    gt_paths: dict
    detections_written: int
    clutter_written: int
    gt_rows_written: int


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def generate_scenario(spec: ScenarioSpec, out_dir) -> ScenarioBundle:
    """Write the full bundle for `spec` under `out_dir` and describe it."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    grid = _walkable_grid(spec)
    out_dir = Path(out_dir)
    for sub in ("det", "embed", "gt"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    map_dict = _map_dict(spec, grid)
    map_path = out_dir / "map.json"
    with open(map_path, "w", encoding="utf-8") as fh:
        json.dump(map_dict, fh, sort_keys=True, separators=(",", ":"))
    calib_path = out_dir / "calibration.json"
    with open(calib_path, "w", encoding="utf-8") as fh:
        json.dump(_calibration_dict(spec), fh, sort_keys=True,
                  separators=(",", ":"))
    with open(out_dir / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, sort_keys=True, indent=1)
    cameras = load_calibration(calib_path)  # round-trip: use what a reader sees
    rmap = build_map(map_dict, cameras, source=str(map_path))

    # waypoint pools: walkable cells of each camera zone, fixed order
    zones = []
    for cam in spec.cameras:
        cells = [tuple(c) for c in map_dict["fov_cells"][str(cam.camera_id)]]
        if cells:
            zones.append(cells)
    if not zones:
        raise SpecError(f"{spec.name}: no camera covers a walkable cell")
    walk_cells = [(i, j) for i in range(spec.width) for j in range(spec.height)
                  if grid[i, j]]

    bases = rng.standard_normal((spec.agents, spec.embed_dim))
    bases /= np.linalg.norm(bases, axis=1, keepdims=True)

    if spec.agents > len(walk_cells):
        raise SpecError(f"{spec.name}: more agents than walkable cells")
    starts = rng.choice(len(walk_cells), size=spec.agents, replace=False)
    agents = [_Agent(walk_cells[k], bases[a])
              for a, k in enumerate(starts)]
    occupied = {a.cell for a in agents}

    def same_region(a, b):
        ra, rb = rmap.regions[a[0], a[1]], rmap.regions[b[0], b[1]]
        return ra >= 0 and ra == rb

    def new_waypoint(agent: _Agent):
        for _ in range(24):
            zone = zones[int(rng.integers(len(zones)))]
            goal = zone[int(rng.integers(len(zone)))]
            if goal == agent.cell or not same_region(agent.cell, goal):
                continue
            path = _bfs_path(grid, agent.cell, goal)
            if path:
                agent.path = path
                return
        agent.path = []

    def advance(agent: _Agent):
        if spec.stay_prob > 0 and rng.random() < spec.stay_prob:
            return
        if not agent.path:
            new_waypoint(agent)
            if not agent.path:
                return
        nxt = agent.path[0]
        if nxt in occupied:
            # sidestep around the blocker; replan from the detour cell
            for di, dj in _NEIGHBORS:
                alt = (agent.cell[0] + di, agent.cell[1] + dj)
                if alt != nxt and rmap.in_bounds(*alt) and grid[alt] and \
                        alt not in occupied:
                    goal = agent.path[-1]
                    occupied.discard(agent.cell)
                    agent.cell = alt
                    occupied.add(alt)
                    agent.path = _bfs_path(grid, alt, goal) or []
                    return
            return
        occupied.discard(agent.cell)
        agent.cell = nxt
        occupied.add(nxt)
        agent.path.pop(0)

    def occluded(agent_idx: int, frame: int, camera_id: int) -> bool:
        for occ in spec.occlusions:
            if occ.agent != agent_idx:
                continue
            if occ.camera is not None and occ.camera != camera_id:
                continue
            if occ.start <= frame <= occ.end:
                return True
        return False

    cam_specs = sorted(spec.cameras, key=lambda c: c.camera_id)
    fov_sets = {c.camera_id: set(map(tuple,
                                     map_dict["fov_cells"][str(c.camera_id)]))
                for c in cam_specs}
    det_lines = {c.camera_id: [] for c in cam_specs}
    gt_lines = {c.camera_id: [] for c in cam_specs}
    embeds = {c.camera_id: [] for c in cam_specs}
    n_det = n_clutter = n_gt = 0

    head_none = "-1,-1,-1,-1"
    for frame in range(spec.frames):
        if frame > 0:
            for agent in agents:
                advance(agent)
        for cam in cam_specs:
            i0, j0 = cam.rect[0], cam.rect[1]
            x0 = spec.origin[0] + i0 * spec.cell_size
            y0 = spec.origin[1] + j0 * spec.cell_size
            s = cam.scale
            w_px, h_px = spec.box_w * s, spec.box_h * s

            def emit(u, v, conf, embedding, ident):
                nonlocal n_det
                box = (u - w_px / 2.0, v - h_px, w_px, h_px)
                head = head_none
                if spec.heads and ident >= 0:
                    head = ",".join(_fmt(t) for t in
                                    (u - w_px / 4.0, v - h_px,
                                     w_px / 2.0, h_px / 4.0))
                det_lines[cam.camera_id].append(
                    f"{frame},-1,{_fmt(box[0])},{_fmt(box[1])},"
                    f"{_fmt(box[2])},{_fmt(box[3])},{_fmt(conf)},1,{head}")
                embeds[cam.camera_id].append(embedding)
                n_det += 1

            for a, agent in enumerate(agents):
                if agent.cell not in fov_sets[cam.camera_id]:
                    continue
                x = spec.origin[0] + (agent.cell[0] + 0.5) * spec.cell_size
                y = spec.origin[1] + (agent.cell[1] + 0.5) * spec.cell_size
                u, v = (x - x0) * s, (y - y0) * s
                gt_lines[cam.camera_id].append(
                    f"{frame},{a},{_fmt(u - w_px / 2.0)},{_fmt(v - h_px)},"
                    f"{_fmt(w_px)},{_fmt(h_px)},1.000000,1,{head_none},{a}")
                n_gt += 1
                if occluded(a, frame, cam.camera_id):
                    continue
                if spec.miss_rate > 0 and rng.random() < spec.miss_rate:
                    continue
                uu, vv = u, v
                if spec.jitter_px > 0:
                    du, dv = rng.normal(0.0, spec.jitter_px, 2)
                    uu, vv = u + du, v + dv
                    gx, gy = uu / s + x0, vv / s + y0
                    ci = int(np.floor((gx - spec.origin[0]) / spec.cell_size))
                    cj = int(np.floor((gy - spec.origin[1]) / spec.cell_size))
                    if (ci, cj) not in fov_sets[cam.camera_id]:
                        continue  # jitter pushed the foot out of coverage
                if spec.embed_corrupt_rate > 0 and \
                        rng.random() < spec.embed_corrupt_rate:
                    vec = agent.base + rng.normal(0.0, spec.corrupt_sigma,
                                                  spec.embed_dim)
                    vec = vec / np.linalg.norm(vec)
                elif spec.embed_noise > 0:
                    vec = agent.base + rng.normal(0.0, spec.embed_noise,
                                                  spec.embed_dim)
                    vec = vec / np.linalg.norm(vec)
                else:
                    vec = agent.base
                conf = 0.9 + 0.1 * rng.random()
                emit(uu, vv, conf, vec, a)
            if spec.clutter_rate > 0 and rng.random() < spec.clutter_rate:
                # never on an occupied cell: a false box must not be able to
                # stand in for a real target it exactly overlaps
                pool = sorted(fov_sets[cam.camera_id] - occupied)
                if pool:
                    ci, cj = pool[int(rng.integers(len(pool)))]
                    x = spec.origin[0] + (ci + 0.5) * spec.cell_size
                    y = spec.origin[1] + (cj + 0.5) * spec.cell_size
                    u, v = (x - x0) * s, (y - y0) * s
                    vec = rng.standard_normal(spec.embed_dim)
                    vec /= np.linalg.norm(vec)
                    lo, hi = spec.clutter_conf
                    conf = lo + (hi - lo) * rng.random()
                    emit(u, v, conf, vec, -1)
                    n_clutter += 1

    det_paths, emb_paths, gt_paths = {}, {}, {}
    for cam in cam_specs:
        cid = cam.camera_id
        det_paths[cid] = out_dir / "det" / f"cam{cid}.csv"
        det_paths[cid].write_text("\n".join(det_lines[cid]) +
                                  ("\n" if det_lines[cid] else ""),
                                  encoding="utf-8")
        gt_paths[cid] = out_dir / "gt" / f"cam{cid}.csv"
        gt_paths[cid].write_text("\n".join(gt_lines[cid]) +
                                 ("\n" if gt_lines[cid] else ""),
                                 encoding="utf-8")
        emb_paths[cid] = out_dir / "embed" / f"cam{cid}.bin"
        rows = np.asarray(embeds[cid], dtype=np.float64) if embeds[cid] \
            else np.zeros((0, spec.embed_dim))
        save_embeddings(emb_paths[cid], rows)
    return ScenarioBundle(spec, out_dir, map_path, calib_path, det_paths,
                          emb_paths, gt_paths, n_det, n_clutter, n_gt)


def standard_benchmarks() -> dict:
    """The named desk-scale benchmark scenarios, keyed by name."""
    overlap = ScenarioSpec(
        name="overlap-handover",
        width=34, height=8,
        cameras=[CameraSpec(0, (0, 0, 20, 8)), CameraSpec(1, (14, 0, 34, 8))],
        agents=3, frames=150, fps=5.0,
        adjacency=[AdjacencySpec(0, 1, 1.0, 0.5), AdjacencySpec(1, 0, 1.0, 0.5)],
        seed=7,
    )
    gap = ScenarioSpec(
        name="gap-handover",
        width=52, height=8,
        cameras=[CameraSpec(0, (0, 0, 14, 8)), CameraSpec(1, (38, 0, 52, 8))],
        agents=2, frames=240, fps=5.0,
        adjacency=[AdjacencySpec(0, 1, 5.0, 1.0), AdjacencySpec(1, 0, 5.0, 1.0)],
        seed=11,
    )
    single = ScenarioSpec(
        name="single-cam-occlusion",
        width=12, height=12,
        cameras=[CameraSpec(0, (0, 0, 12, 12))],
        agents=2, frames=120, fps=5.0,
        occlusions=[OcclusionSpec(0, 40, 48), OcclusionSpec(1, 70, 78)],
        seed=3,
        tracker_overrides={"stay_prob": 1.0},
    )
    zigzag = ScenarioSpec(
        name="zigzag-5cam",
        width=60, height=20,
        walkable_rects=[(0, 0, 60, 6), (54, 6, 60, 14), (0, 14, 60, 20)],
        cameras=[
            CameraSpec(0, (0, 0, 18, 6)),
            CameraSpec(1, (12, 0, 34, 6)),
            CameraSpec(2, (40, 0, 60, 6)),
            CameraSpec(3, (50, 4, 60, 16)),
            CameraSpec(4, (10, 14, 40, 20)),
        ],
        agents=6, frames=300, fps=5.0,
        adjacency=[
            AdjacencySpec(0, 1, 0.5, 0.5), AdjacencySpec(1, 0, 0.5, 0.5),
            AdjacencySpec(1, 2, 1.4, 1.0), AdjacencySpec(2, 1, 1.4, 1.0),
            AdjacencySpec(2, 3, 0.5, 0.5), AdjacencySpec(3, 2, 0.5, 0.5),
            AdjacencySpec(3, 4, 2.4, 1.5), AdjacencySpec(4, 3, 2.4, 1.5),
        ],
        seed=2024,
        miss_rate=0.06, jitter_px=1.0, embed_noise=0.03,
        embed_corrupt_rate=0.1, clutter_rate=0.03, stay_prob=0.05, heads=True,
        occlusions=[OcclusionSpec(1, 60, 68), OcclusionSpec(3, 140, 150),
                    OcclusionSpec(5, 210, 216)],
        # path topology: self-return mass outranks one neighbor, so the
        # reappearance top-k must cover self plus both corridor neighbors
        tracker_overrides={"handover_top_k": 3},
    )
    return {s.name: s for s in (overlap, gap, single, zigzag)}
