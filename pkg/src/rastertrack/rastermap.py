"""Semantic raster map: walkability grid, camera covisibility, regions.

The ground plane is discretized into cells of cell_size meters. Cell (i, j)
covers [origin_x + i*cs, origin_x + (i+1)*cs) x [origin_y + j*cs, ...): i
indexes x in [0, width), j indexes y in [0, height). Flat serializations
use index k = j * width + i.

A cell's covisible set is the set of cameras whose ground FOV polygon
contains the cell center (closed test: boundary counts as inside).
Connected regions are 4-connected components of the walkable mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import MapError, OffMapError, ParseError
from .geometry import CameraSet, Detection, project_to_ground

_REGION_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class CameraTransit:
    """Directed camera adjacency edge with transit-time statistics."""

    from_id: int
    to_id: int
    mean_transit_s: float
    std_s: float
    weight: float = 1.0


@dataclass(frozen=True)
class CellAttr:
    walkable: bool
    covisible: frozenset[int]
    region: int  # -1 on non-walkable cells


@dataclass
class RasterMap:
    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int
    walkable: np.ndarray  # (width, height) bool
    covis: dict[int, np.ndarray]  # camera id -> (width, height) bool
    regions: np.ndarray  # (width, height) int32, -1 outside walkable
    adjacency: list[CameraTransit] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.width and 0 <= j < self.height

    def cell_center(self, cell) -> tuple[float, float]:
        i, j = cell
        return (self.origin[0] + (i + 0.5) * self.cell_size,
                self.origin[1] + (j + 0.5) * self.cell_size)

    def is_walkable(self, cell) -> bool:
        i, j = cell
        return self.in_bounds(i, j) and bool(self.walkable[i, j])

    def cell_attr(self, cell) -> CellAttr:
        i, j = cell
        if not self.in_bounds(i, j):
            raise OffMapError(f"cell {cell} outside {self.width}x{self.height} grid")
        return CellAttr(
            walkable=bool(self.walkable[i, j]),
            covisible=self._covisible(i, j),
            region=int(self.regions[i, j]),
        )

    def _covisible(self, i: int, j: int) -> frozenset[int]:
        return frozenset(c for c, mask in self.covis.items() if mask[i, j])

    def camera_ids(self) -> list[int]:
        return sorted(self.covis)


def world_to_cell(rmap: RasterMap, point) -> tuple[int, int]:
    """Ground point -> containing cell (floor semantics); OffMapError outside."""
    i = math.floor((point[0] - rmap.origin[0]) / rmap.cell_size)
    j = math.floor((point[1] - rmap.origin[1]) / rmap.cell_size)
    if not rmap.in_bounds(i, j):
        raise OffMapError(
            f"point ({point[0]}, {point[1]}) outside grid "
            f"[{rmap.width}x{rmap.height} cells from {rmap.origin}]")
    return i, j


def covisible_cameras(rmap: RasterMap, cell) -> frozenset[int]:
    """Set of cameras observing the cell center; OffMapError outside the grid."""
    i, j = cell
    if not rmap.in_bounds(i, j):
        raise OffMapError(f"cell {cell} outside {rmap.width}x{rmap.height} grid")
    return rmap._covisible(i, j)


def connected_region(rmap: RasterMap, cell) -> int:
    """4-connected component label of a walkable cell, -1 if non-walkable."""
    i, j = cell
    if not rmap.in_bounds(i, j):
        raise OffMapError(f"cell {cell} outside grid")
    return int(rmap.regions[i, j])


def points_in_polygon(points: np.ndarray, polygon: np.ndarray,
                      eps: float = 1e-9) -> np.ndarray:
    """Closed point-in-polygon test (boundary counts as inside).

    Even-odd ray casting plus an explicit on-segment check; vectorized over
    an (n, 2) point array for an unclosed (k, 2) vertex loop.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=np.float64)
    n = pts.shape[0]
    inside = np.zeros(n, dtype=bool)
    on_edge = np.zeros(n, dtype=bool)
    px, py = pts[:, 0], pts[:, 1]
    scale = max(1.0, float(np.abs(poly).max()))
    tol = eps * scale

    for k in range(len(poly)):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % len(poly)]
        # on-segment: zero cross product and inside the segment bbox
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        within = ((px >= min(ax, bx) - tol) & (px <= max(ax, bx) + tol) &
                  (py >= min(ay, by) - tol) & (py <= max(ay, by) + tol))
        on_edge |= (np.abs(cross) <= tol) & within
        # even-odd crossing of the upward ray
        crosses = ((ay > py) != (by > py))
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < x_at)

    return inside | on_edge


def _expand_walkable(raw, width: int, height: int, source: str) -> np.ndarray:
    """Decode a flat 0/1 list or [[value, count], ...] RLE into (W, H) bools."""
    if raw and isinstance(raw[0], (list, tuple)):
        flat: list[int] = []
        for pair in raw:
            if len(pair) != 2:
                raise ParseError(f"{source}: RLE entries must be [value, count]")
            value, count = pair
            if count < 0:
                raise ParseError(f"{source}: negative RLE run length")
            flat.extend([int(value)] * int(count))
    else:
        flat = [int(v) for v in raw]
    if len(flat) != width * height:
        raise ParseError(
            f"{source}: walkable mask has {len(flat)} cells, "
            f"expected {width * height}")
    arr = np.array(flat, dtype=bool).reshape(height, width)  # k = j*width + i
    return arr.T.copy()


def build_map(spec: dict, cameras: CameraSet | None = None,
              source: str = "<map spec>") -> RasterMap:
    """Construct a RasterMap from a map spec dict plus camera calibrations.

    The spec carries grid geometry, the walkable mask (flat or RLE), camera
    adjacency, and optionally precomputed per-camera `fov_cells`. Covisibility
    comes from `fov_cells` when present, else from closed cell-center
    containment in each camera's FOV polygon. A camera whose FOV covers no
    cell produces a warning record, not an error.
    """
    try:
        origin = (float(spec["origin"][0]), float(spec["origin"][1]))
        cell_size = float(spec["cell_size"])
        width = int(spec["width"])
        height = int(spec["height"])
        walk_raw = spec["walkable"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{source}: missing or malformed map fields: {exc}") from exc
    if cell_size <= 0 or width <= 0 or height <= 0:
        raise MapError(f"{source}: non-positive grid geometry")

    walkable = _expand_walkable(walk_raw, width, height, source)
    if not walkable.any():
        raise MapError(f"{source}: walkable mask is empty")

    labels, _ = ndimage.label(walkable, structure=_REGION_STRUCTURE)
    regions = labels.astype(np.int32) - 1  # -1 on non-walkable

    covis: dict[int, np.ndarray] = {}
    warnings: list[str] = []
    fov_cells = spec.get("fov_cells")
    if fov_cells is not None:
        for key, cells in fov_cells.items():
            mask = np.zeros((width, height), dtype=bool)
            for i, j in cells:
                if 0 <= i < width and 0 <= j < height:
                    mask[i, j] = True
            covis[int(key)] = mask
    elif cameras is not None:
        ii, jj = np.meshgrid(np.arange(width), np.arange(height), indexing="ij")
        centers = np.stack([
            origin[0] + (ii.ravel() + 0.5) * cell_size,
            origin[1] + (jj.ravel() + 0.5) * cell_size,
        ], axis=1)
        for cam in cameras:
            mask = points_in_polygon(centers, cam.fov_polygon)
            covis[cam.camera_id] = mask.reshape(width, height)
    for cam_id, mask in covis.items():
        if not mask.any():
            warnings.append(f"camera {cam_id}: FOV covers no grid cell")

    adjacency = []
    for entry in spec.get("adjacency", []):
        try:
            adjacency.append(CameraTransit(
                from_id=int(entry["from"]),
                to_id=int(entry["to"]),
                mean_transit_s=float(entry["mean_transit_s"]),
                std_s=float(entry["std_s"]),
                weight=float(entry.get("weight", 1.0)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: bad adjacency entry {entry!r}") from exc

    return RasterMap(origin, cell_size, width, height, walkable, covis,
                     regions, adjacency, warnings)


def load_map(path, cameras: CameraSet | None = None) -> RasterMap:
    """Load a map JSON file (raw spec or `map build` output)."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return build_map(spec, cameras, source=str(path))


def map_to_json(rmap: RasterMap) -> dict:
    """Serialize a built map, covisibility included, for `map build` output."""
    walk_flat = rmap.walkable.T.ravel().astype(int).tolist()  # k = j*width + i
    fov_cells = {
        str(cam): [[int(i), int(j)] for i, j in zip(*np.nonzero(mask))]
        for cam, mask in sorted(rmap.covis.items())
    }
    return {
        "origin": [rmap.origin[0], rmap.origin[1]],
        "cell_size": rmap.cell_size,
        "width": rmap.width,
        "height": rmap.height,
        "walkable": walk_flat,
        "fov_cells": fov_cells,
        "adjacency": [
            {"from": e.from_id, "to": e.to_id,
             "mean_transit_s": e.mean_transit_s, "std_s": e.std_s,
             "weight": e.weight}
            for e in rmap.adjacency
        ],
    }


@dataclass
class FramePosResult:
    """One detection encoded into map coordinates."""

    detection: Detection
    camera_id: int
    ground: tuple[float, float]
    cell: tuple[int, int]
    covisible: frozenset[int]
    embedding: np.ndarray | None = None
    head_ground: tuple[float, float] | None = None


def encode_frame(detections, rmap: RasterMap, cameras: CameraSet,
                 embeddings: dict[int, np.ndarray] | None = None,
                 ) -> tuple[list[FramePosResult], list[tuple[Detection, str]]]:
    """Project one global frame's detections into cells.

    Detections whose foot point projects outside the grid, or whose cell is
    not covisible from the observing camera, go to the reject list with a
    reason. Embeddings, when given per camera, are attached by row index.
    """
    results: list[FramePosResult] = []
    rejects: list[tuple[Detection, str]] = []
    for det in detections:
        if det.camera_id not in cameras:
            rejects.append((det, f"unknown camera {det.camera_id}"))
            continue
        calib = cameras[det.camera_id]
        try:
            ground = project_to_ground(calib, det.foot_point())
        except Exception as exc:
            rejects.append((det, f"projection failed: {exc}"))
            continue
        try:
            cell = world_to_cell(rmap, ground)
        except OffMapError:
            rejects.append((det, "off-map"))
            continue
        covis = covisible_cameras(rmap, cell)
        if det.camera_id not in covis:
            rejects.append((det, "cell not covisible from observing camera"))
            continue
        emb = None
        if embeddings is not None and det.camera_id in embeddings:
            table = embeddings[det.camera_id]
            if 0 <= det.embedding_index < len(table):
                emb = table[det.embedding_index]
        head_ground = None
        hp = det.head_point()
        if hp is not None:
            try:
                head_ground = project_to_ground(calib, hp)
            except Exception:
                head_ground = None
        results.append(FramePosResult(
            detection=det, camera_id=det.camera_id, ground=ground,
            cell=cell, covisible=covis, embedding=emb,
            head_ground=head_ground))
    return results, rejects
