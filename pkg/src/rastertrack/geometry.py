"""Camera calibration, image-to-ground projection, and detector file IO.

Coordinate conventions
----------------------
Image coordinates are pixels, origin top-left, y growing downward. Ground
coordinates are meters on the z=0 plane. A camera's homography H maps
homogeneous image points to ground points: [x, y, w]^T = H [u, v, 1]^T.
The foot point of a body box (l, t, w, h) is its bottom-center (l + w/2,
t + h), the ground-contact pixel under the flat-world assumption.

Detection CSV layout (one file per camera, no header):
    frame, id, bb_left, bb_top, bb_w, bb_h, conf, class,
    hd_left, hd_top, hd_w, hd_h
`id` is -1 on detector output (filled by the tracker); the four head-box
fields are -1 when the head detector produced nothing for that row.

Embedding sidecar: binary, little-endian, magic b"MCFE", then u32 count,
u32 dim, then count*dim float32 row-major. A CSV alternative with rows
`index, v0, v1, ...` is accepted. Row k holds the embedding of the k-th
detection row of the paired CSV.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, FormatError, ParseError, ProjectionError

_MAGIC = b"MCFE"
_DET_COLUMNS = 12


@dataclass(frozen=True)
class CameraCalibration:
    """One camera: id, image->ground homography, ground-plane FOV polygon."""

    camera_id: int
    homography: np.ndarray  # (3, 3), invertible
    fov_polygon: np.ndarray  # (k, 2) ground vertices, k >= 3

    def ground_to_image(self, point) -> tuple[float, float]:
        """Inverse projection; mainly used by generators and debugging."""
        inv = np.linalg.inv(self.homography)
        q = inv @ np.array([point[0], point[1], 1.0])
        if abs(q[2]) < 1e-9:
            raise ProjectionError(
                f"camera {self.camera_id}: ground point {point} maps to infinity")
        return float(q[0] / q[2]), float(q[1] / q[2])


@dataclass
class CameraSet:
    cameras: dict[int, CameraCalibration] = field(default_factory=dict)

    def __iter__(self):
        return iter(sorted(self.cameras.values(), key=lambda c: c.camera_id))

    def __getitem__(self, camera_id: int) -> CameraCalibration:
        return self.cameras[camera_id]

    def __contains__(self, camera_id: int) -> bool:
        return camera_id in self.cameras

    def ids(self) -> list[int]:
        return sorted(self.cameras)


@dataclass
class Detection:
    """One detector output row, timestamp derived from frame index / fps."""

    frame: int
    camera_id: int
    box: np.ndarray  # ltwh, pixels
    confidence: float
    class_id: int = 1
    head_box: np.ndarray | None = None
    embedding_index: int = -1
    timestamp: float = 0.0

    def foot_point(self) -> tuple[float, float]:
        l, t, w, h = self.box
        return float(l + w / 2.0), float(t + h)

    def head_point(self) -> tuple[float, float] | None:
        if self.head_box is None:
            return None
        l, t, w, h = self.head_box
        return float(l + w / 2.0), float(t + h)


def load_calibration(path) -> CameraSet:
    """Parse a calibration JSON file into a CameraSet.

    Raises ParseError on malformed JSON and CalibrationError on duplicate
    ids, singular homographies, or degenerate FOV polygons.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    if not isinstance(raw, dict) or "cameras" not in raw:
        raise CalibrationError(f"{path}: missing top-level 'cameras' list")

    out = CameraSet()
    for entry in raw["cameras"]:
        try:
            cam_id = int(entry["id"])
            H = np.asarray(entry["H"], dtype=np.float64)
            fov = np.asarray(entry["fov"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CalibrationError(f"{path}: bad camera entry {entry!r}") from exc
        if cam_id in out.cameras:
            raise CalibrationError(f"{path}: duplicate camera id {cam_id}")
        if H.shape != (3, 3):
            raise CalibrationError(f"{path}: camera {cam_id}: H must be 3x3")
        if abs(np.linalg.det(H)) <= 1e-12:
            raise CalibrationError(f"{path}: camera {cam_id}: H is singular")
        if fov.ndim != 2 or fov.shape[0] < 3 or fov.shape[1] != 2:
            raise CalibrationError(
                f"{path}: camera {cam_id}: FOV needs >= 3 (x, y) vertices")
        out.cameras[cam_id] = CameraCalibration(cam_id, H, fov)
    return out


def project_to_ground(calib: CameraCalibration, pixel) -> tuple[float, float]:
    """Project an image pixel onto the ground plane through H."""
    q = calib.homography @ np.array([pixel[0], pixel[1], 1.0])
    if abs(q[2]) < 1e-9:
        raise ProjectionError(
            f"camera {calib.camera_id}: pixel {tuple(pixel)} projects to infinity")
    return float(q[0] / q[2]), float(q[1] / q[2])


def _parse_float(value, path, line_no, col):
    try:
        return float(value)
    except ValueError as exc:
        raise ParseError(f"{path}:{line_no}: column {col}: not a number: {value!r}") from exc


def load_detections(path, camera_id: int, fps: float = 1.0) -> list[Detection]:
    """Load one camera's detection CSV, sorted by frame, timestamps = frame/fps."""
    path = Path(path)
    if fps <= 0:
        raise ParseError(f"{path}: fps must be positive, got {fps}")
    dets: list[Detection] = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < _DET_COLUMNS:
            raise ParseError(
                f"{path}:{line_no}: expected {_DET_COLUMNS}+ columns, got {len(parts)}")
        vals = [_parse_float(p, path, line_no, i) for i, p in enumerate(parts[:_DET_COLUMNS])]
        frame = int(vals[0])
        box = np.array(vals[2:6], dtype=np.float64)
        if box[2] <= 0 or box[3] <= 0:
            raise ParseError(
                f"{path}:{line_no}: non-positive box size {box[2]}x{box[3]}")
        conf = vals[6]
        if not 0.0 <= conf <= 1.0:
            raise ParseError(f"{path}:{line_no}: confidence {conf} outside [0, 1]")
        head = np.array(vals[8:12], dtype=np.float64)
        head_box = None if np.all(head == -1) else head
        if head_box is not None and (head_box[2] <= 0 or head_box[3] <= 0):
            raise ParseError(
                f"{path}:{line_no}: non-positive head box size")
        dets.append(Detection(
            frame=frame,
            camera_id=camera_id,
            box=box,
            confidence=conf,
            class_id=int(vals[7]),
            head_box=head_box,
            timestamp=frame / fps,
        ))

    dets.sort(key=lambda d: d.frame)
    for k, det in enumerate(dets):
        det.embedding_index = k
    return dets


def load_embeddings(path) -> np.ndarray:
    """Load an embedding table as a (count, dim) float32 array.

    Binary layout: magic, u32 count, u32 dim, count*dim f32 (little-endian,
    row-major). Files ending in .csv use `index, v0, ...` rows instead.
    Raises FormatError on magic/size violations and on zero-norm rows.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        table = _load_embeddings_csv(path)
    else:
        table = _load_embeddings_bin(path)
    norms = np.linalg.norm(table, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    if bad.size:
        raise FormatError(f"{path}: zero-norm embedding at row {int(bad[0])}")
    return table


def _load_embeddings_bin(path: Path) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_MAGIC!r}")
    count, dim = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(
            f"{path}: size mismatch: header says {count}x{dim} "
            f"({expected} bytes), file has {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=12)
    return data.reshape(count, dim).astype(np.float32)


def _load_embeddings_csv(path: Path) -> np.ndarray:
    rows = []
    with path.open(newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                idx = int(float(row[0]))
                vec = np.array([float(v) for v in row[1:]], dtype=np.float32)
            except ValueError as exc:
                raise FormatError(f"{path}:{line_no}: bad embedding row") from exc
            rows.append((idx, vec))
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    rows.sort(key=lambda r: r[0])
    dim = rows[0][1].shape[0]
    for idx, vec in rows:
        if vec.shape[0] != dim:
            raise FormatError(f"{path}: inconsistent embedding dim at index {idx}")
    return np.stack([vec for _, vec in rows])


def save_embeddings(path, table: np.ndarray) -> None:
    """Write a (count, dim) array in the binary sidecar layout."""
    table = np.ascontiguousarray(table, dtype="<f4")
    count, dim = table.shape
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", count, dim))
        fh.write(table.tobytes())
