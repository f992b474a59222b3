"""Shared builders for maps, calibrations, and generated benchmark data."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rastertrack.geometry import load_calibration
from rastertrack.rastermap import build_map
from rastertrack.synth import generate_scenario, standard_benchmarks


def make_map_spec(width, height, walkable=None, fov_cells=None,
                  adjacency=None, cell_size=1.0, origin=(0.0, 0.0)):
    """Flat map spec dict; walkable defaults to all-ones."""
    if walkable is None:
        mask = np.ones((width, height), dtype=int)
    else:
        mask = np.asarray(walkable, dtype=int)
    flat = [int(mask[i, j]) for j in range(height) for i in range(width)]
    spec = {
        "origin": list(origin),
        "cell_size": cell_size,
        "width": width,
        "height": height,
        "walkable": flat,
    }
    if fov_cells is not None:
        spec["fov_cells"] = {
            str(cam): [[int(i), int(j)] for i, j in cells]
            for cam, cells in fov_cells.items()
        }
    if adjacency is not None:
        spec["adjacency"] = adjacency
    return spec


def make_map(width, height, **kw):
    return build_map(make_map_spec(width, height, **kw))


def rect_cells(i0, j0, i1, j1):
    return [(i, j) for i in range(i0, i1) for j in range(j0, j1)]


def write_calibration(path, cams):
    """cams: list of (camera_id, H 3x3, fov vertex list)."""
    payload = {"cameras": [
        {"id": cid, "H": np.asarray(H).tolist(),
         "fov": [list(map(float, v)) for v in fov]}
        for cid, H, fov in cams
    ]}
    path.write_text(json.dumps(payload))
    return load_calibration(path)


def identity_calibration(path, camera_ids, extent=100.0):
    """Pixel == ground cameras whose FOV covers a square extent."""
    eye = np.eye(3)
    fov = [[0.0, 0.0], [extent, 0.0], [extent, extent], [0.0, extent]]
    return write_calibration(path, [(cid, eye, fov) for cid in camera_ids])


@pytest.fixture(scope="session")
def benchmarks():
    return standard_benchmarks()


@pytest.fixture(scope="session")
def overlap_bundle(tmp_path_factory, benchmarks):
    out = tmp_path_factory.mktemp("overlap")
    return generate_scenario(benchmarks["overlap-handover"], out)


@pytest.fixture(scope="session")
def gap_bundle(tmp_path_factory, benchmarks):
    out = tmp_path_factory.mktemp("gap")
    return generate_scenario(benchmarks["gap-handover"], out)


@pytest.fixture(scope="session")
def zigzag_bundle(tmp_path_factory, benchmarks):
    out = tmp_path_factory.mktemp("zigzag")
    return generate_scenario(benchmarks["zigzag-5cam"], out)
