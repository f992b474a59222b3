"""Grid geometry, connectivity, covisibility, and frame encoding.

Region labels are checked against an independent BFS flood fill; polygon
covisibility against shapely.
"""

from collections import deque

import numpy as np
import pytest

from rastertrack.errors import MapError, OffMapError, ParseError
from rastertrack.geometry import Detection
from rastertrack.rastermap import (
    build_map,
    connected_region,
    covisible_cameras,
    encode_frame,
    load_map,
    map_to_json,
    points_in_polygon,
    world_to_cell,
)

from conftest import identity_calibration, make_map, make_map_spec

shapely = pytest.importorskip("shapely")
from shapely.geometry import Point, Polygon  # noqa: E402


def bfs_regions(mask):
    """Independent 4-connected labeling oracle."""
    w, h = mask.shape
    labels = -np.ones((w, h), dtype=int)
    next_label = 0
    for si in range(w):
        for sj in range(h):
            if not mask[si, sj] or labels[si, sj] >= 0:
                continue
            q = deque([(si, sj)])
            labels[si, sj] = next_label
            while q:
                i, j = q.popleft()
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if (0 <= ni < w and 0 <= nj < h and mask[ni, nj]
                            and labels[ni, nj] < 0):
                        labels[ni, nj] = next_label
                        q.append((ni, nj))
            next_label += 1
    return labels


def regions_equivalent(a, b):
    """Same partition up to label renaming."""
    assert a.shape == b.shape
    assert ((a < 0) == (b < 0)).all()
    seen = {}
    for la, lb in zip(a[a >= 0].ravel(), b[b >= 0].ravel()):
        if la in seen:
            if seen[la] != lb:
                return False
        else:
            seen[la] = lb
    return len(set(seen.values())) == len(seen)


def test_world_to_cell_floor_semantics():
    rmap = make_map(4, 3, cell_size=2.0, origin=(10.0, -4.0))
    assert world_to_cell(rmap, (10.0, -4.0)) == (0, 0)
    assert world_to_cell(rmap, (11.99, -2.01)) == (0, 0)
    assert world_to_cell(rmap, (12.0, -2.0)) == (1, 1)
    assert world_to_cell(rmap, (17.9, 1.9)) == (3, 2)
    with pytest.raises(OffMapError):
        world_to_cell(rmap, (9.99, 0.0))
    with pytest.raises(OffMapError):
        world_to_cell(rmap, (10.0, 2.0))


def test_cell_center_inverts_world_to_cell():
    rmap = make_map(5, 5, cell_size=0.5, origin=(-1.0, 3.0))
    for cell in [(0, 0), (2, 3), (4, 4)]:
        assert world_to_cell(rmap, rmap.cell_center(cell)) == cell


def test_regions_match_bfs_oracle():
    rng = np.random.default_rng(17)
    for _ in range(25):
        w = int(rng.integers(2, 14))
        h = int(rng.integers(2, 14))
        mask = rng.random((w, h)) < 0.62
        if not mask.any():
            mask[0, 0] = True
        rmap = make_map(w, h, walkable=mask.astype(int))
        assert regions_equivalent(rmap.regions, bfs_regions(mask))
        # region labels agree with point queries
        for i in range(w):
            for j in range(h):
                want = -1 if not mask[i, j] else rmap.regions[i, j]
                assert connected_region(rmap, (i, j)) == want


def test_diagonal_cells_are_separate_regions():
    mask = np.zeros((2, 2), dtype=int)
    mask[0, 0] = mask[1, 1] = 1
    rmap = make_map(2, 2, walkable=mask)
    assert connected_region(rmap, (0, 0)) != connected_region(rmap, (1, 1))
    assert connected_region(rmap, (0, 1)) == -1


def test_is_walkable_and_bounds():
    mask = np.ones((3, 3), dtype=int)
    mask[1, 1] = 0
    rmap = make_map(3, 3, walkable=mask)
    assert rmap.is_walkable((0, 0))
    assert not rmap.is_walkable((1, 1))
    assert not rmap.is_walkable((-1, 0))
    assert not rmap.is_walkable((3, 2))


def test_rle_walkable_expansion():
    spec = make_map_spec(4, 2)
    spec["walkable"] = [[1, 3], [0, 2], [1, 3]]
    rmap = build_map(spec)
    # k = j*width + i: cells 3,4 (i=3 j=0 and i=0 j=1) are blocked
    assert not rmap.is_walkable((3, 0))
    assert not rmap.is_walkable((0, 1))
    assert rmap.is_walkable((2, 0)) and rmap.is_walkable((1, 1))


def test_map_spec_errors():
    with pytest.raises(ParseError, match="walkable mask has"):
        build_map({"origin": [0, 0], "cell_size": 1.0, "width": 2,
                   "height": 2, "walkable": [1, 1, 1]})
    with pytest.raises(MapError, match="empty"):
        build_map(make_map_spec(2, 2, walkable=np.zeros((2, 2), dtype=int)))
    with pytest.raises(MapError):
        build_map({"origin": [0, 0], "cell_size": -1.0, "width": 2,
                   "height": 2, "walkable": [1, 1, 1, 1]})
    with pytest.raises(ParseError, match="adjacency"):
        build_map(make_map_spec(2, 2, adjacency=[{"from": 0}]))


def test_covisibility_from_polygons_matches_shapely(tmp_path):
    cams = identity_calibration(tmp_path / "cal.json", [0])
    tri = [[0.5, 0.5], [7.5, 0.5], [0.5, 7.5]]
    cams.cameras[0] = type(cams.cameras[0])(
        0, np.eye(3), np.array(tri, dtype=float))
    rmap = build_map(make_map_spec(8, 8), cameras=cams)
    poly = Polygon(tri)
    for i in range(8):
        for j in range(8):
            want = poly.covers(Point(i + 0.5, j + 0.5))
            got = 0 in covisible_cameras(rmap, (i, j))
            assert got == want, (i, j)


def test_points_in_polygon_boundary_closed():
    square = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])
    pts = np.array([
        [2.0, 2.0],    # interior
        [0.0, 0.0],    # vertex
        [2.0, 0.0],    # edge
        [4.0, 4.0],    # far vertex
        [4.0001, 2.0],  # just outside
        [-0.1, 2.0],
    ])
    got = points_in_polygon(pts, square)
    assert got.tolist() == [True, True, True, True, False, False]


def test_covisibility_from_fov_cells_and_warnings():
    fov = {0: [(0, 0), (1, 0)], 1: [(1, 0), (1, 1)], 2: []}
    rmap = make_map(2, 2, fov_cells=fov)
    assert covisible_cameras(rmap, (0, 0)) == frozenset({0})
    assert covisible_cameras(rmap, (1, 0)) == frozenset({0, 1})
    assert covisible_cameras(rmap, (0, 1)) == frozenset()
    assert rmap.camera_ids() == [0, 1, 2]
    assert any("camera 2" in w for w in rmap.warnings)
    with pytest.raises(OffMapError):
        covisible_cameras(rmap, (5, 5))


def test_map_json_round_trip(tmp_path):
    mask = np.ones((6, 4), dtype=int)
    mask[2, 1] = mask[3, 1] = 0
    rmap = make_map(6, 4, walkable=mask,
                    fov_cells={0: [(0, 0), (1, 1)], 3: [(5, 3)]},
                    adjacency=[{"from": 0, "to": 3, "mean_transit_s": 2.5,
                                "std_s": 0.5, "weight": 2.0}],
                    cell_size=0.25, origin=(1.0, 2.0))
    import json
    p = tmp_path / "map.json"
    p.write_text(json.dumps(map_to_json(rmap)))
    back = load_map(p)
    np.testing.assert_array_equal(back.walkable, rmap.walkable)
    np.testing.assert_array_equal(back.regions >= 0, rmap.regions >= 0)
    assert back.cell_size == rmap.cell_size and back.origin == rmap.origin
    for cam in (0, 3):
        np.testing.assert_array_equal(back.covis[cam], rmap.covis[cam])
    assert len(back.adjacency) == 1
    e = back.adjacency[0]
    assert (e.from_id, e.to_id, e.mean_transit_s, e.std_s, e.weight) == \
        (0, 3, 2.5, 0.5, 2.0)


def make_det(cam, foot, frame=0, conf=0.9, embedding_index=-1):
    # box whose bottom-center lands exactly on `foot` in pixel space
    l, b = foot[0] - 1.0, foot[1]
    return Detection(frame=frame, camera_id=cam,
                     box=np.array([l, b - 4.0, 2.0, 4.0]), confidence=conf,
                     embedding_index=embedding_index)


def test_encode_frame_accept_and_reject(tmp_path):
    cams = identity_calibration(tmp_path / "cal.json", [0, 1], extent=8.0)
    fov = {0: [(i, j) for i in range(4) for j in range(8)],
           1: [(i, j) for i in range(4, 8) for j in range(8)]}
    rmap = make_map(8, 8, fov_cells=fov)
    table = np.arange(12, dtype=np.float32).reshape(3, 4) + 1.0
    dets = [
        make_det(0, (1.5, 2.5), embedding_index=1),   # cell (1, 2), covis 0
        make_det(0, (6.5, 2.5)),                      # cell in cam1's half
        make_det(1, (6.5, 2.5)),                      # fine
        make_det(0, (-3.0, 2.0)),                     # off-map
        make_det(7, (1.0, 1.0)),                      # unknown camera
    ]
    results, rejects = encode_frame(dets, rmap, cams, embeddings={0: table})
    assert len(results) == 2 and len(rejects) == 3
    r0 = results[0]
    assert r0.cell == (1, 2)
    assert r0.ground == pytest.approx((1.5, 2.5))
    assert r0.covisible == frozenset({0})
    np.testing.assert_array_equal(r0.embedding, table[1])
    assert results[1].embedding is None  # no table for camera 1
    reasons = sorted(reason for _, reason in rejects)
    assert reasons[0] == "cell not covisible from observing camera"
    assert reasons[1] == "off-map"
    assert reasons[2].startswith("unknown camera")
