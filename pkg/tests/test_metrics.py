"""Evaluation measures on hand-checked fixtures.

The identification measures use the truth-to-result bijection; fixtures
below are small enough that idtp/idp/idr are exact fractions computed by
hand.
"""

import numpy as np
import pytest

from rastertrack.errors import DegenerateError, EvalError, ParseError
from rastertrack.metrics import (
    clear_matching,
    compute_idf1,
    compute_mcta,
    compute_mota,
    load_track_rows,
    report_text,
    run_eval,
)

BOX = (0.0, 0.0, 10.0, 10.0)


def rows(entries):
    """entries: (frame, id, box, gid); gid defaults to id."""
    out = []
    for e in entries:
        frame, tid, box = e[0], e[1], e[2]
        gid = e[3] if len(e) > 3 else tid
        out.append((frame, tid, *box, gid))
    return np.asarray(out, dtype=np.float64) if out else np.zeros((0, 7))


def track(tid, frames, box=BOX, gid=None):
    return [(f, tid, box, tid if gid is None else gid) for f in frames]


def test_idf1_split_track_fixture():
    # one true identity; the prediction splits it at frame 9000 and the
    # second fragment runs 793 frames: the bijection keeps the long half
    gt = rows(track(1, range(10035)))
    pred = rows(track(1, range(9000)) + track(2, range(9000, 9793)))
    res = compute_idf1(gt, pred)
    assert res.idtp == 9000
    assert res.idp == pytest.approx(9000 / 9793)
    assert res.idr == pytest.approx(9000 / 10035)
    assert res.idf1 == pytest.approx(2 * 9000 / (10035 + 9793))


def test_idf1_perfect_and_empty():
    gt = rows(track(1, range(10)))
    res = compute_idf1(gt, rows(track(5, range(10))))
    assert res.idf1 == 1.0 and res.idp == 1.0 and res.idr == 1.0
    res = compute_idf1(gt, np.zeros((0, 7)))
    assert res.idf1 == 0.0 and res.idfn == 10 and res.idtp == 0


def test_idf1_bijection_one_pred_per_gt():
    # two predicted ids shadow one true id; only one may pair with it
    gt = rows(track(1, range(10)))
    shifted = (0.2, 0.0, 10.0, 10.0)  # IoU 0.96, above the gate
    pred = rows(track(3, range(10)) + track(4, range(10), box=shifted))
    res = compute_idf1(gt, pred)
    assert res.idtp == 10
    assert res.idp == pytest.approx(0.5)
    assert res.idr == 1.0


def test_idf1_permutation_invariance():
    rng = np.random.default_rng(3)
    gt = rows(track(1, range(20)) +
              track(2, range(5, 25), box=(30, 0, 10, 10)))
    pred = rows(track(1, range(18)) +
                track(2, range(5, 25), box=(30.5, 0, 10, 10)) +
                track(3, range(18, 20)))
    base = compute_idf1(gt, pred)
    relabel = {1: 71, 2: 12, 3: 55}
    shuffled = pred.copy()
    shuffled[:, 1] = [relabel[int(v)] for v in pred[:, 1]]
    got = compute_idf1(gt, shuffled)
    assert got == base


def test_idf1_namespace_scopes_per_camera_ids():
    gt = {0: rows(track(1, range(10))),
          1: rows(track(1, range(10), box=(50, 0, 10, 10)))}
    pred = {0: rows(track(1, range(10))),
            1: rows(track(7, range(10), box=(50, 0, 10, 10)))}
    scoped = compute_idf1(gt, pred, namespace=True)
    assert scoped.idf1 == 1.0
    # un-scoped, gt id 1 spans both cameras and can keep only one pairing
    pooled = compute_idf1(gt, pred, namespace=False)
    assert pooled.idtp == 10
    assert pooled.idf1 == pytest.approx(0.5)


def test_mota_counts_misses_fps_switches():
    gt = rows(track(1, range(10)))
    # 2 missed frames, 1 spurious box, identity flips once at frame 7
    pred = rows(track(1, range(8)) + track(2, range(8, 10)) +
                [(0, 9, (40, 40, 5, 5))])
    pred = pred[pred[:, 0] != 6]  # drop frames 6 from both fragments
    pred = pred[~((pred[:, 0] == 5) & (pred[:, 1] == 1))]
    res = compute_mota(gt, pred)
    assert res.gt_total == 10
    assert res.fn == 2
    assert res.fp == 1
    assert res.idsw == 1
    assert res.mota == pytest.approx(1.0 - (2 + 1 + 1) / 10)


def test_mota_continuity_preference():
    # at frame 1 a newcomer sits exactly on the truth box while the
    # incumbent drifts: the incumbent must keep the match (no switch)
    gt = rows(track(1, [0, 1]))
    pred = rows([(0, 10, BOX), (1, 10, (1.0, 0.0, 10.0, 10.0)),
                 (1, 20, BOX)])
    res = clear_matching(gt, pred)
    assert res.idsw == 0
    assert res.correspondences[1][1] == 10
    assert res.fp == 1  # the newcomer goes unmatched


def test_mota_switch_across_gap():
    gt = rows(track(1, range(10)))
    pred = rows(track(5, range(4)) + track(6, range(7, 10)))
    res = clear_matching(gt, pred)
    assert res.idsw == 1  # 5 -> (gap) -> 6 still counts
    assert res.fn == 3


def test_mota_requires_ground_truth():
    with pytest.raises(DegenerateError):
        compute_mota(np.zeros((0, 7)), rows(track(1, range(3))))


def test_duplicate_ids_rejected():
    bad = rows([(0, 1, BOX), (0, 1, (20, 20, 5, 5))])
    with pytest.raises(EvalError, match="duplicate"):
        clear_matching(bad, np.zeros((0, 7)))


def two_camera_fixture(handover_gid=100, split_within=False):
    far = (80.0, 0.0, 10.0, 10.0)
    gt = {0: rows(track(7, range(10), gid=7)),
          1: rows(track(7, range(40, 50), box=far, gid=7))}
    if split_within:
        pred0 = rows(track(1, range(5), gid=100) +
                     track(2, range(5, 10), gid=200))
    else:
        pred0 = rows(track(1, range(10), gid=100))
    pred = {0: pred0,
            1: rows(track(3, range(40, 50), box=far, gid=handover_gid))}
    return gt, pred


def test_mcta_perfect_handovers():
    gt, pred = two_camera_fixture()
    res = compute_mcta(gt, pred)
    assert res.f1 == 1.0
    assert res.within_links == 18 and res.within_mismatches == 0
    assert res.handover_links == 1 and res.handover_mismatches == 0
    assert res.mcta == 1.0


def test_mcta_handover_mismatch_zeroes_term():
    gt, pred = two_camera_fixture(handover_gid=200)
    res = compute_mcta(gt, pred)
    assert res.f1 == 1.0
    assert res.handover_links == 1 and res.handover_mismatches == 1
    assert res.mcta == 0.0


def test_mcta_within_mismatch_fraction():
    gt, pred = two_camera_fixture(split_within=True)
    res = compute_mcta(gt, pred)
    assert res.within_links == 18 and res.within_mismatches == 1
    assert res.handover_mismatches == 1  # cam0 closes as 200, cam1 opens 100
    assert res.mcta == pytest.approx(1.0 * (17 / 18) * 0.0)
    # and with a consistent handover id the product is just the within term
    gt2, pred2 = two_camera_fixture(handover_gid=200, split_within=True)
    res2 = compute_mcta(gt2, pred2)
    assert res2.handover_mismatches == 0
    assert res2.mcta == pytest.approx(17 / 18)


def test_mcta_camera_set_mismatch():
    gt, pred = two_camera_fixture()
    with pytest.raises(EvalError, match="camera sets"):
        compute_mcta(gt, {0: pred[0]})


def test_load_track_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(
        "# comment\n"
        "3,2,0,0,5,5,0.9,1,-1,-1,-1,-1,44\n"
        "1,7,1,1,4,4\n"
        "\n"
        "1,2,2,2,3,3,0.5,1,-1,-1,-1,-1,44\n")
    got = load_track_rows(p)
    assert got.shape == (3, 7)
    # sorted by frame then id; gid falls back to the local id
    np.testing.assert_allclose(got[0], [1, 2, 2, 2, 3, 3, 44])
    np.testing.assert_allclose(got[1], [1, 7, 1, 1, 4, 4, 7])
    np.testing.assert_allclose(got[2], [3, 2, 0, 0, 5, 5, 44])
    p.write_text("1,2,3\n")
    with pytest.raises(ParseError, match="columns"):
        load_track_rows(p)
    p.write_text("1,2,a,0,5,5\n")
    with pytest.raises(ParseError):
        load_track_rows(p)


def test_run_eval_report_shape_and_aggregation():
    gt, pred = two_camera_fixture()
    report = run_eval(gt, pred)
    assert set(report) == {"per_camera", "overall", "cross_camera"}
    assert set(report["per_camera"]) == {"0", "1"}
    cam0 = report["per_camera"]["0"]
    assert set(cam0) == {"idf1", "idp", "idr", "mota", "fn", "fp", "idsw", "gt"}
    assert cam0["mota"] == 1.0 and cam0["idf1"] == 1.0
    overall = report["overall"]
    assert overall["gt"] == 20
    assert overall["fn"] == sum(report["per_camera"][c]["fn"] for c in "01")
    assert overall["mota"] == pytest.approx(1.0)
    assert overall["idf1"] == 1.0  # namespaced per-camera ids
    cross = report["cross_camera"]
    assert cross["idf1"] == 1.0 and cross["mcta"] == 1.0
    assert cross["handover_links"] == 1

    with pytest.raises(EvalError):
        run_eval({}, {})
    with pytest.raises(EvalError):
        run_eval(gt, {0: pred[0]})


def test_report_text_layout():
    gt, pred = two_camera_fixture()
    text = report_text(run_eval(gt, pred))
    lines = text.splitlines()
    assert lines[0].startswith("sequence")
    assert lines[1].startswith("cam0")
    assert lines[2].startswith("cam1")
    assert lines[3].startswith("OVERALL")
    assert "cross-camera" in lines[-1]
    assert "MCTA 1.000000" in lines[-1]
