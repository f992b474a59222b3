"""Release gate: the properties a build must hold, each under a time budget.

One test per property, so `pytest -v` prints one pass/fail line per row.
Each block also prints its measured runtime (visible with -s). Solver
properties are checked against exhaustive oracles, end-to-end properties
against generated benchmarks with known-perfect solutions.
"""

import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest

from rastertrack.config import RunConfig
from rastertrack.cli import run_ablation
from rastertrack.features import FeatureBank, update_bank
from rastertrack.fusion import (
    FusionInput,
    TrackQuery,
    attend,
    attention_weights,
    cal_score,
    layer_norm,
)
from rastertrack.kernels import solve_assignment
from rastertrack.logic import (
    TransitModel,
    solve_global_graph,
    tracklet_confidence,
    tracklet_weight,
)
from rastertrack.metrics import compute_idf1, compute_mota, load_track_rows, run_eval
from rastertrack.pipeline import run_track
from rastertrack.retro import HistoryRecord, TrackHistory, reverse_pass
from rastertrack.spatial import build_transfer_matrix, n_step, probability_raster

from conftest import make_map
from test_kernels import brute_force_assignment
from test_logic import adjacency_map, enumerate_partitions, make_tracklet, solver_links
from test_pipeline import config_for, eval_result


@contextmanager
def budget(name: str, seconds: float):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"{name}: FAIL ({time.perf_counter() - t0:.2f}s)")
        raise
    dt = time.perf_counter() - t0
    verdict = "PASS" if dt < seconds else "FAIL"
    print(f"{name}: {verdict} ({dt:.2f}s, budget {seconds:.0f}s)")
    assert dt < seconds, f"{name} took {dt:.2f}s, budget {seconds:.0f}s"


def _rows(frames, ident, boxes):
    out = np.zeros((len(frames), 7))
    out[:, 0] = frames
    out[:, 1] = ident
    out[:, 2:6] = boxes
    out[:, 6] = ident
    return out


def test_identity_metrics_reproduce_split_track_fixture():
    # one truth track, its prediction splits identity at frame 9000 and
    # dies at 9793: the exact counts pin precision, recall, and F1
    with budget("identity-metrics split-track fixture", 1.0):
        box = (0.0, 0.0, 10.0, 10.0)
        gt = _rows(np.arange(10035), 1, box)
        pred = np.vstack([_rows(np.arange(9000), 1, box),
                          _rows(np.arange(9000, 9793), 2, box)])
        r = compute_idf1(gt, pred)
        assert r.idtp == 9000
        assert r.idp == pytest.approx(0.919049, abs=1e-4)
        assert r.idr == pytest.approx(0.896903, abs=1e-4)
        assert r.idf1 == pytest.approx(0.907841, abs=1e-4)


def test_assignment_optimal_on_500_random_instances():
    # integer-valued costs make "exact" meaningful: the selected total
    # must equal the permutation minimum to the last bit
    with budget("assignment vs brute force (500 instances)", 10.0):
        rng = np.random.default_rng(20240817)
        for _ in range(500):
            n = int(rng.integers(1, 8))
            m = int(rng.integers(1, 8))
            cost = rng.integers(-50, 200, size=(n, m)).astype(np.float64)
            rows, cols = solve_assignment(cost)
            got = float(cost[rows, cols].sum())
            assert len(rows) == min(n, m)
            assert got == brute_force_assignment(cost)


def test_global_graph_optimal_on_200_random_instances():
    # trajectory sets must match exhaustive enumeration of all disjoint
    # time-respecting chains exactly, not merely in cost
    with budget("global graph vs chain enumeration (200 instances)", 30.0):
        rng = np.random.default_rng(8117)
        model = TransitModel.from_adjacency(adjacency_map(),
                                            bin_s=1.0, max_s=60.0)
        for case in range(200):
            n = int(rng.integers(1, 7))
            starts = np.sort(rng.uniform(0, 30, n)) + np.arange(n) * 1e-3
            tracklets = [
                make_tracklet(k, float(starts[k]),
                              float(starts[k]) + float(rng.uniform(0.2, 6.0)),
                              float(rng.uniform(0.05, 1.0)),
                              emb=rng.normal(size=3),
                              cam=int(rng.integers(0, 2)))
                for k in range(n)
            ]
            use_model = model if case % 2 else None
            reds = [tracklet_weight(tracklet_confidence(t)) for t in tracklets]
            want_cost, want_chains = enumerate_partitions(
                n, reds, solver_links(tracklets, model=use_model))
            want_cost = min(want_cost, 0.0)

            got = solve_global_graph(tracklets, model=use_model)
            got_chains = frozenset(
                tuple(t.tracklet_ids) for t in got.trajectories)
            assert got_chains == want_chains
            assert got.total_cost == pytest.approx(want_cost, abs=1e-9)


def test_transfer_chains_are_stochastic_semigroups():
    with budget("transfer-chain semigroup (100 matrices)", 5.0):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n_cam = int(rng.integers(1, 11))
            adj = []
            for a in range(n_cam):
                outs = rng.choice(n_cam, size=int(rng.integers(1, n_cam + 1)),
                                  replace=False)
                adj.extend({"from": int(a), "to": int(b),
                            "mean_transit_s": 5.0, "std_s": 1.0,
                            "weight": float(rng.uniform(0.1, 5.0))}
                           for b in outs)
            rmap = make_map(2, 2, adjacency=adj)
            tm = build_transfer_matrix(rmap, camera_ids=range(n_cam),
                                       stay_prob=float(rng.uniform(0, 0.9)))
            i = int(rng.integers(0, 6))
            j = int(rng.integers(0, 6))
            for k in (1, i + j, 10):
                np.testing.assert_allclose(n_step(tm, k).sum(axis=1), 1.0,
                                           rtol=0, atol=1e-9)
            np.testing.assert_allclose(n_step(tm, i) @ n_step(tm, j),
                                       n_step(tm, i + j), rtol=0, atol=1e-9)


def test_probability_rasters_normalize_and_respect_walls():
    with budget("probability rasters (1000 draws)", 5.0):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            w = int(rng.integers(3, 9))
            h = int(rng.integers(3, 9))
            mask = (rng.random((w, h)) < 0.7).astype(int)
            mask[w // 2, h // 2] = 1
            walk = np.argwhere(mask == 1)
            center = tuple(int(v) for v in walk[rng.integers(len(walk))])
            rmap = make_map(w, h, walkable=mask)
            raster = probability_raster(center, rmap,
                                        sigma=float(rng.uniform(0.3, 3.0)))
            assert raster.values.sum() == pytest.approx(1.0, abs=1e-9)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    cell = (center[0] + di, center[1] + dj)
                    if not (0 <= cell[0] < w and 0 <= cell[1] < h) or \
                            not mask[cell]:
                        assert raster.mass(cell) == 0.0
        # all-walkable unit-sigma kernel: the center carries
        # 1 / (1 + 4 e^-0.5 + 4 e^-1) of the mass
        flat = make_map(7, 7)
        center_w = probability_raster((3, 3), flat, sigma=1.0).mass((3, 3))
        assert center_w == pytest.approx(0.2042, abs=1e-3)


def test_attention_and_norm_invariants():
    with budget("attention and normalization invariants", 5.0):
        rng = np.random.default_rng(5)
        for _ in range(50):
            k = int(rng.integers(1, 6))
            d = int(rng.integers(2, 17))
            queries = [TrackQuery(1, rng.normal(size=d), f)
                       for f in range(k)]
            W = attention_weights(queries)
            np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-6)
        single = TrackQuery(1, rng.normal(size=8), 0)
        np.testing.assert_allclose(attend([single]), single.vector)
        same = [TrackQuery(1, np.full(4, 0.3), f) for f in range(3)]
        np.testing.assert_allclose(attention_weights(same), 1.0 / 3.0)
        for _ in range(50):
            d = int(rng.integers(2, 65))
            y = layer_norm(rng.normal(3.0, 10.0, size=d),
                           np.ones(d), np.zeros(d))
            assert abs(y.mean()) < 1e-6
            assert y.var() == pytest.approx(1.0, abs=1e-4)


def test_zero_noise_benchmarks_solve_exactly(overlap_bundle, gap_bundle,
                                             tmp_path):
    # clean data admits a perfect solution; the full stack must find it
    for bundle in (overlap_bundle, gap_bundle):
        with budget(f"end-to-end {bundle.spec.name}", 60.0):
            res = run_track(config_for(bundle),
                            out_dir=tmp_path / bundle.spec.name)
            report = eval_result(bundle, res)
            assert report["overall"]["mota"] == 1.0
            assert report["overall"]["idf1"] == 1.0
            assert report["cross_camera"]["idf1"] == 1.0
            assert report["cross_camera"]["mcta"] == 1.0


def test_stage_ablation_is_monotone(tmp_path):
    # each stage may only help on the noisy five-camera course, and the
    # whole stack must beat the bare transform strictly
    with budget("stage ablation on zigzag-5cam", 120.0):
        table = run_ablation("zigzag-5cam", None, tmp_path)
        assert table["seed"] == 2024
        idf1 = [row["idf1"] for row in table["rows"]]
        assert len(idf1) == 4
        for a, b in itertools.pairwise(idf1):
            assert b >= a
        assert idf1[-1] > idf1[0]


def test_reverse_pass_repairs_split_identity():
    # forward pass minted 9, later merged it into 5; the backward sweep
    # must erase the switch it left behind
    with budget("reverse pass on a split identity", 10.0):
        e = np.array([1.0, 0.0, 0.0])
        bank = FeatureBank(momentum=0.1)
        update_bank(bank, 5, e, (0, 0), 0, 0.0)
        records = tuple(
            HistoryRecord(frame=f, camera_id=0, det_index=0,
                          box=(2.0 * f, 0.0, 4.0, 8.0),
                          identity=9 if f < 10 else 5, confidence=0.9,
                          p_spacetime=1.0, p_map=1.0, embedding=e)
            for f in range(20))
        history = TrackHistory(records, final_ids={9: 5}, bank=bank)

        gt = np.array([[f, 5, 2.0 * f, 0.0, 4.0, 8.0] for f in range(20)])
        def as_rows(h):
            return np.array([[r.frame, r.identity, *r.box]
                             for r in h.records])

        fixed, corrections = reverse_pass(history)
        before = compute_mota(gt, as_rows(history))
        after = compute_mota(gt, as_rows(fixed))
        assert corrections and all(c.new_identity == 5 for c in corrections)
        assert after.idsw < before.idsw
        f1_before = compute_idf1(gt, as_rows(history)).idf1
        f1_after = compute_idf1(gt, as_rows(fixed)).idf1
        assert f1_after > f1_before
        assert after.idsw == 0 and f1_after == 1.0

        again, second = reverse_pass(fixed)
        assert second == []
        assert again.records == fixed.records


def test_association_loss_flags_any_perturbation():
    with budget("association loss sensitivity", 1.0):
        box = (10.0, 20.0, 4.0, 8.0)
        perfect = [(FusionInput(1.0, 1.0, 1.0), box, box)]
        assert cal_score(perfect, 1) == 0.0
        worse = [
            [(FusionInput(0.9, 1.0, 1.0), box, box)],
            [(FusionInput(1.0, 1.0, 1.0), (10.5, 20.0, 4.0, 8.0), box)],
            [(FusionInput(1.0, 1.0, 1.0), (10.0, 20.0, 3.0, 8.0), box)],
        ]
        for targets in worse:
            assert cal_score(targets, 1) > 0.0


def test_repeated_runs_are_bit_identical(zigzag_bundle, tmp_path):
    with budget("repeated-run determinism", 120.0):
        cfg = config_for(zigzag_bundle)
        first = run_track(cfg, out_dir=tmp_path / "a")
        second = run_track(cfg, out_dir=tmp_path / "b")
        names = sorted(p.name for p in first.out_dir.iterdir())
        assert names == sorted(p.name for p in second.out_dir.iterdir())
        for name in names:
            if name == "manifest.json":
                continue
            assert (first.out_dir / name).read_bytes() == \
                (second.out_dir / name).read_bytes(), name
        m1 = dict(first.manifest)
        m2 = dict(second.manifest)
        m1.pop("wall_time_s")
        m2.pop("wall_time_s")
        assert m1 == m2
