"""Command-line behaviour: exit codes, file layout, path resolution."""

import json
from pathlib import Path

import pytest

from rastertrack.cli import ABLATION_ROWS, main
from rastertrack.rastermap import load_map
from rastertrack.synth import generate_scenario, standard_benchmarks


def write_track_config(cfg_dir: Path, **extra) -> Path:
    """Config JSON whose relative paths point at cfg_dir/data."""
    payload = {
        "map_path": "data/map.json",
        "calibration_path": "data/calibration.json",
        "detections_dir": "data/det",
        "embeddings_dir": "data/embed",
        "fps": 5.0,
    }
    payload.update(extra)
    path = cfg_dir / "config.json"
    path.write_text(json.dumps(payload, indent=1))
    return path


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    bundle = generate_scenario(standard_benchmarks()["overlap-handover"],
                               root / "data")
    cfg_path = write_track_config(root, seed=bundle.spec.seed)
    return root, bundle, cfg_path


def test_track_command(cli_workspace, capsys):
    root, bundle, cfg_path = cli_workspace
    out = root / "run"
    assert main(["track", "--config", str(cfg_path), "--out", str(out)]) == 0
    got = capsys.readouterr().out
    assert f"tracked {bundle.detections_written} detections" in got
    assert "2 cameras" in got
    for name in ("cam0.csv", "cam1.csv", "global.csv", "manifest.json"):
        assert (out / name).is_file()


def test_track_resolves_paths_against_config_file(cli_workspace, capsys):
    # relative out_dir in the config lands next to the config file,
    # not in the process working directory
    root, bundle, _ = cli_workspace
    cfg_path = write_track_config(root, out_dir="runs/from-config")
    assert main(["track", "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    assert (root / "runs" / "from-config" / "manifest.json").is_file()


def test_track_without_out_dir_is_usage_error(cli_workspace, capsys):
    root, _, cfg_path = cli_workspace
    cfg_path = write_track_config(root)  # no out_dir key
    assert main(["track", "--config", str(cfg_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_track_missing_embeddings_is_exit_3(cli_workspace, capsys):
    root, _, _ = cli_workspace
    cfg_path = write_track_config(root, embeddings_dir="data/missing-embed")
    rc = main(["track", "--config", str(cfg_path), "--out",
               str(root / "run-missing")])
    err = capsys.readouterr().err
    assert rc == 3
    assert "FormatError" in err
    assert "missing-embed" in err and "cam0" in err


def test_track_broken_config_is_exit_3(tmp_path, capsys):
    bad = tmp_path / "config.json"
    bad.write_text("{not json")
    assert main(["track", "--config", str(bad)]) == 3
    assert "ParseError" in capsys.readouterr().err


def test_eval_command(cli_workspace, capsys):
    root, bundle, _ = cli_workspace
    gt_dir = str(bundle.out_dir / "gt")
    out = root / "report"
    rc = main(["eval", "--gt", gt_dir, "--pred", gt_dir, "--out", str(out)])
    text = capsys.readouterr().out
    assert rc == 0
    assert "OVERALL" in text and "MCTA 1.000000" in text
    report = json.loads((out / "report.json").read_text())
    assert report["overall"]["idf1"] == 1.0
    assert (out / "report.txt").read_text().strip() == text.strip()


def test_eval_round_trips_tracker_output(cli_workspace, capsys):
    root, bundle, cfg_path = cli_workspace
    run_dir = root / "run"
    if not (run_dir / "cam0.csv").is_file():  # run order independence
        assert main(["track", "--config", str(cfg_path),
                     "--out", str(run_dir)]) == 0
    rc = main(["eval", "--gt", str(bundle.out_dir / "gt"),
               "--pred", str(run_dir)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "MCTA 1.000000" in out


def test_eval_empty_pred_dir_is_exit_3(cli_workspace, tmp_path, capsys):
    _, bundle, _ = cli_workspace
    empty = tmp_path / "none"
    empty.mkdir()
    rc = main(["eval", "--gt", str(bundle.out_dir / "gt"),
               "--pred", str(empty)])
    assert rc == 3
    assert "no cam<k>.csv" in capsys.readouterr().err


def test_eval_camera_mismatch_is_exit_3(cli_workspace, tmp_path, capsys):
    _, bundle, _ = cli_workspace
    partial = tmp_path / "partial"
    partial.mkdir()
    src = bundle.gt_paths[0]
    (partial / "cam0.csv").write_text(src.read_text())
    rc = main(["eval", "--gt", str(bundle.out_dir / "gt"),
               "--pred", str(partial)])
    assert rc == 3
    assert "EvalError" in capsys.readouterr().err


def test_synth_benchmark_by_name(tmp_path, capsys):
    out = tmp_path / "scene"
    rc = main(["synth", "--spec", "gap-handover", "--seed", "5",
               "--out", str(out)])
    got = capsys.readouterr().out
    assert rc == 0
    assert "scenario gap-handover" in got
    for name in ("map.json", "calibration.json", "scenario.json"):
        assert (out / name).is_file()
    assert json.loads((out / "scenario.json").read_text())["seed"] == 5


def test_synth_spec_file_reproduces_bundle(tmp_path, capsys):
    first = tmp_path / "a"
    again = tmp_path / "b"
    assert main(["synth", "--spec", "overlap-handover",
                 "--out", str(first)]) == 0
    assert main(["synth", "--spec", str(first / "scenario.json"),
                 "--out", str(again)]) == 0
    capsys.readouterr()
    files = sorted(p.relative_to(first)
                   for p in first.rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (again / rel).read_bytes() == (first / rel).read_bytes()


def test_synth_unknown_benchmark_is_usage_error(tmp_path, capsys):
    rc = main(["synth", "--spec", "no-such-bench", "--out", str(tmp_path)])
    assert rc == 2
    assert "known benchmarks" in capsys.readouterr().err


def test_map_build_command(tmp_path, capsys):
    spec = {
        "width": 4, "height": 3, "cell_size": 1.0, "origin": [0.0, 0.0],
        "walkable": [[1, 12]],
        "adjacency": [{"from": 0, "to": 1, "mean_transit_s": 2.0,
                       "std_s": 0.5}],
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "baked.json"
    rc = main(["map", "build", "--spec", str(spec_path), "--out", str(out)])
    got = capsys.readouterr().out
    assert rc == 0
    assert "built 4x3 map, 12 walkable cells" in got
    rmap = load_map(out)
    assert rmap.width == 4 and rmap.height == 3
    assert rmap.adjacency and (rmap.adjacency[0].from_id,
                               rmap.adjacency[0].to_id) == (0, 1)


def test_map_build_with_calibration(cli_workspace, tmp_path, capsys):
    _, bundle, _ = cli_workspace
    out = tmp_path / "baked.json"
    rc = main(["map", "build", "--spec", str(bundle.map_path),
               "--out", str(out),
               "--calibration", str(bundle.calibration_path)])
    capsys.readouterr()
    assert rc == 0
    rmap = load_map(out)
    assert sorted(rmap.covis) == [0, 1]


def test_map_build_bad_json_is_exit_3(tmp_path, capsys):
    bad = tmp_path / "spec.json"
    bad.write_text("[1, 2,")
    out = tmp_path / "baked.json"
    rc = main(["map", "build", "--spec", str(bad), "--out", str(out)])
    assert rc == 3
    assert "invalid JSON" in capsys.readouterr().err


def test_ablate_command(tmp_path, capsys):
    out = tmp_path / "ablation"
    rc = main(["ablate", "--bench", "overlap-handover", "--out", str(out)])
    text = capsys.readouterr().out
    assert rc == 0
    table = json.loads((out / "ablation.json").read_text())
    assert [r["stages"] for r in table["rows"]] == \
        [label for label, _ in ABLATION_ROWS]
    assert all(0.0 <= r["idf1"] <= 1.0 for r in table["rows"])
    # the full stack solves the clean overlap scene outright
    assert table["rows"][-1]["idf1"] == 1.0
    assert (out / "ablation.txt").is_file()
    assert "stages" in text and "+retrospective" in text
    for label, _ in ABLATION_ROWS:
        assert (out / "runs" / label.lstrip("+") / "manifest.json").is_file()


def test_ablate_unknown_benchmark_is_usage_error(tmp_path, capsys):
    rc = main(["ablate", "--bench", "nope", "--out", str(tmp_path)])
    assert rc == 2
    assert "known benchmarks" in capsys.readouterr().err
