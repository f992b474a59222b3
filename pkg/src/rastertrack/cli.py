"""Command line front end: track, eval, synth, map build, ablate.

Exit codes: 0 success, 2 usage errors, 3 parse/format errors in input
files, 4 runtime failures inside the pipeline.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import (CalibrationError, EvalError, FormatError, MapError,
                     ParseError, RasterTrackError, SpecError, UsageError)
from .metrics import load_track_rows, report_text, run_eval
from .pipeline import run_track
from .rastermap import build_map, map_to_json
from .geometry import load_calibration
from .synth import generate_scenario, spec_from_json, standard_benchmarks

_PARSE_ERRORS = (ParseError, FormatError, CalibrationError, MapError,
                 SpecError, EvalError)
_CAM_FILE = re.compile(r"^cam(\d+)\.csv$")

# Cumulative stage sets, in reporting order: the temporal transformer
# baseline, then feature matching, then space-time logic, then the
# retrospective reverse pass.
ABLATION_ROWS = [
    ("transform", dict(use_feature=False, use_logic=False,
                       use_retrospective=False)),
    ("+feature", dict(use_feature=True, use_logic=False,
                      use_retrospective=False)),
    ("+logic", dict(use_feature=True, use_logic=True,
                    use_retrospective=False)),
    ("+retrospective", dict(use_feature=True, use_logic=True,
                            use_retrospective=True)),
]


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return value if p.is_absolute() else str(base / p)


def resolve_config_paths(cfg: RunConfig, base: Path) -> RunConfig:
    """Make the config's relative paths relative to its own file."""
    return cfg.replaced(
        map_path=_resolve(base, cfg.map_path),
        calibration_path=_resolve(base, cfg.calibration_path),
        detections_dir=_resolve(base, cfg.detections_dir),
        embeddings_dir=_resolve(base, cfg.embeddings_dir),
        stcn_weights=_resolve(base, cfg.stcn_weights),
        out_dir=_resolve(base, cfg.out_dir),
    )


def load_tracks_dir(path) -> dict[int, "np.ndarray"]:
    """All cam<k>.csv files in a directory, keyed by camera id."""
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"{path}: not a directory")
    out = {}
    for child in sorted(path.iterdir()):
        m = _CAM_FILE.match(child.name)
        if m:
            out[int(m.group(1))] = load_track_rows(child)
    if not out:
        raise FormatError(f"{path}: no cam<k>.csv files found")
    return out


def _resolve_benchmark(name_or_file: str, seed: int | None):
    benches = standard_benchmarks()
    if name_or_file in benches:
        spec = benches[name_or_file]
    elif Path(name_or_file).is_file():
        spec = spec_from_json(name_or_file)
    else:
        raise UsageError(
            f"unknown benchmark {name_or_file!r} and no such file; "
            f"known benchmarks: {sorted(benches)}")
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    return spec


def run_ablation(bench: str, seed: int | None, out_dir) -> dict:
    """Run the four cumulative stage sets on one benchmark and score them."""
    benches = standard_benchmarks()
    if bench not in benches:
        raise UsageError(f"unknown benchmark {bench!r}; "
                         f"known benchmarks: {sorted(benches)}")
    spec = benches[bench]
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    out_dir = Path(out_dir)
    bundle = generate_scenario(spec, out_dir / "data")
    gt = load_tracks_dir(bundle.out_dir / "gt")

    rows = []
    for label, toggles in ABLATION_ROWS:
        cfg = RunConfig(
            map_path=str(bundle.map_path),
            calibration_path=str(bundle.calibration_path),
            detections_dir=str(bundle.out_dir / "det"),
            embeddings_dir=str(bundle.out_dir / "embed"),
            fps=spec.fps, seed=spec.seed, **toggles)
        if spec.tracker_overrides:
            cfg = cfg.replaced(**spec.tracker_overrides)
        run_dir = out_dir / "runs" / label.lstrip("+")
        run_track(cfg, run_dir)
        report = run_eval(gt, load_tracks_dir(run_dir))
        rows.append({
            "stages": label, **toggles,
            "idf1": report["overall"]["idf1"],
            "mota": report["overall"]["mota"],
            "cross_idf1": report["cross_camera"]["idf1"],
            "mcta": report["cross_camera"]["mcta"],
        })
    return {"benchmark": spec.name, "seed": spec.seed, "rows": rows}


def ablation_text(table: dict) -> str:
    mark = {True: "x", False: " "}
    lines = [f"benchmark {table['benchmark']}  seed {table['seed']}",
             f"{'stages':<16}{'Feature':>8}{'Logic':>7}{'Retro':>7}"
             f"{'IDF1':>10}{'MOTA':>10}{'MCTA':>10}"]
    for row in table["rows"]:
        lines.append(
            f"{row['stages']:<16}{mark[row['use_feature']]:>8}"
            f"{mark[row['use_logic']]:>7}{mark[row['use_retrospective']]:>7}"
            f"{row['idf1']:>10.6f}{row['mota']:>10.6f}{row['mcta']:>10.6f}")
    return "\n".join(lines)


def _cmd_track(args) -> int:
    cfg = load_config(args.config)
    cfg = resolve_config_paths(cfg, Path(args.config).resolve().parent)
    result = run_track(cfg, args.out)
    m = result.manifest
    print(f"tracked {m['detections']} detections over "
          f"{len(m['cameras'])} cameras -> {result.out_dir}")
    print(f"identities {m['identities']}  tracklets {m['tracklets']}  "
          f"suppressed {m['suppressed']}  corrections {m['corrections']}")
    return 0


def _cmd_eval(args) -> int:
    gt = load_tracks_dir(args.gt)
    pred = load_tracks_dir(args.pred)
    report = run_eval(gt, pred)
    text = report_text(report)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def _cmd_synth(args) -> int:
    spec = _resolve_benchmark(args.spec, args.seed)
    bundle = generate_scenario(spec, args.out)
    print(f"scenario {spec.name}: {bundle.detections_written} detections "
          f"({bundle.clutter_written} clutter), "
          f"{bundle.gt_rows_written} gt rows -> {bundle.out_dir}")
    return 0


def _cmd_map_build(args) -> int:
    cameras = None
    if args.calibration is not None:
        cameras = load_calibration(args.calibration)
    path = Path(args.spec)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") \
            from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    rmap = build_map(spec, cameras, source=str(path))
    for note in rmap.warnings:
        print(f"warning: {note}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(map_to_json(rmap), sort_keys=True,
                              separators=(",", ":")) + "\n")
    walk = int(rmap.walkable.sum())
    print(f"built {rmap.width}x{rmap.height} map, {walk} walkable cells, "
          f"{len(rmap.covis)} cameras -> {out}")
    return 0


def _cmd_ablate(args) -> int:
    table = run_ablation(args.bench, args.seed, args.out)
    out = Path(args.out)
    (out / "ablation.json").write_text(
        json.dumps(table, indent=2, sort_keys=True) + "\n")
    text = ablation_text(table)
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rastertrack",
        description="multi-camera tracking on semantic raster maps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run the tracker over a dataset")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", default=None,
                   help="output directory (default: config out_dir)")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth directory")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--out", default=None, help="report output directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--spec", required=True,
                   help="benchmark name or scenario spec JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("map", help="map utilities")
    map_sub = p.add_subparsers(dest="map_command", required=True)
    mb = map_sub.add_parser("build", help="validate and bake a map spec")
    mb.add_argument("--spec", required=True, help="map spec JSON")
    mb.add_argument("--out", required=True, help="baked map JSON")
    mb.add_argument("--calibration", default=None,
                    help="camera calibration for FOV covisibility")
    mb.set_defaults(func=_cmd_map_build)

    p = sub.add_parser("ablate", help="run the stage-set ablation table")
    p.add_argument("--bench", required=True, help="benchmark name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _PARSE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except RasterTrackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
