"""Run configuration: one flat record of every tunable the tracker reads.

Loaded from JSON with strict key checking (a typo fails loudly instead of
silently running defaults). The canonical hash covers every field except
the output directory, so runs into different directories still report the
same configuration identity in their manifests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ParseError


@dataclass
class RunConfig:
    # dataset paths
    map_path: str = "map.json"
    calibration_path: str = "calibration.json"
    detections_dir: str = "det"
    embeddings_dir: str | None = "embed"
    out_dir: str | None = None
    fps: float = 5.0
    seed: int = 0
    embed_dim: int = 128

    # ablation toggles
    use_feature: bool = True
    use_logic: bool = True
    use_retrospective: bool = True

    # raster / transfer
    sigma_cells: float = 1.0
    cluster_radius_cells: float = 1.5
    n_max: int = 5
    stay_prob: float = 0.0

    # feature bank
    momentum: float = 0.1
    accept_threshold: float = 0.6
    local_radius_cells: int = 3
    max_age_s: float = 30.0
    handover_grace_s: float = 1.0
    handover_top_k: int = 2

    # space-time logic
    k_a: float = 1.0
    k_t: float = 1.0
    link_gate_s: float = 60.0
    miss_tolerance: int = 5
    gate_cells: float = 2.5
    thresh_scale: float = 3.0
    w_dist: float = 0.5
    w_app: float = 0.5
    min_similarity: float = 0.25
    transit_bin_s: float = 1.0
    transit_max_s: float = 60.0

    # query refinement / fusion
    stcn_dim: int = 64
    stcn_bank_m: int = 4
    stcn_dff: int | None = None  # None: 4 * stcn_dim
    stcn_weights: str | None = None
    stcn_feedback: bool = False
    fuse_threshold: float = 0.05
    lambda_cls: float = 1.0
    lambda_l1: float = 1.0
    lambda_iou: float = 1.0

    # retrospective
    retrospective: bool = True
    conf_decay: float = 0.99

    def replaced(self, **overrides) -> "RunConfig":
        unknown = set(overrides) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("out_dir")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: config root must be an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ParseError(f"{path}: unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw)
