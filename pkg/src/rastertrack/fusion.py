"""Track-query propagation and decision fusion.

Each identity keeps a short bank of track queries (current + last M). A
frame step runs scaled dot-product self-attention over the stacked bank,
then a residual LayerNorm/FFN/LayerNorm refinement, yielding the next
query. Decision fusion multiplies the feature / space-time / map channels
and thresholds the product; cal_score turns fused channels plus box
regression quality into the association loss used as a diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateError, DimError, FormatError, NumericError,
                     OrderError)

_LN_EPS = 1e-5
_P_FLOOR = 1e-6
_PROJ_SEED = 0x5EC0DE  # frozen: query projection must be run-independent
_POS_BUCKETS = 16


@dataclass(frozen=True)
class TrackQuery:
    identity: int
    vector: np.ndarray
    frame: int


@dataclass
class QueryBank:
    """Per identity, the newest m + 1 queries in frame order."""

    m: int = 4
    queues: dict[int, list[TrackQuery]] = field(default_factory=dict)

    def bank_of(self, identity: int) -> list[TrackQuery]:
        return self.queues.get(identity, [])


def push_query(bank: QueryBank, query: TrackQuery) -> None:
    """Append a query; frames must strictly increase per identity.

    Raises DimError when the vector dim differs from the identity's
    existing queries and OrderError on non-increasing frame indices. The
    oldest entry is evicted beyond m + 1.
    """
    vec = np.asarray(query.vector, dtype=np.float64).ravel()
    queue = bank.queues.setdefault(query.identity, [])
    if queue:
        if queue[-1].vector.shape != vec.shape:
            raise DimError(
                f"identity {query.identity}: query dim {vec.shape[0]} != "
                f"{queue[-1].vector.shape[0]}")
        if query.frame <= queue[-1].frame:
            raise OrderError(
                f"identity {query.identity}: frame {query.frame} not after "
                f"{queue[-1].frame}")
    queue.append(TrackQuery(query.identity, vec, query.frame))
    while len(queue) > bank.m + 1:
        queue.pop(0)


def attend(queries: list[TrackQuery]) -> np.ndarray:
    """Scaled dot-product self-attention over the stacked bank.

    A = row_softmax(tgt tgt^T / sqrt(d)); returns the last row of A @ tgt
    (the attention-weighted current query). A single query is returned
    unchanged; identical rows yield uniform weights.
    """
    if not queries:
        raise DegenerateError("attend requires at least one query")
    tgt = np.stack([q.vector for q in queries]).astype(np.float64)
    d = tgt.shape[1]
    scores = tgt @ tgt.T / math.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    out = weights @ tgt
    if not np.isfinite(out).all():
        raise NumericError("non-finite attention output")
    return out[-1]


def attention_weights(queries: list[TrackQuery]) -> np.ndarray:
    """The full softmax attention matrix (rows sum to 1); used by checks."""
    tgt = np.stack([q.vector for q in queries]).astype(np.float64)
    scores = tgt @ tgt.T / math.sqrt(tgt.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=1, keepdims=True)


@dataclass
class RefineWeights:
    """FFN + two LayerNorm parameter set; FC2 == 0 is the identity init."""

    fc1_w: np.ndarray  # (d_ff, d)
    fc1_b: np.ndarray  # (d_ff,)
    fc2_w: np.ndarray  # (d, d_ff)
    fc2_b: np.ndarray  # (d,)
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray

    @classmethod
    def identity_init(cls, d: int, d_ff: int | None = None,
                      seed: int = _PROJ_SEED) -> "RefineWeights":
        """FC2 zero map: refine() degenerates to stacked LayerNorms."""
        d_ff = 4 * d if d_ff is None else d_ff
        rng = np.random.default_rng(seed)
        return cls(
            fc1_w=rng.standard_normal((d_ff, d)) / math.sqrt(d),
            fc1_b=np.zeros(d_ff),
            fc2_w=np.zeros((d, d_ff)),
            fc2_b=np.zeros(d),
            ln1_scale=np.ones(d), ln1_shift=np.zeros(d),
            ln2_scale=np.ones(d), ln2_shift=np.zeros(d),
        )

    @classmethod
    def load(cls, path, d: int, d_ff: int | None = None) -> "RefineWeights":
        """Read the documented flat little-endian f32 layout.

        Order: fc1_w (d_ff*d), fc1_b (d_ff), fc2_w (d*d_ff), fc2_b (d),
        ln1_scale (d), ln1_shift (d), ln2_scale (d), ln2_shift (d);
        matrices row-major.
        """
        d_ff = 4 * d if d_ff is None else d_ff
        data = np.fromfile(Path(path), dtype="<f4").astype(np.float64)
        expected = 2 * d_ff * d + d_ff + 5 * d
        if data.size != expected:
            raise FormatError(
                f"{path}: expected {expected} f32 values for d={d}, "
                f"d_ff={d_ff}; found {data.size}")
        off = 0

        def take(shape):
            nonlocal off
            size = int(np.prod(shape))
            chunk = data[off:off + size].reshape(shape)
            off += size
            return chunk

        return cls(take((d_ff, d)), take(d_ff), take((d, d_ff)), take(d),
                   take(d), take(d), take(d), take(d))

    def save(self, path) -> None:
        parts = [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
                 self.ln1_scale, self.ln1_shift, self.ln2_scale, self.ln2_shift]
        np.concatenate([p.ravel() for p in parts]).astype("<f4").tofile(Path(path))


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
               eps: float = _LN_EPS) -> np.ndarray:
    mean = x.mean()
    var = x.var()
    return (x - mean) / math.sqrt(var + eps) * scale + shift


def refine(q_sa: np.ndarray, q_mean: np.ndarray,
           weights: RefineWeights) -> np.ndarray:
    """Residual LayerNorm + FFN refinement of the attended query.

    tgt = LN1(q_sa + q_mean); out = LN2(FC2(relu(FC1(tgt))) + tgt).
    Raises NumericError if any intermediate goes non-finite.
    """
    q_sa = np.asarray(q_sa, dtype=np.float64).ravel()
    q_mean = np.asarray(q_mean, dtype=np.float64).ravel()
    if q_sa.shape != q_mean.shape:
        raise DimError("refine inputs differ in dim")
    tgt = layer_norm(q_sa + q_mean, weights.ln1_scale, weights.ln1_shift)
    hidden = np.maximum(weights.fc1_w @ tgt + weights.fc1_b, 0.0)
    out = layer_norm(weights.fc2_w @ hidden + weights.fc2_b + tgt,
                     weights.ln2_scale, weights.ln2_shift)
    if not np.isfinite(out).all():
        raise NumericError("non-finite refine output")
    return out


_pos_proj_cache: dict[tuple[int, int], np.ndarray] = {}


def build_track_query(embedding: np.ndarray, cell, confidence: float,
                      dim: int) -> np.ndarray:
    """Project (embedding, pooled cell one-hot, confidence) to a d query.

    The cell position encoding one-hots (i mod 16, j mod 16); the projection
    matrix is drawn once from a frozen seed so queries are reproducible
    across runs and processes.
    """
    emb = np.asarray(embedding, dtype=np.float64).ravel()
    pos = np.zeros(2 * _POS_BUCKETS)
    pos[cell[0] % _POS_BUCKETS] = 1.0
    pos[_POS_BUCKETS + cell[1] % _POS_BUCKETS] = 1.0
    feat = np.concatenate([emb, pos, [float(confidence)]])
    key = (feat.size, dim)
    proj = _pos_proj_cache.get(key)
    if proj is None:
        rng = np.random.default_rng(_PROJ_SEED)
        proj = rng.standard_normal((dim, feat.size)) / math.sqrt(feat.size)
        _pos_proj_cache[key] = proj
    return proj @ feat


@dataclass(frozen=True)
class FusionInput:
    """The three decision channels, floored away from zero at creation."""

    p_feature: float
    p_spacetime: float
    p_map: float

    def __post_init__(self):
        for name in ("p_feature", "p_spacetime", "p_map"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DegenerateError(f"{name}={v} outside [0, 1]")
            object.__setattr__(self, name, max(v, _P_FLOOR))


def fuse_probabilities(fusion: FusionInput,
                       threshold: float = 0.05) -> tuple[float, bool]:
    """Product of the three channels and the accept decision (>= threshold)."""
    fused = fusion.p_feature * fusion.p_spacetime * fusion.p_map
    return fused, fused >= threshold


def box_iou(a, b) -> float:
    """IoU of two ltwh boxes; disjoint boxes give 0."""
    ax1, ay1, aw, ah = a
    bx1, by1, bw, bh = b
    iw = min(ax1 + aw, bx1 + bw) - max(ax1, bx1)
    ih = min(ay1 + ah, by1 + bh) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


def cal_score(targets, total_targets: int, lambda_cls: float = 1.0,
              lambda_l1: float = 1.0, lambda_iou: float = 1.0) -> float:
    """Association loss over (FusionInput, predicted box, true box) triples.

    Per target: lambda_cls * (-log fused) + lambda_l1 * |b - b'|_1 +
    lambda_iou * (1 - IoU); the score is the sum divided by the total
    target count. Zero total targets is degenerate.
    """
    if total_targets <= 0:
        raise DegenerateError("cal_score needs a positive target count")
    loss = 0.0
    for fusion, box, gt_box in targets:
        fused, _ = fuse_probabilities(fusion)
        box = np.asarray(box, dtype=np.float64)
        gt = np.asarray(gt_box, dtype=np.float64)
        loss += lambda_cls * (-math.log(fused))
        loss += lambda_l1 * float(np.abs(box - gt).sum())
        loss += lambda_iou * (1.0 - box_iou(box, gt))
    return loss / total_targets
