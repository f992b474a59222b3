"""Space-time logic tracking.

Single-camera frame-to-frame assignment (Hungarian over gated ground
distance + appearance), identity alignment inside overlapping FOVs,
camera-to-camera transit statistics, tracklet confidence weights, and the
global tracklet graph solved by successive shortest augmenting paths.

Graph convention: per tracklet an internal (red) edge carries the log-odds
weight -log(c/(1-c)); time-respecting link (green) edges carry
-k_a log P_a - k_t log P_t; source/sink (black) edges are free. All edges
have unit capacity, so the f cheapest node-disjoint paths are the f
trajectories; the flow amount is swept and the cheapest total kept.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, InternalError, ModelError
from .kernels import solve_assignment
from .rastermap import FramePosResult, RasterMap
from .spatial import ClusterSet

_BIG = 1e6
_P_FLOOR = 1e-6
_CONF_EPS = 1e-4


@dataclass
class Tracklet:
    """Closed single-camera fragment entering the global graph."""

    tracklet_id: int
    camera_id: int
    identity: int
    start_frame: int
    end_frame: int
    start_time: float
    end_time: float
    alphas: list[float] = field(default_factory=list)
    embedding_sum: np.ndarray | None = None
    start_cell: tuple[int, int] | None = None
    end_cell: tuple[int, int] | None = None
    records: list = field(default_factory=list)  # opaque pipeline payload

    def mean_embedding(self) -> np.ndarray | None:
        if self.embedding_sum is None:
            return None
        norm = np.linalg.norm(self.embedding_sum)
        if norm < 1e-12:
            return None
        return self.embedding_sum / norm


@dataclass(frozen=True)
class TrackView:
    """What frame_assign needs to know about a live track."""

    ground: tuple[float, float]
    embedding: np.ndarray | None = None
    head_ground: tuple[float, float] | None = None


@dataclass
class AssignResult:
    matches: list[tuple[int, int, float, float]]  # (track, det, cost, similarity)
    births: list[int]
    deaths: list[int]


def frame_assign(tracks: list[TrackView], fprs: list[FramePosResult],
                 rmap: RasterMap, w_dist: float = 0.5, w_app: float = 0.5,
                 gate_cells: float = 2.5,
                 min_similarity: float = 0.25) -> AssignResult:
    """One camera, one frame: optimal track/detection assignment.

    Pair cost is w_dist * dist / (gate_cells * cell_size) + w_app * (1 -
    cosine); ground distance uses the head-point projection as a fallback
    channel (min of body and head distances) when both sides carry heads.
    Pairs beyond the gate, or whose cosine falls below min_similarity when
    both sides carry embeddings (a stranger walking into a vacated spot),
    are infeasible. Unmatched detections are births, unmatched tracks
    deaths (the caller applies miss tolerance).
    """
    nt, nd = len(tracks), len(fprs)
    if nt == 0 or nd == 0:
        return AssignResult([], list(range(nd)), list(range(nt)))
    gate = gate_cells * rmap.cell_size
    if gate <= 0:
        raise DegenerateError("assignment gate must be positive")
    cost = np.full((nt, nd), _BIG)
    sims = np.zeros((nt, nd))
    for ti, trk in enumerate(tracks):
        for di, fpr in enumerate(fprs):
            dist = math.hypot(trk.ground[0] - fpr.ground[0],
                              trk.ground[1] - fpr.ground[1])
            if trk.head_ground is not None and fpr.head_ground is not None:
                dist = min(dist, math.hypot(
                    trk.head_ground[0] - fpr.head_ground[0],
                    trk.head_ground[1] - fpr.head_ground[1]))
            if dist > gate:
                continue
            p_a = 0.0
            if trk.embedding is not None and fpr.embedding is not None:
                na = np.linalg.norm(trk.embedding)
                nb = np.linalg.norm(fpr.embedding)
                if na > 1e-12 and nb > 1e-12:
                    p_a = float(np.clip(
                        np.dot(trk.embedding, fpr.embedding) / (na * nb), -1, 1))
                    if p_a < min_similarity:
                        continue
            c = w_dist * (dist / gate) + w_app * (1.0 - p_a)
            cost[ti, di] = c
            denom = w_dist + w_app
            sims[ti, di] = max(0.0, min(1.0, 1.0 - c / denom)) if denom > 0 else 0.0

    rows, cols = solve_assignment(cost)
    matches = []
    matched_t, matched_d = set(), set()
    for ti, di in zip(rows, cols):
        if cost[ti, di] >= _BIG / 2:
            continue
        matches.append((int(ti), int(di), float(cost[ti, di]), float(sims[ti, di])))
        matched_t.add(int(ti))
        matched_d.add(int(di))
    births = [d for d in range(nd) if d not in matched_d]
    deaths = [t for t in range(nt) if t not in matched_t]
    return AssignResult(matches, births, deaths)


@dataclass(frozen=True)
class AlignAction:
    det_index: int
    old_identity: int
    new_identity: int
    new_confidence: float


def align_overlapping(clusters: ClusterSet, fprs: list[FramePosResult],
                      identities: dict[int, int], confidences: dict[int, float],
                      rmap: RasterMap, thresh_scale: float = 3.0,
                      ) -> list[AlignAction]:
    """Share one identity among co-observations of a target in overlap zones.

    Within each cluster, cross-camera detections closer than thresh_scale *
    cell_size are aligned nearest-first, each detection pairing with at
    most one per other camera so that neighboring targets in an overlap
    zone cannot chain into one component. Each aligned component adopts
    the identity of its highest-confidence member (ties: smaller identity)
    and the component's maximum confidence. Returns the changes; callers
    apply them. No detection receives two identities (components are
    disjoint).
    """
    limit = thresh_scale * rmap.cell_size
    actions: list[AlignAction] = []
    for cluster in clusters:
        members = cluster.members
        if len(members) < 2:
            continue
        uf = {m: m for m in members}

        def find(x):
            while uf[x] != x:
                uf[x] = uf[uf[x]]
                x = uf[x]
            return x

        pairs = []
        for ai in range(len(members)):
            for bi in range(ai + 1, len(members)):
                a, b = members[ai], members[bi]
                if fprs[a].camera_id == fprs[b].camera_id:
                    continue
                dist = math.hypot(fprs[a].ground[0] - fprs[b].ground[0],
                                  fprs[a].ground[1] - fprs[b].ground[1])
                if dist < limit:
                    pairs.append((dist, a, b))
        partner: set[tuple[int, int]] = set()  # (det, other camera) taken
        for _, a, b in sorted(pairs):
            ca, cb = fprs[a].camera_id, fprs[b].camera_id
            if (a, cb) in partner or (b, ca) in partner:
                continue
            partner.add((a, cb))
            partner.add((b, ca))
            uf[find(a)] = find(b)

        comps: dict[int, list[int]] = {}
        for m in members:
            comps.setdefault(find(m), []).append(m)
        for comp in comps.values():
            if len(comp) < 2:
                continue
            winner = min(comp, key=lambda m: (-confidences[m], identities[m]))
            new_id = identities[winner]
            new_conf = max(confidences[m] for m in comp)
            for m in sorted(comp):
                if identities[m] != new_id or confidences[m] != new_conf:
                    actions.append(AlignAction(
                        det_index=m, old_identity=identities[m],
                        new_identity=new_id, new_confidence=new_conf))
    return actions


@dataclass
class TransitModel:
    """Per ordered camera pair, a normalized transit-time histogram."""

    bin_s: float
    max_s: float
    table: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    floor: float = _P_FLOOR

    @classmethod
    def from_adjacency(cls, rmap: RasterMap, bin_s: float = 1.0,
                       max_s: float = 60.0) -> "TransitModel":
        """Gaussian-derived histograms from map adjacency statistics."""
        model = cls(bin_s=bin_s, max_s=max_s)
        nbins = model._nbins()
        edges = np.arange(nbins + 1) * bin_s
        for e in rmap.adjacency:
            sd = max(e.std_s, 1e-6)
            cdf = 0.5 * (1.0 + np.vectorize(math.erf)(
                (edges - e.mean_transit_s) / (sd * math.sqrt(2.0))))
            raw = np.diff(cdf)
            model.table[(e.from_id, e.to_id)] = model._normalize(raw)
        return model

    @classmethod
    def from_observations(cls, samples, bin_s: float = 1.0,
                          max_s: float = 60.0, laplace: float = 1.0,
                          ) -> "TransitModel":
        """Histogram with Laplace smoothing from (from, to, dt) samples."""
        if laplace < 0:
            raise ModelError("laplace smoothing must be >= 0")
        model = cls(bin_s=bin_s, max_s=max_s)
        nbins = model._nbins()
        counts: dict[tuple[int, int], np.ndarray] = {}
        for c1, c2, dt in samples:
            if dt <= 0 or dt > max_s:
                continue
            b = min(int(dt / bin_s), nbins - 1)
            counts.setdefault((c1, c2), np.zeros(nbins))[b] += 1
        for pair, cnt in counts.items():
            smoothed = cnt + laplace
            model.table[pair] = model._normalize(smoothed / smoothed.sum())
        return model

    def _nbins(self) -> int:
        nbins = int(round(self.max_s / self.bin_s))
        if nbins < 1:
            raise ModelError("transit support must hold at least one bin")
        return nbins

    def _normalize(self, raw: np.ndarray) -> np.ndarray:
        # exact floor + exact unit sum: mix the floor in analytically
        total = raw.sum()
        base = raw / total if total > 0 else np.full_like(raw, 1.0 / raw.size)
        return self.floor + (1.0 - raw.size * self.floor) * base


def transit_probability(model: TransitModel, from_cam: int, to_cam: int,
                        dt: float) -> float:
    """Probability mass for a camera handover taking dt seconds.

    Non-positive dt is impossible (0.0); unknown pairs and dt beyond the
    support return the smoothing floor.
    """
    if dt <= 0:
        return 0.0
    hist = model.table.get((from_cam, to_cam))
    if hist is None or dt > model.max_s:
        return model.floor
    b = min(int(dt / model.bin_s), hist.size - 1)
    return float(hist[b])


def tracklet_confidence(tracklet: Tracklet, eps: float = _CONF_EPS) -> float:
    """c = sum(alpha_k) / span-in-ticks, clamped to [eps, 1 - eps]."""
    if not tracklet.alphas:
        return eps
    span = tracklet.end_frame - tracklet.start_frame
    c = sum(tracklet.alphas) / span if span > 0 else tracklet.alphas[0]
    return min(max(c, eps), 1.0 - eps)


def tracklet_weight(confidence: float) -> float:
    """Red-edge weight -log(c / (1 - c)); negative for confident tracklets."""
    if not 0.0 < confidence < 1.0:
        raise DegenerateError(f"confidence {confidence} outside (0, 1)")
    return -math.log(confidence / (1.0 - confidence))


def link_weight(p_a: float, p_t: float, k_a: float = 1.0,
                k_t: float = 1.0) -> float:
    """Green-edge weight -k_a log P_a - k_t log P_t, inputs clamped to [1e-6, 1]."""
    pa = min(max(p_a, _P_FLOOR), 1.0)
    pt = min(max(p_t, _P_FLOOR), 1.0)
    return -k_a * math.log(pa) - k_t * math.log(pt)


@dataclass
class Trajectory:
    tracklet_ids: list[int]
    identity: int
    cost: float


@dataclass
class TrajectorySet:
    trajectories: list[Trajectory] = field(default_factory=list)
    total_cost: float = 0.0
    _by_tracklet: dict[int, int] = field(default_factory=dict)

    def trajectory_of(self, tracklet_id: int) -> Trajectory | None:
        idx = self._by_tracklet.get(tracklet_id)
        return None if idx is None else self.trajectories[idx]

    def covered(self, tracklet_id: int) -> bool:
        return tracklet_id in self._by_tracklet


class _FlowNet:
    """Unit-capacity min-cost flow, successive shortest augmenting paths.

    Shortest paths are found with queue-based Bellman-Ford label correction
    (handles the negative internal edges); the successive-shortest-path
    invariant keeps the residual graph free of negative cycles, which is
    guarded by a relaxation counter.
    """

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self.to: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(n_nodes)]

    def add_edge(self, u: int, v: int, cap: int, cost: float) -> int:
        eid = len(self.to)
        self.to.append(v)
        self.cap.append(cap)
        self.cost.append(cost)
        self.adj[u].append(eid)
        self.to.append(u)
        self.cap.append(0)
        self.cost.append(-cost)
        self.adj[v].append(eid + 1)
        return eid

    def shortest_path(self, s: int, t: int):
        dist = [math.inf] * self.n
        prev_edge = [-1] * self.n
        relaxed = [0] * self.n
        in_queue = [False] * self.n
        dist[s] = 0.0
        queue = deque([s])
        in_queue[s] = True
        while queue:
            u = queue.popleft()
            in_queue[u] = False
            du = dist[u]
            for eid in self.adj[u]:
                if self.cap[eid] <= 0:
                    continue
                v = self.to[eid]
                nd = du + self.cost[eid]
                if nd < dist[v] - 1e-12:
                    dist[v] = nd
                    prev_edge[v] = eid
                    relaxed[v] += 1
                    if relaxed[v] > self.n:
                        raise InternalError("negative cycle in tracklet graph")
                    if not in_queue[v]:
                        queue.append(v)
                        in_queue[v] = True
        if not math.isfinite(dist[t]):
            return None, math.inf
        return prev_edge, dist[t]

    def augment(self, s: int, t: int, prev_edge: list[int]) -> None:
        v = t
        while v != s:
            eid = prev_edge[v]
            self.cap[eid] -= 1
            self.cap[eid ^ 1] += 1
            v = self.to[eid ^ 1]


def solve_global_graph(tracklets: list[Tracklet],
                       model: TransitModel | None = None,
                       k_a: float = 1.0, k_t: float = 1.0,
                       link_gate_s: float = 60.0) -> TrajectorySet:
    """Partition tracklets into minimum-total-weight trajectories.

    Builds the unit-capacity graph (red internal edges with log-odds
    weights, green time-respecting link edges, free source/sink edges) and
    augments one path at a time while the next shortest path has negative
    cost; path costs are non-decreasing, so this keeps the sweep's minimum
    total. Tracklets not on any chosen path are uncovered (false-alarm
    semantics) and keep their own identity downstream. Identities propagate
    along each path from its earliest tracklet.
    """
    n = len(tracklets)
    out = TrajectorySet()
    if n == 0:
        return out

    reds = [tracklet_weight(tracklet_confidence(t)) for t in tracklets]
    means = [t.mean_embedding() for t in tracklets]
    links: list[tuple[int, int, float]] = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dt = tracklets[j].start_time - tracklets[i].end_time
            if dt <= 0 or dt > link_gate_s:
                continue
            if means[i] is not None and means[j] is not None:
                p_a = float(np.clip(means[i] @ means[j], -1.0, 1.0))
            else:
                p_a = 1.0  # no appearance evidence, no appearance penalty
            if model is not None:
                p_t = transit_probability(
                    model, tracklets[i].camera_id, tracklets[j].camera_id, dt)
            else:
                p_t = 1.0
            links.append((i, j, link_weight(p_a, p_t, k_a, k_t)))

    # nodes: 0 = source, 1 = sink, 2 + 2k = start_k, 3 + 2k = end_k
    net = _FlowNet(2 + 2 * n)
    red_eid = []
    for k in range(n):
        net.add_edge(0, 2 + 2 * k, 1, 0.0)
        red_eid.append(net.add_edge(2 + 2 * k, 3 + 2 * k, 1, reds[k]))
        net.add_edge(3 + 2 * k, 1, 1, 0.0)
    for i, j, w in links:
        net.add_edge(3 + 2 * i, 2 + 2 * j, 1, w)

    total = 0.0
    for _ in range(n):  # at most n node-disjoint paths exist
        prev_edge, path_cost = net.shortest_path(0, 1)
        if prev_edge is None or path_cost >= 0.0:
            break  # augmenting further cannot lower the total
        net.augment(0, 1, prev_edge)
        total += path_cost

    # walk saturated source edges to reconstruct the chosen paths
    start_node = {2 + 2 * k: k for k in range(n)}
    for k in range(n):
        head_eid = red_eid[k] - 2  # the source edge added just before red_k
        if net.cap[head_eid] != 0:
            continue  # k is not a path head
        chain = []
        cur = k
        cost_sum = 0.0
        while True:
            chain.append(tracklets[cur].tracklet_id)
            cost_sum += reds[cur]
            if net.cap[red_eid[cur]] != 0:
                raise InternalError("path reached an uncovered tracklet")
            nxt = None
            for eid in net.adj[3 + 2 * cur]:
                if eid % 2 == 0 and net.cap[eid] == 0:  # saturated forward edge
                    target = net.to[eid]
                    if target == 1:
                        nxt = -1
                    else:
                        nxt = start_node[target]
                        cost_sum += net.cost[eid]
                    break
            if nxt is None:
                raise InternalError("flow conservation violated on a path")
            if nxt == -1:
                break
            cur = nxt
        out.trajectories.append(Trajectory(
            tracklet_ids=chain, identity=tracklets[k].identity,
            cost=cost_sum))

    covered = [k for k in range(n) if net.cap[red_eid[k]] == 0]
    if sum(len(t.tracklet_ids) for t in out.trajectories) != len(covered):
        raise InternalError("trajectory reconstruction lost a tracklet")
    out.total_cost = total
    for idx, traj in enumerate(out.trajectories):
        for tid in traj.tracklet_ids:
            out._by_tracklet[tid] = idx
    return out
