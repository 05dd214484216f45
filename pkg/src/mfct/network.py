"""Topology state, candidate criteria, grey CH election and overlapping clusters."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import grey
from .channel import Kinematics, RadioParams, link_expiration_time, snr_db
from .errors import DeadNode, EmptyRegion, InvalidParameter, InvalidTopology

HOP_CAP = 32
CRITERIA = ("e_re", "hc", "d", "let", "snr")
CRITERIA_DIRECTIONS = (
    grey.Direction.BENEFIT,
    grey.Direction.COST,
    grey.Direction.COST,
    grey.Direction.BENEFIT,
    grey.Direction.BENEFIT,
)


class _Unreachable:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Unreachable"

    def __reduce__(self):
        return (_Unreachable, ())


Unreachable = _Unreachable()


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidTopology(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(eq=False)
class SensorNode:
    id: int
    kin: Kinematics
    energy: float
    alive: bool = True
    memberships: set = field(default_factory=set)
    primary_ch: Optional[int] = None
    was_ch_last_epoch: bool = False
    is_ch: bool = False
    # transmitter busy-until time, used for per-node FIFO serialization
    tx_free: float = 0.0

    def __post_init__(self):
        if self.energy < 0:
            raise InvalidParameter("energy must be nonnegative")
        self.alive = self.energy > 0

    @property
    def pos(self) -> tuple[float, float]:
        return (self.kin.x, self.kin.y)


@dataclass(eq=False)
class FogNode:
    id: int
    kin: Kinematics
    region: Rect
    service_time: float = 0.005
    parent: object = None
    children: list = field(default_factory=list)
    queue: deque = field(default_factory=deque)
    busy_until: float = 0.0

    @property
    def pos(self) -> tuple[float, float]:
        return (self.kin.x, self.kin.y)


@dataclass
class Cluster:
    id: int
    ch: int
    members: set
    anchor_fog: int
    grade: float = 1.0


@dataclass(frozen=True)
class CriteriaVector:
    e_re: float
    hc: float
    d: float
    let: float
    snr: float

    def as_row(self) -> list[float]:
        return [self.e_re, self.hc, self.d, self.let, self.snr]


@dataclass(frozen=True)
class ElectionParams:
    energy_threshold: float = 0.05
    p_ch: float = 0.1
    comm_radius: float = 50.0
    let_clamp: float = 2000.0
    hop_cap: int = HOP_CAP
    radio: RadioParams = RadioParams()
    grey: grey.GreyParams = grey.GreyParams()
    weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    # "grey" ranks eligibles; "random" is the uniform-choice ablation
    mode: str = "grey"
    seed: int = 0


@dataclass
class ElectionResult:
    chs: list[int]
    grades: dict[int, float]
    relaxation: Optional[str] = None


# --- geometry helpers -----------------------------------------------------

def check_tiling(regions: Sequence[Rect], width: float, height: float, tol: float = 1e-9) -> None:
    """Raise unless ``regions`` tile the field exactly (no gaps, no overlap)."""
    if not regions:
        raise InvalidTopology("no fog regions")
    for r in regions:
        if r.x0 < -tol or r.y0 < -tol or r.x1 > width + tol or r.y1 > height + tol:
            raise InvalidTopology(f"region {r} leaves the field")
    for a in range(len(regions)):
        for b in range(a + 1, len(regions)):
            ra, rb = regions[a], regions[b]
            ox = min(ra.x1, rb.x1) - max(ra.x0, rb.x0)
            oy = min(ra.y1, rb.y1) - max(ra.y0, rb.y0)
            if ox > tol and oy > tol:
                raise InvalidTopology(f"regions {a} and {b} overlap")
    total = math.fsum(r.area for r in regions)
    if abs(total - width * height) > tol * max(1.0, width * height):
        raise InvalidTopology(f"regions cover {total} m^2 of a {width * height} m^2 field")


def grid_shape(count: int) -> tuple[int, int]:
    """Most square (cols, rows) factorization with cols >= rows."""
    rows = int(math.isqrt(count))
    while count % rows:
        rows -= 1
    return count // rows, rows


def grid_fogs(width: float, height: float, count: int, service_time: float = 0.005) -> list[FogNode]:
    cols, rows = grid_shape(count)
    cw, rh = width / cols, height / rows
    fogs = []
    for r in range(rows):
        for c in range(cols):
            rect = Rect(c * cw, r * rh, (c + 1) * cw if c < cols - 1 else width,
                        (r + 1) * rh if r < rows - 1 else height)
            fogs.append(FogNode(
                id=len(fogs),
                kin=Kinematics((rect.x0 + rect.x1) / 2, (rect.y0 + rect.y1) / 2),
                region=rect,
                service_time=service_time,
            ))
    return fogs


def region_of(x: float, y: float, fogs: Sequence[FogNode]) -> Optional[int]:
    """Fog whose region holds ``(x, y)``; shared edges go to the lower id."""
    for f in fogs:
        if f.region.contains(x, y):
            return f.id
    return None


def nearest_fog(node: SensorNode, fogs: Sequence[FogNode]) -> tuple[FogNode, float]:
    best, best_d = None, math.inf
    for f in fogs:
        d = math.hypot(node.kin.x - f.kin.x, node.kin.y - f.kin.y)
        if d < best_d:
            best, best_d = f, d
    return best, best_d


# --- criteria ---------------------------------------------------------------

def hop_count(node: SensorNode, fogs: Sequence[FogNode], all_nodes: Iterable[SensorNode], comm_radius: float):
    """Minimal hops from ``node`` into any fog over the unit-disk graph of alive nodes."""
    if comm_radius <= 0:
        raise InvalidParameter("comm_radius must be positive")
    if not node.alive:
        raise DeadNode(f"node {node.id} is dead")
    alive = [n for n in all_nodes if n.alive and n.id != node.id]
    r2 = comm_radius * comm_radius

    def reaches_fog(n):
        return any((n.kin.x - f.kin.x) ** 2 + (n.kin.y - f.kin.y) ** 2 <= r2 for f in fogs)

    seen = {node.id}
    frontier = deque([(node, 0)])
    while frontier:
        cur, hops = frontier.popleft()
        if reaches_fog(cur):
            return hops + 1
        for n in alive:
            if n.id not in seen and (n.kin.x - cur.kin.x) ** 2 + (n.kin.y - cur.kin.y) ** 2 <= r2:
                seen.add(n.id)
                frontier.append((n, hops + 1))
    return Unreachable


def hop_counts_all(nodes: Sequence[SensorNode], fogs: Sequence[FogNode], comm_radius: float) -> dict:
    """Multi-source BFS from every fog; same answers as :func:`hop_count` per node."""
    alive = [n for n in nodes if n.alive]
    out = {n.id: Unreachable for n in alive}
    if not alive:
        return out
    xy = np.array([n.pos for n in alive])
    fxy = np.array([f.pos for f in fogs])
    r2 = comm_radius * comm_radius
    d2_fog = ((xy[:, None, :] - fxy[None, :, :]) ** 2).sum(axis=2)
    adj = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2) <= r2
    np.fill_diagonal(adj, False)
    level = np.where((d2_fog <= r2).any(axis=1))[0]
    hops = np.full(len(alive), -1)
    hops[level] = 1
    h = 1
    while level.size:
        nxt = np.where(adj[level].any(axis=0) & (hops < 0))[0]
        h += 1
        hops[nxt] = h
        level = nxt
    for k, n in enumerate(alive):
        if hops[k] > 0:
            out[n.id] = int(hops[k])
    return out


def criteria_for(node: SensorNode, fogs: Sequence[FogNode], all_nodes: Iterable[SensorNode],
                 params: ElectionParams, hc=None) -> CriteriaVector:
    """Score one candidate; ``hc`` may be passed in when precomputed."""
    if not node.alive:
        raise DeadNode(f"node {node.id} is dead")
    fog, d = nearest_fog(node, fogs)
    if hc is None:
        hc = hop_count(node, fogs, all_nodes, params.comm_radius)
    hc_value = params.hop_cap if hc is Unreachable else hc
    let = min(link_expiration_time(node.kin, fog.kin, params.comm_radius), params.let_clamp)
    return CriteriaVector(
        e_re=node.energy,
        hc=float(hc_value),
        d=d,
        let=let,
        snr=snr_db(d, params.radio),
    )


# --- election ---------------------------------------------------------------

def ch_quota(p_ch: float, n: int) -> int:
    if n <= 0:
        return 0
    return max(1, math.ceil(p_ch * n - 1e-9))


def _eligible(nodes, threshold, *, respect_rotation, respect_threshold):
    return [
        n for n in nodes
        if n.alive
        and (not respect_threshold or n.energy > threshold)
        and (not respect_rotation or not n.was_ch_last_epoch)
    ]


def elect_cluster_heads(region_nodes: Sequence[SensorNode], fog: FogNode, params: ElectionParams,
                        epoch: int = 0, *, fogs: Sequence[FogNode] = None,
                        all_nodes: Sequence[SensorNode] = None,
                        hop_counts: dict = None, snr_offset: dict = None) -> ElectionResult:
    """Elect this region's cluster heads for ``epoch``.

    Eligible nodes hold more than ``energy_threshold`` joules and were not CH
    in the previous epoch.  If nobody qualifies the rotation rule is dropped
    first, then the energy threshold.  ``result.chs`` lists CH ids best first.
    ``snr_offset`` adds per-node shadowing (dB) to the SNR column.
    """
    fogs = fogs if fogs is not None else [fog]
    all_nodes = all_nodes if all_nodes is not None else region_nodes
    candidates = [n for n in region_nodes if n.alive]
    if not candidates:
        raise EmptyRegion(f"fog {fog.id} has no alive nodes")

    relaxation = None
    eligible = _eligible(candidates, params.energy_threshold, respect_rotation=True, respect_threshold=True)
    if not eligible:
        relaxation = "rotation"
        eligible = _eligible(candidates, params.energy_threshold, respect_rotation=False, respect_threshold=True)
    if not eligible:
        relaxation = "threshold"
        eligible = candidates
    eligible = sorted(eligible, key=lambda n: n.id)
    quota = ch_quota(params.p_ch, len(eligible))

    if params.mode not in ("grey", "random"):
        raise InvalidParameter(f"unknown election mode {params.mode!r}")

    rows = []
    for n in eligible:
        hc = hop_counts.get(n.id, Unreachable) if hop_counts is not None else None
        row = criteria_for(n, fogs, all_nodes, params, hc=hc).as_row()
        if snr_offset:
            row[4] += snr_offset.get(n.id, 0.0)
        rows.append(row)
    matrix = grey.DecisionMatrix(
        values=np.array(rows),
        directions=CRITERIA_DIRECTIONS,
        weights=np.array(params.weights),
        names=CRITERIA,
    )
    order, grades = grey.grey_rank(matrix, params.grey)
    if params.mode == "random":
        # ablation: only the choice changes; grades still drive member preference
        rng = np.random.default_rng([params.seed, 0x5EED, fog.id, epoch])
        order = [int(k) for k in rng.choice(len(eligible), size=quota, replace=False)]
    chs = [eligible[i].id for i in order[:quota]]
    return ElectionResult(
        chs=chs,
        grades={eligible[i].id: float(grades[i]) for i in range(len(eligible))},
        relaxation=relaxation,
    )


def form_overlapping_clusters(chs: Sequence[int], nodes: Sequence[SensorNode], cluster_radius: float,
                              grades: dict = None,
                              anchor_of: Callable[[SensorNode], int] = None) -> list[Cluster]:
    """Attach every alive node to all CHs within ``cluster_radius``.

    The primary CH is the in-range CH with the best grade (then nearest, then
    lower id).  Nodes with no CH in range fall back to the nearest CH.
    Mutates ``memberships``/``primary_ch``/``is_ch`` on the nodes.
    """
    if not chs:
        raise InvalidParameter("need at least one cluster head")
    if cluster_radius <= 0:
        raise InvalidParameter("cluster_radius must be positive")
    grades = grades or {}
    by_id = {n.id: n for n in nodes}
    ch_nodes = [by_id[c] for c in sorted(set(chs))]
    clusters = {
        c.id: Cluster(id=c.id, ch=c.id, members={c.id},
                      anchor_fog=anchor_of(c) if anchor_of else 0,
                      grade=grades.get(c.id, 1.0))
        for c in ch_nodes
    }
    ch_set = set(clusters)
    ch_ids = [c.id for c in ch_nodes]
    cgrade = [grades.get(c, 1.0) for c in ch_ids]
    cxy = np.array([c.pos for c in ch_nodes])
    nxy = np.array([n.pos for n in nodes]).reshape(-1, 2)
    dist = np.hypot(nxy[:, None, 0] - cxy[None, :, 0], nxy[:, None, 1] - cxy[None, :, 1]).tolist()
    all_k = range(len(ch_nodes))
    for n, row in zip(nodes, dist):
        n.memberships = set()
        n.primary_ch = None
        n.is_ch = n.id in ch_set and n.alive
        if not n.alive:
            continue
        if n.is_ch:
            n.memberships = {n.id}
            n.primary_ch = n.id
            continue
        in_range = [k for k in all_k if row[k] <= cluster_radius]
        if in_range:
            best = min(in_range, key=lambda k: (-cgrade[k], row[k], ch_ids[k]))
        else:
            best = min(all_k, key=lambda k: (row[k], ch_ids[k]))
            in_range = [best]
        for k in in_range:
            n.memberships.add(ch_ids[k])
            clusters[ch_ids[k]].members.add(n.id)
        n.primary_ch = ch_ids[best]
    return [clusters[c] for c in sorted(clusters)]


def failover_order(node: SensorNode, clusters: dict) -> list[int]:
    """Node's CH ids in preference order: primary first, then by grade."""
    others = [c for c in node.memberships if c != node.primary_ch]
    others.sort(key=lambda c: (-clusters[c].grade, c))
    return ([node.primary_ch] if node.primary_ch is not None else []) + others


def topology_snapshot(nodes: Sequence[SensorNode], fogs: Sequence[FogNode], clusters: Sequence[Cluster] = ()) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "x": n.kin.x,
                "y": n.kin.y,
                "energy": n.energy,
                "alive": n.alive,
                "is_ch": n.is_ch,
                "primary_ch": n.primary_ch,
                "memberships": sorted(n.memberships),
            }
            for n in nodes
        ],
        "fogs": [
            {
                "id": f.id,
                "x": f.kin.x,
                "y": f.kin.y,
                "region": f.region.as_list(),
                "parent": f.parent if isinstance(f.parent, int) else None,
                "children": list(f.children),
            }
            for f in fogs
        ],
        "clusters": [
            {"id": c.id, "ch": c.ch, "members": sorted(c.members), "anchor_fog": c.anchor_fog, "grade": c.grade}
            for c in clusters
        ],
    }
