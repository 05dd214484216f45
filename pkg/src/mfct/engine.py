"""Round-driven simulation engine.

Each round runs the selected protocol's transition, then applies node deaths
and records metrics.  Intra-round event times come from a per-hop delay model
(transmission + propagation + FIFO queueing), so the clock is continuous
even though control flow is organized in rounds.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import config as config_mod
from .channel import Kinematics, RadioParams, rx_energy, tx_energy
from .config import ScenarioConfig
from .errors import ConfigError, InvalidParameter
from .fogtree import CLOUD, FogTree, attach_tree, build_tree
from .network import FogNode, Rect, SensorNode, grid_fogs, region_of

SENSOR, FOG, CLOUD_KIND = 0, 1, 2
CLOUD_LABEL = (CLOUD_KIND, 0)

PENDING, DELIVERED, LOST = 0, 1, 2


@dataclass(frozen=True)
class DelayParams:
    bandwidth: float = 250_000.0
    propagation_speed: float = 3e8
    fog_service: float = 0.005
    cloud_service: float = 0.02

    def __post_init__(self):
        for name in ("bandwidth", "propagation_speed", "fog_service", "cloud_service"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameter(f"{name} must be positive, got {v}")


def hop_delay(bits: float, d: float, p: DelayParams, queue_wait: float = 0.0) -> float:
    if bits < 0 or d < 0 or queue_wait < 0:
        raise InvalidParameter("hop_delay inputs must be nonnegative")
    return bits / p.bandwidth + d / p.propagation_speed + queue_wait


def fog_queue_step(server, arrivals) -> list:
    """Serve ``(time, item)`` arrivals FIFO, one ``service_time`` each.

    Returns ``(departure, wait, item)`` triples and advances
    ``server.busy_until``.  ``server`` is any object with ``service_time``,
    ``busy_until`` and a ``queue`` deque (fog nodes and the cloud).
    """
    out = []
    prev = server.busy_until
    last = -math.inf
    for t, item in arrivals:
        if t < last:
            raise InvalidParameter("arrivals must be time-ordered")
        last = t
        server.queue.append(item)
        start = t if t > prev else prev
        prev = start + server.service_time
        out.append((prev, start - t, server.queue.popleft()))
    server.busy_until = prev
    return out


@dataclass
class SimClock:
    round: int = 0
    time: float = 0.0

    def advance(self, t: float) -> None:
        if t > self.time:
            self.time = t


@dataclass(eq=False)
class CloudNode:
    kin: Kinematics
    service_time: float
    busy_until: float = 0.0
    queue: object = field(default_factory=lambda: __import__("collections").deque())

    @property
    def pos(self):
        return (self.kin.x, self.kin.y)


class RandomStreams:
    """Independent generators keyed by ``(seed, tag, *ids)``.

    Drawing from one stream never shifts another, so extra consumers (say, a
    tracing hook) cannot perturb protocol decisions.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache = {}

    def stream(self, tag: str, *ids: int) -> np.random.Generator:
        key = (tag, *ids)
        g = self._cache.get(key)
        if g is None:
            entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, zlib.crc32(tag.encode()), *ids]
            g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
            self._cache[key] = g
        return g


class Request:
    __slots__ = ("rid", "origin", "created", "route", "served_at", "done_at", "status",
                 "via_cloud", "reason", "back")

    def __init__(self, rid, origin, created):
        self.rid = rid
        self.origin = origin
        self.created = created
        self.route = [(SENSOR, origin)]
        self.served_at = None
        self.done_at = None
        self.status = PENDING
        self.via_cloud = False
        self.reason = None
        self.back = 0

    def route_labels(self) -> list[str]:
        names = {SENSOR: "n", FOG: "f"}
        return [CLOUD if k == CLOUD_KIND else f"{names[k]}{i}" for k, i in self.route]


@dataclass
class RoundResult:
    requests: list
    events: list
    charged: list                 # joules actually deducted, one entry per charge
    relaxations: int = 0


class SimState:
    """Mutable topology and bookkeeping owned by a single simulation."""

    def __init__(self, cfg: ScenarioConfig, nodes, fogs, cloud: CloudNode, tree: FogTree):
        self.cfg = cfg
        r = cfg.radio
        self.radio = RadioParams(r.e_elec, r.eps_fs, r.eps_mp, r.e_da, r.tx_power_dbm,
                                 r.pl_ref_db, r.pl_exponent, r.noise_floor_dbm)
        d = cfg.delay
        self.delay = DelayParams(d.bandwidth, d.propagation_speed, d.fog_service, d.cloud_service)
        self.nodes: list[SensorNode] = nodes
        self.fogs: list[FogNode] = fogs
        self.fog_by_id = {f.id: f for f in fogs}
        self.cloud = cloud
        self.tree = tree
        self.streams = RandomStreams(cfg.seed)
        self.clock = SimClock()
        self.clusters = {}
        self.epoch = -1
        self.prev_chs: set = set()
        self.node_region = [region_of(n.kin.x, n.kin.y, fogs) for n in nodes]
        self.proto = {}               # protocol-private scratch (routing tables, centroids)
        self.next_rid = 0
        self.round = -1
        self.round_start = 0.0
        self.kills = {}
        for entry in cfg.faults.kill:
            self.kills.setdefault(entry["round"], []).extend(entry["nodes"])
        self._begin_round()

    # -- per-round buffers ------------------------------------------------
    def _begin_round(self):
        self.requests: list[Request] = []
        self.events: list = []
        self.charged: list[float] = []
        self.relaxations = 0

    def take_round(self) -> RoundResult:
        res = RoundResult(self.requests, self.events, self.charged, self.relaxations)
        self._begin_round()
        return res

    # -- geometry -------------------------------------------------------------
    def pos(self, label):
        kind, i = label
        if kind == SENSOR:
            k = self.nodes[i].kin
        elif kind == FOG:
            k = self.fog_by_id[i].kin
        else:
            k = self.cloud.kin
        return k.x, k.y

    def dist(self, a, b) -> float:
        ax, ay = self.pos(a)
        bx, by = self.pos(b)
        return math.hypot(ax - bx, ay - by)

    # -- energy ---------------------------------------------------------------
    def charge(self, node: SensorNode, joules: float, kind: str) -> None:
        before = node.energy
        after = before - joules
        if after < 0:
            after = 0.0
        node.energy = after
        spent = before - after
        self.charged.append(spent)
        self.events.append((kind, node.id, spent))

    def kill(self, node: SensorNode) -> None:
        """Fault injection: drain the node immediately (booked as a 'fault' charge)."""
        if node.energy > 0:
            self.charge(node, node.energy, "fault")
        node.alive = False

    # -- requests -------------------------------------------------------------
    def new_request(self, node: SensorNode, t: float) -> Request:
        req = Request(self.next_rid, node.id, t)
        self.next_rid += 1
        self.requests.append(req)
        return req

    def lose(self, req: Request, reason: str) -> None:
        req.status = LOST
        req.reason = reason
        self.events.append(("lost", req.origin, reason))

    # -- links ----------------------------------------------------------------
    def transmit(self, sender: SensorNode, receiver, bits: int, ready: float) -> float:
        """Send from a sensor; serializes on its transmitter and charges tx/rx.

        Returns the arrival time at ``receiver`` (a label).
        """
        start = ready if ready >= sender.tx_free else sender.tx_free
        d = self.dist((SENSOR, sender.id), receiver)
        self.charge(sender, tx_energy(bits, d, self.radio), "tx")
        sender.tx_free = start + bits / self.delay.bandwidth
        if receiver[0] == SENSOR and self.nodes[receiver[1]].alive:
            self.charge(self.nodes[receiver[1]], rx_energy(bits, self.radio), "rx")
        arrival = ready + hop_delay(bits, d, self.delay, start - ready)
        self.clock.advance(arrival)
        return arrival

    def relay(self, sender_label, receiver, bits: int, ready: float) -> float:
        """Send from a fog or the cloud (mains powered, no transmit queue)."""
        d = self.dist(sender_label, receiver)
        if receiver[0] == SENSOR:
            self.charge(self.nodes[receiver[1]], rx_energy(bits, self.radio), "rx")
        arrival = ready + hop_delay(bits, d, self.delay)
        self.clock.advance(arrival)
        return arrival

    def respond(self, items) -> None:
        """Carry responses back along each request's recorded route.

        ``items`` are ``(time, label, requests)`` with every request currently
        sitting at ``label`` (its serving fog or the cloud).  Requests sharing
        a next hop travel in one response packet.
        """
        bits = self.cfg.protocol_params.response_bits
        heap = []
        seq = 0
        for t, label, reqs in items:
            for r in reqs:
                r.back = len(r.route) - 1
            heap.append((t, seq, label, reqs))
            seq += 1
        heapq.heapify(heap)
        while heap:
            t, _, label, reqs = heapq.heappop(heap)
            groups = {}
            for r in reqs:
                if r.back == 0:
                    r.done_at = t
                    r.status = DELIVERED
                    continue
                r.back -= 1
                groups.setdefault(r.route[r.back], []).append(r)
            for nxt in sorted(groups):
                if label[0] == SENSOR:
                    arrival = self.transmit(self.nodes[label[1]], nxt, bits, t)
                else:
                    arrival = self.relay(label, nxt, bits, t)
                heapq.heappush(heap, (arrival, seq, nxt, groups[nxt]))
                seq += 1
            self.clock.advance(t)

    def serve_at_cloud(self, arrivals) -> list:
        """FIFO ``(time, requests)`` batches through the cloud.

        Returns response items for :meth:`respond`.
        """
        arrivals = sorted(arrivals, key=lambda a: a[0])
        items = []
        for dep, wait, reqs in fog_queue_step(self.cloud, arrivals):
            arrived = dep - wait - self.cloud.service_time
            for r in reqs:
                r.via_cloud = True
                r.served_at = arrived
            items.append((dep, CLOUD_LABEL, reqs))
        return items

    def alive_nodes(self) -> list[SensorNode]:
        return [n for n in self.nodes if n.alive]


# --- deployment --------------------------------------------------------------

def deploy(cfg: ScenarioConfig) -> SimState:
    streams = RandomStreams(cfg.seed)
    f = cfg.field
    g = streams.stream("deploy")
    xy = g.uniform([0.0, 0.0], [f.width, f.height], size=(f.node_count, 2))
    nodes = []
    for i in range(f.node_count):
        vx = vy = 0.0
        if f.max_speed > 0:
            m = streams.stream("mobility", i)
            speed = m.uniform(0.0, f.max_speed)
            heading = m.uniform(0.0, 2 * math.pi)
            vx, vy = speed * math.cos(heading), speed * math.sin(heading)
        nodes.append(SensorNode(id=i, kin=Kinematics(float(xy[i, 0]), float(xy[i, 1]), vx, vy),
                                energy=f.initial_energy))
    fogs = make_fogs(cfg)
    tree = build_tree(fogs, cfg.fog.branching)
    attach_tree(fogs, tree)
    cloud = CloudNode(kin=Kinematics(*map(float, cfg.fog.cloud)), service_time=cfg.delay.cloud_service)
    return SimState(cfg, nodes, fogs, cloud, tree)


def make_fogs(cfg: ScenarioConfig) -> list[FogNode]:
    if cfg.fog.placement == "grid":
        return grid_fogs(cfg.field.width, cfg.field.height, cfg.fog.count, cfg.delay.fog_service)
    return [
        FogNode(id=i, kin=Kinematics(float(e["x"]), float(e["y"])), region=Rect(*map(float, e["region"])),
                service_time=cfg.delay.fog_service)
        for i, e in enumerate(cfg.fog.positions)
    ]


def move_nodes(state: SimState) -> None:
    """Advance mobile nodes one round period, reflecting off the field edges."""
    f = state.cfg.field
    dt = state.cfg.round_period
    for n in state.nodes:
        k = n.kin
        if not n.alive or (k.vx == 0 and k.vy == 0):
            continue
        k.x, k.vx = _reflect(k.x + k.vx * dt, k.vx, f.width)
        k.y, k.vy = _reflect(k.y + k.vy * dt, k.vy, f.height)
        state.node_region[n.id] = region_of(k.x, k.y, state.fogs)


def _reflect(x, v, hi):
    while x < 0 or x > hi:
        if x < 0:
            x, v = -x, -v
        else:
            x, v = 2 * hi - x, -v
    return x, v


# --- metrics -------------------------------------------------------------------

CSV_HEADER = "round,time_s,pdr,mean_delay_s,mean_response_s,alive,energy_j"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)   # per-round tuples in CSV_HEADER order
    generated: int = 0
    delivered: int = 0
    lost: int = 0
    in_flight: int = 0
    fnd: Optional[int] = None
    hnd: Optional[int] = None
    lnd: Optional[int] = None
    energy_total_j: float = 0.0
    mean_response_s: Optional[float] = None
    p50_response_s: Optional[float] = None
    p95_response_s: Optional[float] = None
    mean_delay_s: Optional[float] = None
    relaxations: int = 0
    lost_by_reason: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    rounds: int = 0

    @property
    def zero_generated(self) -> bool:
        return self.generated == 0

    @property
    def pdr_total(self) -> float:
        return 1.0 if self.generated == 0 else self.delivered / self.generated

    def lifetime(self, which: str) -> int:
        """FND/HND/LND with never-reached milestones censored at ``rounds``."""
        v = getattr(self, which)
        return self.rounds if v is None else v

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        lines += [",".join(_fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "fnd": self.fnd,
            "hnd": self.hnd,
            "lnd": self.lnd,
            "pdr_total": self.pdr_total,
            "mean_response_s": self.mean_response_s,
            "mean_delay_s": self.mean_delay_s,
            "energy_total_j": self.energy_total_j,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def summary_json(self) -> str:
        import json
        return json.dumps(self.summary(), sort_keys=True)


# --- the round loop --------------------------------------------------------------

def _protocol_fn(name: str):
    from . import protocols
    return protocols.PROTOCOLS[name]


def run(cfg: ScenarioConfig, observer=None) -> MetricsReport:
    """Simulate ``cfg.rounds`` rounds and return the metrics.

    ``observer(state, result, start_energies)`` is called after every round
    (before deaths are applied); tests use it to audit invariants.
    """
    try:
        config_mod.validate(cfg)
    except ConfigError:
        raise
    state = deploy(cfg)
    step = _protocol_fn(cfg.protocol)
    report = MetricsReport(seed=cfg.seed, config_hash=config_mod.config_hash(cfg), rounds=cfg.rounds)
    n_total = len(state.nodes)
    responses, delays = [], []
    energy_chunks = []
    for r in range(cfg.rounds):
        state.clock.round = r
        state.round = r
        start_t = max(r * cfg.round_period, state.clock.time)
        state.round_start = start_t
        state.clock.advance(start_t)
        start_energy = [n.energy for n in state.nodes] if observer else None

        step(state, cfg, state.streams)
        result = state.take_round()

        if observer is not None:
            observer(state, result, start_energy)

        # deaths take effect at round end
        for n in state.nodes:
            if n.alive and n.energy <= 0:
                n.alive = False
            if not n.alive:
                n.memberships = set()
                n.primary_ch = None
                n.is_ch = False
        alive = sum(1 for n in state.nodes if n.alive)
        if report.fnd is None and alive < n_total:
            report.fnd = r
        if report.hnd is None and alive <= n_total / 2:
            report.hnd = r
        if report.lnd is None and alive == 0:
            report.lnd = r

        gen = len(result.requests)
        rt, dl = [], []
        lost = 0
        pending = 0
        for q in result.requests:
            if q.status == DELIVERED:
                rt.append(q.done_at - q.created)
                dl.append(q.served_at - q.created)
            elif q.status == LOST:
                lost += 1
                report.lost_by_reason[q.reason] = report.lost_by_reason.get(q.reason, 0) + 1
            else:
                pending += 1
        report.generated += gen
        report.delivered += len(rt)
        report.lost += lost
        report.in_flight = pending
        report.relaxations += result.relaxations
        energy_chunks.append(math.fsum(result.charged))
        responses.extend(rt)
        delays.extend(dl)
        report.rows.append((
            r,
            state.clock.time,
            1.0 if gen == 0 else len(rt) / gen,
            math.fsum(dl) / len(dl) if dl else None,
            math.fsum(rt) / len(rt) if rt else None,
            alive,
            math.fsum(energy_chunks),
        ))
    report.energy_total_j = math.fsum(energy_chunks)
    if responses:
        arr = np.asarray(responses)
        report.mean_response_s = math.fsum(responses) / len(responses)
        report.p50_response_s = float(np.percentile(arr, 50))
        report.p95_response_s = float(np.percentile(arr, 95))
        report.mean_delay_s = math.fsum(delays) / len(delays)
    return report
