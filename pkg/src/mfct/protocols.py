"""Per-round protocol transitions: MFCT-IoT and the ERGID/EECRP-style baselines.

Each ``*_round(state, cfg, streams)`` advances ``state`` by one round in
place.  Energy charges, request outcomes and losses are booked on the state
and collected by the engine afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fogtree
from .channel import aggregation_energy
from .config import ScenarioConfig
from .engine import CLOUD_LABEL, FOG, SENSOR, SimState, fog_queue_step, move_nodes
from .errors import EmptyRegion, InvalidParameter
from .network import (
    ElectionParams,
    ch_quota,
    elect_cluster_heads,
    failover_order,
    form_overlapping_clusters,
    hop_counts_all,
    nearest_fog,
)
from .packets import Kind, Packet


def _apply_faults(state: SimState) -> None:
    for nid in state.kills.get(state.round, ()):
        state.kill(state.nodes[nid])


def _election_params(state: SimState, cfg: ScenarioConfig, mode: str) -> ElectionParams:
    key = ("election_params", mode)
    params = state.proto.get(key)
    if params is None:
        from .grey import GreyParams
        pc = cfg.protocol_params
        params = ElectionParams(
            energy_threshold=cfg.energy_threshold,
            p_ch=pc.p_ch,
            comm_radius=pc.comm_radius,
            let_clamp=cfg.duration,
            radio=state.radio,
            grey=GreyParams(cfg.grey.rho),
            weights=tuple(cfg.grey.weights),
            mode=mode,
            seed=cfg.seed,
        )
        state.proto[key] = params
    return params


def _new_epoch(state: SimState, cfg: ScenarioConfig) -> bool:
    if state.round % cfg.protocol_params.epoch_len:
        return False
    state.epoch += 1
    for n in state.nodes:
        n.was_ch_last_epoch = n.id in state.prev_chs
    return True


# --- MFCT-IoT -------------------------------------------------------------------

def mfct_elect(state: SimState, cfg: ScenarioConfig, mode: str = "grey") -> None:
    """Grey (or random-ablation) CH election per fog region, then overlapping clusters."""
    params = _election_params(state, cfg, mode)
    alive = state.alive_nodes()
    state.clusters = {}
    if not alive:
        state.prev_chs = set()
        return
    hops = hop_counts_all(alive, state.fogs, params.comm_radius)
    snr_offset = None
    if cfg.radio.shadowing_db > 0:
        snr_offset = {n.id: float(state.streams.stream("shadow", n.id).normal(0.0, cfg.radio.shadowing_db))
                      for n in alive}
    by_region = {}
    for n in alive:
        by_region.setdefault(state.node_region[n.id], []).append(n)
    chs, grades = [], {}
    for fog in sorted(state.fogs, key=lambda f: f.id):
        try:
            res = elect_cluster_heads(by_region.get(fog.id, []), fog, params, state.epoch,
                                      fogs=state.fogs, all_nodes=alive, hop_counts=hops,
                                      snr_offset=snr_offset)
        except EmptyRegion:
            continue
        if res.relaxation:
            state.relaxations += 1
        chs.extend(res.chs)
        for c in res.chs:
            grades[c] = res.grades[c]
    clusters = form_overlapping_clusters(
        chs, state.nodes, cfg.cluster_radius, grades,
        anchor_of=lambda n: state.node_region[n.id],
    )
    state.clusters = {c.id: c for c in clusters}
    state.prev_chs = set(chs)


def _uplink_to_chs(state: SimState, cfg: ScenarioConfig, failover: bool) -> dict:
    """Members send their reports to a CH; returns ``{ch_id: [(arrival, [requests])]}``."""
    pc = cfg.protocol_params
    t0 = state.round_start
    bits = pc.packet_bits
    clusters = state.clusters
    inbox = {}
    for node in state.nodes:
        if not node.alive:
            continue
        reqs = [state.new_request(node, t0) for _ in range(pc.rate)]
        if node.is_ch and node.id in clusters:
            inbox.setdefault(node.id, []).append((t0, reqs))
            continue
        if node.primary_ch is None:
            for req in reqs:
                state.lose(req, "no_cluster")
            continue
        targets = failover_order(node, clusters) if failover else [node.primary_ch]
        for req in reqs:
            ready = t0
            for ch_id in targets:
                arrival = state.transmit(node, (SENSOR, ch_id), bits, ready)
                if state.nodes[ch_id].alive:
                    req.route.append((SENSOR, ch_id))
                    inbox.setdefault(ch_id, []).append((arrival, [req]))
                    break
                # no ack from a dead CH: retry on the next membership
                ready = arrival
            else:
                state.lose(req, "ch_dead")
    return inbox


def _aggregate_and_send(state: SimState, cfg: ScenarioConfig, inbox: dict, fog_of) -> dict:
    """Each CH aggregates its inbox into one packet for its fog."""
    bits = cfg.protocol_params.packet_bits
    out_bits = cfg.fog.aggregate_bits
    arrivals = {f.id: [] for f in state.fogs}
    for ch_id in sorted(inbox):
        ch = state.nodes[ch_id]
        batches = inbox[ch_id]
        reqs = [r for _, rs in batches for r in rs]
        ready = max(t for t, _ in batches)
        state.charge(ch, aggregation_energy(bits, len(reqs), state.radio), "agg")
        fid = fog_of(ch_id)
        label = (FOG, fid)
        arrival = state.transmit(ch, label, out_bits, ready)
        for r in reqs:
            r.route.append(label)
        pkt = Packet(Kind.AGGREGATE, tuple(r.rid for r in reqs), out_bits, min(r.created for r in reqs))
        arrivals[fid].append((arrival, (pkt, reqs, arrival)))
    return arrivals


def _split_hits(state: SimState, fid: int, reqs, arrival: float):
    p_hit = state.cfg.protocol_params.p_hit
    draws = state.streams.stream("hit", fid).random(len(reqs))
    hits, misses = [], []
    for r, u in zip(reqs, draws):
        if u < p_hit:
            r.served_at = arrival
            hits.append(r)
        else:
            misses.append(r)
    return hits, misses


def _fog_tree_phase(state: SimState, cfg: ScenarioConfig, arrivals: dict) -> list:
    """Serve fogs deepest-first; hits answer locally, misses merge up the tree."""
    tree = state.tree
    out_bits = cfg.fog.aggregate_bits if cfg.fog.merge_mode == "fixed" else None
    by_rid = {r.rid: r for r in state.requests}
    items, cloud_arrivals = [], []
    for fid in reversed(tree.order):
        fog = state.fog_by_id[fid]
        queue = sorted(arrivals[fid], key=lambda a: a[0])
        miss_pkts, miss_ready = [], None
        for dep, _, (pkt, reqs, arrived) in fog_queue_step(fog, queue):
            if pkt.kind is Kind.AGGREGATE:
                hits, misses = _split_hits(state, fid, reqs, arrived)
                if hits:
                    items.append((dep, (FOG, fid), hits))
                if not misses:
                    continue
                pkt = Packet(Kind.AGGREGATE, tuple(r.rid for r in misses), pkt.bits,
                             min(r.created for r in misses))
            miss_pkts.append(pkt)
            miss_ready = dep
        if not miss_pkts:
            continue
        merged = fogtree.merge_payloads(miss_pkts, out_bits)
        parent = tree.parent[fid]
        to = CLOUD_LABEL if parent == fogtree.CLOUD else (FOG, parent)
        arrival = state.relay((FOG, fid), to, merged.bits, miss_ready)
        reqs = [by_rid[rid] for rid in merged.request_ids]
        for r in reqs:
            r.route.append(to)
        merged.route.append(to)
        if to == CLOUD_LABEL:
            cloud_arrivals.append((arrival, reqs))
        else:
            arrivals[parent].append((arrival, (merged, reqs, arrival)))
    return items + state.serve_at_cloud(cloud_arrivals)


def _mfct(state: SimState, cfg: ScenarioConfig, mode: str) -> None:
    move_nodes(state)
    if _new_epoch(state, cfg):
        mfct_elect(state, cfg, mode)
    _apply_faults(state)
    inbox = _uplink_to_chs(state, cfg, failover=True)
    arrivals = _aggregate_and_send(state, cfg, inbox, lambda c: state.clusters[c].anchor_fog)
    state.respond(_fog_tree_phase(state, cfg, arrivals))


def mfct_round(state: SimState, cfg: ScenarioConfig, streams=None) -> list:
    _mfct(state, cfg, "grey")
    return state.events


def mfct_random_round(state: SimState, cfg: ScenarioConfig, streams=None) -> list:
    """Ablation: CHs drawn uniformly from the eligible set instead of grey-ranked."""
    _mfct(state, cfg, "random")
    return state.events


# --- shared flat-fog handling for the baselines --------------------------------

def _flat_fog_phase(state: SimState, arrivals: dict) -> list:
    """Fogs answer hits and relay each packet's misses straight to the cloud."""
    items, cloud_arrivals = [], []
    for fid in sorted(arrivals):
        queue = sorted(arrivals[fid], key=lambda a: a[0])
        for dep, _, (pkt, reqs, arrived) in fog_queue_step(state.fog_by_id[fid], queue):
            hits, misses = _split_hits(state, fid, reqs, arrived)
            if hits:
                items.append((dep, (FOG, fid), hits))
            if misses:
                arrival = state.relay((FOG, fid), CLOUD_LABEL, pkt.bits, dep)
                for r in misses:
                    r.route.append(CLOUD_LABEL)
                cloud_arrivals.append((arrival, misses))
    return items + state.serve_at_cloud(cloud_arrivals)


# --- ERGID-lite ----------------------------------------------------------------

def dim_candidates(delays: Sequence[float], band: float) -> list[int]:
    """Indices whose estimated delay lies within ``band`` (relative) of the best."""
    best = min(delays)
    return [i for i, d in enumerate(delays) if d <= best * (1.0 + band)]


def repc_probabilities(energies: Sequence[float]) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    total = e.sum()
    if total <= 0:
        return np.full(len(e), 1.0 / len(e))
    return e / total


def choose_next_hop(delays: Sequence[float], energies: Sequence[float], band: float,
                    rng: np.random.Generator) -> int:
    """DIM-lite shortlist, then REPC energy-proportional draw."""
    shortlist = dim_candidates(delays, band)
    if len(shortlist) == 1:
        return shortlist[0]
    probs = repc_probabilities([energies[i] for i in shortlist])
    u = rng.random()
    acc = 0.0
    for i, p in zip(shortlist, probs):
        acc += p
        if u < acc:
            return i
    return shortlist[-1]


class _ErgidTables:
    """Greedy neighbor tables, frozen at each refresh (stale between refreshes)."""

    def __init__(self, state: SimState, cfg: ScenarioConfig):
        nodes = state.nodes
        xy = np.array([n.pos for n in nodes])
        fxy = np.array([f.pos for f in state.fogs])
        self.fog_ids = [f.id for f in state.fogs]
        self.alive = np.array([n.alive for n in nodes])
        self.energy = [n.energy for n in nodes]
        r = cfg.protocol_params.comm_radius
        self.dfog = np.sqrt(((xy[:, None, :] - fxy[None, :, :]) ** 2).sum(axis=2))
        self.dnode = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
        self.adj = (self.dnode <= r) & self.alive[None, :]
        np.fill_diagonal(self.adj, False)
        self.target = {}
        for n in nodes:
            if n.alive:
                self.target[n.id] = self.fog_ids[int(np.argmin(self.dfog[n.id]))]
        self._cands = {}

    def candidates(self, nid: int, fid: int) -> list[int]:
        key = (nid, fid)
        c = self._cands.get(key)
        if c is None:
            col = self.fog_ids.index(fid)
            mask = self.adj[nid] & (self.dfog[:, col] < self.dfog[nid, col])
            c = [int(i) for i in np.flatnonzero(mask)]
            self._cands[key] = c
        return c


def ergid_round(state: SimState, cfg: ScenarioConfig, streams=None) -> list:
    """Cluster-free greedy forwarding to the nearest fog; fogs relay misses to the cloud."""
    import heapq

    move_nodes(state)
    pc = cfg.protocol_params
    if _new_epoch(state, cfg) or "ergid" not in state.proto:
        state.proto["ergid"] = _ErgidTables(state, cfg)
    tables = state.proto["ergid"]
    _apply_faults(state)
    t0 = state.round_start
    bits = pc.packet_bits
    bw, c = state.delay.bandwidth, state.delay.propagation_speed
    heap, seq = [], 0
    for n in state.nodes:
        if not n.alive:
            continue
        fid = tables.target.get(n.id)
        if fid is None:
            fid = nearest_fog(n, state.fogs)[0].id
        for _ in range(pc.rate):
            heap.append((t0, seq, n.id, state.new_request(n, t0), fid))
            seq += 1
    heapq.heapify(heap)
    arrivals = {f.id: [] for f in state.fogs}
    while heap:
        t, _, nid, req, fid = heapq.heappop(heap)
        node = state.nodes[nid]
        fog_label = (FOG, fid)
        if state.dist((SENSOR, nid), fog_label) <= pc.comm_radius:
            arrival = state.transmit(node, fog_label, bits, t)
            req.route.append(fog_label)
            pkt = Packet(Kind.SENSOR_REPORT, (req.rid,), bits, req.created)
            arrivals[fid].append((arrival, (pkt, [req], arrival)))
            continue
        cands = tables.candidates(nid, fid)
        if not cands:
            state.lose(req, "routing_hole")
            continue
        delays = []
        for k in cands:
            wait = state.nodes[k].tx_free - t
            delays.append(bits / bw + tables.dnode[nid, k] / c + (wait if wait > 0 else 0.0))
        pick = cands[choose_next_hop(delays, [tables.energy[k] for k in cands], pc.ergid_band,
                                     state.streams.stream("repc", nid))]
        arrival = state.transmit(node, (SENSOR, pick), bits, t)
        if not state.nodes[pick].alive:
            state.lose(req, "dead_relay")
            continue
        req.route.append((SENSOR, pick))
        heapq.heappush(heap, (arrival, seq, pick, req, fid))
        seq += 1
    state.respond(_flat_fog_phase(state, arrivals))
    return state.events


# --- EECRP-lite ------------------------------------------------------------------

def energy_weighted_centroid(positions, energies) -> np.ndarray:
    p = np.asarray(positions, dtype=float)
    w = np.asarray(energies, dtype=float)
    if p.ndim != 2 or len(p) != len(w) or len(p) == 0:
        raise InvalidParameter("need one energy per position")
    total = w.sum()
    if total <= 0:
        return p.mean(axis=0)
    return (p * w[:, None]).sum(axis=0) / total


def eecrp_pick_ch(members: Sequence, centroid, prev_chs: set) -> int:
    """Highest-energy member not CH last epoch; ties go to the node nearest the centroid."""
    pool = [m for m in members if m.id not in prev_chs] or list(members)
    cx, cy = centroid
    return max(pool, key=lambda m: (m.energy, -math.hypot(m.kin.x - cx, m.kin.y - cy), -m.id)).id


@dataclass
class EecrpClusters:
    centroids: np.ndarray
    assignment: dict          # node id -> cluster index


def eecrp_cluster(nodes: Sequence, k: int, init: np.ndarray, iterations: int = 10) -> EecrpClusters:
    """Lloyd iterations with energy-weighted centroids; empty clusters dissolve."""
    xy = np.array([n.pos for n in nodes])
    e = np.array([n.energy for n in nodes])
    cents = np.array(init, dtype=float)[:k]
    for _ in range(iterations):
        d = np.hypot(xy[:, None, 0] - cents[None, :, 0], xy[:, None, 1] - cents[None, :, 1])
        assign = np.argmin(d, axis=1)
        new = [energy_weighted_centroid(xy[assign == j], e[assign == j])
               for j in range(len(cents)) if np.any(assign == j)]
        new = np.array(new)
        if new.shape == cents.shape and np.allclose(new, cents, rtol=0, atol=1e-9):
            cents = new
            break
        cents = new
    d = np.hypot(xy[:, None, 0] - cents[None, :, 0], xy[:, None, 1] - cents[None, :, 1])
    assign = np.argmin(d, axis=1)
    return EecrpClusters(cents, {n.id: int(a) for n, a in zip(nodes, assign)})


def _eecrp_elect(state: SimState, cfg: ScenarioConfig) -> None:
    from .network import Cluster

    alive = state.alive_nodes()
    state.clusters = {}
    for n in state.nodes:
        n.memberships, n.primary_ch, n.is_ch = set(), None, False
    if not alive:
        state.prev_chs = set()
        return
    k = ch_quota(cfg.protocol_params.p_ch, len(alive))
    init = state.proto.get("eecrp_centroids")
    if init is None or len(init) != k:
        g = state.streams.stream("eecrp-init", state.epoch)
        picks = sorted(g.choice(len(alive), size=k, replace=False))
        init = np.array([alive[int(i)].pos for i in picks])
    res = eecrp_cluster(alive, k, init)
    state.proto["eecrp_centroids"] = res.centroids
    groups = {}
    for n in alive:
        groups.setdefault(res.assignment[n.id], []).append(n)
    chs = []
    for j in sorted(groups):
        members = groups[j]
        ch = eecrp_pick_ch(members, res.centroids[j], state.prev_chs)
        chs.append(ch)
        fog, _ = nearest_fog(state.nodes[ch], state.fogs)
        state.clusters[ch] = Cluster(id=ch, ch=ch, members={m.id for m in members}, anchor_fog=fog.id)
        for m in members:
            m.memberships = {ch}
            m.primary_ch = ch
        state.nodes[ch].is_ch = True
    state.prev_chs = set(chs)


def eecrp_round(state: SimState, cfg: ScenarioConfig, streams=None) -> list:
    """Rotating energy-centroid clusters; CHs send to the nearest fog, no fog tree."""
    move_nodes(state)
    if _new_epoch(state, cfg):
        _eecrp_elect(state, cfg)
    _apply_faults(state)
    inbox = _uplink_to_chs(state, cfg, failover=False)
    arrivals = _aggregate_and_send(state, cfg, inbox, lambda c: state.clusters[c].anchor_fog)
    state.respond(_flat_fog_phase(state, arrivals))
    return state.events


PROTOCOLS = {
    "mfct": mfct_round,
    "ergid": ergid_round,
    "eecrp": eecrp_round,
    "mfct_random": mfct_random_round,
}
