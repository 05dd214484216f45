import math

import networkx as nx
import numpy as np
import pytest

from mfct import grey, network
from mfct.channel import Kinematics, RadioParams, link_expiration_time, snr_db
from mfct.errors import DeadNode, EmptyRegion, InvalidTopology
from mfct.network import (
    CRITERIA_DIRECTIONS,
    ElectionParams,
    FogNode,
    Rect,
    SensorNode,
    Unreachable,
    criteria_for,
    elect_cluster_heads,
    form_overlapping_clusters,
    hop_count,
    hop_counts_all,
)


def node(i, x, y, energy=0.5, **kw):
    return SensorNode(id=i, kin=Kinematics(x, y), energy=energy, **kw)


def fog_at(i, x, y, region=Rect(0, 0, 200, 200)):
    return FogNode(id=i, kin=Kinematics(x, y), region=region)


def random_nodes(rng, n, size=200.0, energy=0.5):
    xy = rng.uniform(0, size, size=(n, 2))
    return [node(i, float(x), float(y), energy=float(rng.uniform(0.1, energy)) if energy else 0.5)
            for i, (x, y) in enumerate(xy)]


# --- hop count ---------------------------------------------------------------

def test_hop_count_examples():
    f = fog_at(0, 0, 0)
    assert hop_count(node(0, 30, 0), [f], [], 50) == 1
    chain = [node(0, 80, 0), node(1, 40, 0)]
    assert hop_count(chain[0], [f], chain, 50) == 2
    assert hop_count(node(0, 200, 0), [f], [], 50) is Unreachable


def test_hop_count_dead_node():
    with pytest.raises(DeadNode):
        hop_count(node(0, 1, 1, energy=0.0), [fog_at(0, 0, 0)], [], 50)


def bfs_oracle(nodes, fogs, r):
    g = nx.Graph()
    g.add_node("sink")
    for n in nodes:
        g.add_node(n.id)
        if any(math.dist(n.pos, f.pos) <= r for f in fogs):
            g.add_edge(n.id, "sink")
    for a in nodes:
        for b in nodes:
            if a.id < b.id and math.dist(a.pos, b.pos) <= r:
                g.add_edge(a.id, b.id)
    lengths = nx.single_source_shortest_path_length(g, "sink")
    return {n.id: lengths.get(n.id, Unreachable) for n in nodes}


@pytest.mark.parametrize("seed", range(8))
def test_hop_counts_match_graph_oracle(seed):
    rng = np.random.default_rng(seed)
    nodes = random_nodes(rng, 60)
    for n in nodes[::7]:
        n.energy, n.alive = 0.0, False
    fogs = network.grid_fogs(200, 200, 4)
    alive = [n for n in nodes if n.alive]
    ref = bfs_oracle(alive, fogs, 35.0)
    fast = hop_counts_all(nodes, fogs, 35.0)
    assert fast == ref
    for n in alive[:10]:
        assert hop_count(n, fogs, nodes, 35.0) == ref[n.id]


# --- criteria -------------------------------------------------------------------

def test_criteria_coincident_node():
    f = fog_at(0, 50, 50)
    v = criteria_for(node(0, 50, 50), [f], [], ElectionParams(let_clamp=2000.0))
    assert (v.d, v.hc, v.snr, v.let, v.e_re) == (0.0, 1.0, 50.0, 2000.0, 0.5)


def test_criteria_componentwise_oracle():
    rng = np.random.default_rng(4)
    fogs = network.grid_fogs(200, 200, 4)
    params = ElectionParams(let_clamp=500.0)
    nodes = []
    for i in range(30):
        x, y, vx, vy = rng.uniform(0, 200), rng.uniform(0, 200), rng.uniform(-2, 2), rng.uniform(-2, 2)
        nodes.append(SensorNode(i, Kinematics(x, y, vx, vy), float(rng.uniform(0.1, 0.5))))
    hc = bfs_oracle(nodes, fogs, params.comm_radius)
    for n in nodes:
        d, f = min((math.dist(n.pos, f.pos), f.id) for f in fogs)
        fog = fogs[f]
        v = criteria_for(n, fogs, nodes, params)
        h = hc[n.id]
        assert v.e_re == n.energy
        assert v.hc == (params.hop_cap if h is Unreachable else h)
        assert v.d == pytest.approx(d)
        assert v.snr == pytest.approx(snr_db(d, RadioParams()))
        assert v.let == pytest.approx(min(params.let_clamp, link_expiration_time(n.kin, fog.kin, params.comm_radius)))


# --- election --------------------------------------------------------------------

def test_single_eligible_node_is_ch():
    f = fog_at(0, 100, 100)
    res = elect_cluster_heads([node(3, 90, 90)], f, ElectionParams())
    assert res.chs == [3] and res.relaxation is None


def test_energy_dominance_decides():
    f = fog_at(0, 100, 100)
    pair = [node(1, 80, 100, energy=0.2), node(2, 120, 100, energy=1.0)]
    assert elect_cluster_heads(pair, f, ElectionParams(p_ch=0.1)).chs == [2]


def test_empty_region():
    with pytest.raises(EmptyRegion):
        elect_cluster_heads([], fog_at(0, 0, 0), ElectionParams())


@pytest.mark.parametrize("seed", range(5))
def test_election_matches_grey_oracle(seed):
    rng = np.random.default_rng(seed)
    f = fog_at(0, 100, 100)
    cands = random_nodes(rng, 10)
    params = ElectionParams(p_ch=0.25)
    res = elect_cluster_heads(cands, f, params)
    rows = [criteria_for(n, [f], cands, params).as_row() for n in cands]
    mat = grey.DecisionMatrix(np.array(rows), CRITERIA_DIRECTIONS, np.array(params.weights))
    order, _ = grey.grey_rank(mat)
    assert res.chs == [cands[i].id for i in order[:math.ceil(0.25 * 10)]]


def test_relaxation_order():
    f = fog_at(0, 100, 100)
    params = ElectionParams(energy_threshold=0.3)
    rotated = [node(0, 90, 90, was_ch_last_epoch=True), node(1, 110, 90, energy=0.1)]
    res = elect_cluster_heads(rotated, f, params)
    assert res.relaxation == "rotation" and res.chs == [0]
    weak = [node(0, 90, 90, energy=0.1), node(1, 110, 90, energy=0.2)]
    res = elect_cluster_heads(weak, f, params)
    assert res.relaxation == "threshold" and len(res.chs) == 1


def test_threshold_respected_without_relaxation():
    rng = np.random.default_rng(9)
    cands = random_nodes(rng, 40)
    params = ElectionParams(energy_threshold=0.25, p_ch=0.2)
    res = elect_cluster_heads(cands, fog_at(0, 100, 100), params)
    by_id = {n.id: n for n in cands}
    assert res.relaxation is None
    assert all(by_id[c].energy > 0.25 for c in res.chs)


def test_rotation_gives_disjoint_ch_sets():
    rng = np.random.default_rng(1)
    cands = random_nodes(rng, 40)
    f = fog_at(0, 100, 100)
    params = ElectionParams(p_ch=0.1)
    first = set(elect_cluster_heads(cands, f, params, 0).chs)
    for n in cands:
        n.was_ch_last_epoch = n.id in first
    second = set(elect_cluster_heads(cands, f, params, 1).chs)
    assert first and second and not first & second


def test_election_is_pure():
    rng = np.random.default_rng(6)
    cands = random_nodes(rng, 25)
    f = fog_at(0, 100, 100)
    for mode in ("grey", "random"):
        p = ElectionParams(mode=mode, seed=4)
        assert elect_cluster_heads(cands, f, p, 3).chs == elect_cluster_heads(cands, f, p, 3).chs


def test_random_mode_keeps_grades():
    rng = np.random.default_rng(8)
    cands = random_nodes(rng, 20)
    f = fog_at(0, 100, 100)
    g = elect_cluster_heads(cands, f, ElectionParams())
    r = elect_cluster_heads(cands, f, ElectionParams(mode="random"))
    assert r.grades == g.grades and len(r.chs) == len(g.chs)


# --- overlapping clusters ------------------------------------------------------------

def test_equidistant_node_joins_both():
    nodes = [node(0, 0, 0), node(1, 60, 0), node(2, 30, 0)]
    clusters = form_overlapping_clusters([0, 1], nodes, 40, grades={0: 0.4, 1: 0.8})
    assert nodes[2].memberships == {0, 1} and nodes[2].primary_ch == 1
    assert {c.id: c.members for c in clusters} == {0: {0, 2}, 1: {1, 2}}


def test_out_of_range_falls_back_to_nearest():
    nodes = [node(0, 0, 0), node(1, 300, 0), node(2, 120, 0)]
    form_overlapping_clusters([0, 1], nodes, 50)
    assert nodes[2].memberships == {0} and nodes[2].primary_ch == 0


def test_grade_tie_breaks_by_distance_then_id():
    nodes = [node(0, 0, 0), node(1, 50, 0), node(2, 20, 0)]
    form_overlapping_clusters([0, 1], nodes, 60, grades={0: 0.5, 1: 0.5})
    assert nodes[2].primary_ch == 0
    nodes = [node(0, 0, 0), node(1, 40, 0), node(2, 20, 0)]
    form_overlapping_clusters([0, 1], nodes, 60)
    assert nodes[2].primary_ch == 0


@pytest.mark.parametrize("seed", range(4))
def test_memberships_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    nodes = random_nodes(rng, 50)
    chs = sorted(int(i) for i in rng.choice(50, size=5, replace=False))
    grades = {c: float(rng.uniform()) for c in chs}
    r = 45.0
    form_overlapping_clusters(chs, nodes, r, grades)
    for n in nodes:
        if n.id in chs:
            assert n.memberships == {n.id} and n.is_ch
            continue
        near = {c for c in chs if math.dist(n.pos, nodes[c].pos) <= r}
        if near:
            assert n.memberships == near
            assert n.primary_ch == max(near, key=lambda c: (grades[c], -math.dist(n.pos, nodes[c].pos), -c))
        else:
            nearest = min(chs, key=lambda c: (math.dist(n.pos, nodes[c].pos), c))
            assert n.memberships == {nearest} == {n.primary_ch}


def test_dead_nodes_get_no_membership():
    nodes = [node(0, 0, 0), node(1, 10, 0, energy=0.0)]
    form_overlapping_clusters([0], nodes, 50)
    assert nodes[1].memberships == set() and nodes[1].primary_ch is None


def test_overlap_emerges_in_random_fields():
    passed = 0
    fogs = network.grid_fogs(200, 200, 4)
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        nodes = random_nodes(rng, 100)
        region = {f.id: [] for f in fogs}
        for n in nodes:
            region[network.region_of(n.kin.x, n.kin.y, fogs)].append(n)
        chs, grades = [], {}
        hops = hop_counts_all(nodes, fogs, 50)
        for f in fogs:
            res = elect_cluster_heads(region[f.id], f, ElectionParams(), fogs=fogs, all_nodes=nodes, hop_counts=hops)
            chs += res.chs
            grades.update(res.grades)
        spacing = min(math.dist(nodes[a].pos, nodes[b].pos) for a in chs for b in chs if a != b)
        form_overlapping_clusters(chs, nodes, max(50.0, spacing / 2), grades)
        passed += any(len(n.memberships) >= 2 for n in nodes)
    assert passed >= 18


# --- geometry -----------------------------------------------------------------

def test_grid_fogs_tile_the_field():
    fogs = network.grid_fogs(200, 200, 4)
    assert [f.pos for f in fogs] == [(50, 50), (150, 50), (50, 150), (150, 150)]
    network.check_tiling([f.region for f in fogs], 200, 200)


def test_tiling_rejects_gaps_and_overlaps():
    with pytest.raises(InvalidTopology):
        network.check_tiling([Rect(0, 0, 100, 200)], 200, 200)
    with pytest.raises(InvalidTopology):
        network.check_tiling([Rect(0, 0, 150, 200), Rect(50, 0, 200, 200)], 200, 200)


def test_snapshot_is_json_ready():
    import json
    nodes = [node(0, 0, 0), node(1, 10, 0)]
    clusters = form_overlapping_clusters([0], nodes, 50)
    snap = network.topology_snapshot(nodes, network.grid_fogs(200, 200, 1), clusters)
    assert json.loads(json.dumps(snap))["nodes"][1]["primary_ch"] == 0
