import json
import math
from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest

from mfct.errors import EmptyMerge, InvalidParameter, InvalidTopology, UnknownFog
from mfct.fogtree import CLOUD, build_tree, merge_payloads, morton_code, path_to_root
from mfct.packets import Kind, Packet
from scenarios import complete_tree_depths


def fogs_on_grid(n, seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 1000, size=(n, 2))
    return [SimpleNamespace(id=i, pos=(float(x), float(y))) for i, (x, y) in enumerate(xy)]


def test_single_fog():
    t = build_tree(fogs_on_grid(1))
    assert t.parent == {0: CLOUD} and t.depth == {0: 1}
    assert path_to_root(t, 0) == [CLOUD]


def test_seven_fogs_binary():
    t = build_tree(fogs_on_grid(7), 2)
    assert sorted(t.depth.values()) == [1, 2, 2, 3, 3, 3, 3]
    leaf_depths = {t.depth[f] for f in t.leaves()}
    assert leaf_depths == {3}
    deepest = t.order[-1]
    path = path_to_root(t, deepest)
    assert len(path) == 3 and path[-1] == CLOUD and path[0] == t.parent[deepest]


def test_four_fogs_binary():
    t = build_tree(fogs_on_grid(4), 2)
    assert sorted(t.depth.values()) == [1, 2, 2, 3]
    leaf_depths = [t.depth[f] for f in t.leaves()]
    assert max(leaf_depths) - min(leaf_depths) == 1


def test_errors():
    with pytest.raises(UnknownFog):
        path_to_root(build_tree(fogs_on_grid(3)), 99)
    dup = fogs_on_grid(2)
    dup[1].id = 0
    with pytest.raises(InvalidTopology):
        build_tree(dup)
    with pytest.raises(InvalidParameter):
        build_tree(fogs_on_grid(3), 1)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_balance_and_depth_oracle(k):
    for n in range(1, 65):
        t = build_tree(fogs_on_grid(n, seed=n), k)
        assert sorted(t.depth.values()) == complete_tree_depths(n, k)
        leaves = [t.depth[f] for f in t.leaves()]
        assert max(leaves) - min(leaves) <= 1
        assert all(len(c) <= k for c in t.children.values())
        assert set(t.order) == set(range(n)) and len(t.order) == n
        bound = math.ceil(math.log(n + 1, k)) + 1
        for f in t.order:
            path = path_to_root(t, f)
            assert len(path) == t.depth[f] <= bound
            assert path[-1] == CLOUD


def test_morton_order_is_spatially_coherent():
    # four quadrant fogs: Morton order visits (lo,lo), (hi,lo), (lo,hi), (hi,hi)
    fogs = [SimpleNamespace(id=i, pos=p) for i, p in enumerate([(150, 150), (50, 150), (150, 50), (50, 50)])]
    assert build_tree(fogs).order == (3, 2, 1, 0)
    assert morton_code(1, 0) == 1 and morton_code(0, 1) == 2 and morton_code(3, 3) == 15


def test_dumps():
    t = build_tree(fogs_on_grid(3))
    adj = json.loads(t.to_json())
    assert adj["root"] == CLOUD and adj["children"][CLOUD] == [t.order[0]]
    assert t.to_text().splitlines()[0] == CLOUD


def pkt(ids, t=0.0, bits=4000, kind=Kind.AGGREGATE):
    return Packet(kind, tuple(ids), bits, t)


def test_merge_examples():
    m = merge_payloads([pkt(["a"])], 4000)
    assert m.request_ids == ("a",) and m.bits == 4000 and m.kind is Kind.FOG_MERGED
    m = merge_payloads([pkt(["a"], 5.0), pkt(["b"], 3.0), pkt(["c"], 4.0)], 4000)
    assert Counter(m.request_ids) == Counter("abc") and m.created_at == 3.0
    assert merge_payloads([pkt([1, 1]), pkt([1])]).count == 3


def test_merge_concat_mode_and_errors():
    assert merge_payloads([pkt([1], bits=100), pkt([2], bits=300)]).bits == 400
    with pytest.raises(EmptyMerge):
        merge_payloads([])
    with pytest.raises(InvalidParameter):
        merge_payloads([pkt([1], kind=Kind.RESPONSE)])


@pytest.mark.parametrize("n,k", [(7, 2), (13, 3), (30, 4)])
def test_request_ids_conserved_up_the_tree(n, k):
    rng = np.random.default_rng(n)
    t = build_tree(fogs_on_grid(n, seed=k), k)
    inbox = {f: [pkt(list(rng.integers(0, 50, size=rng.integers(1, 5))))] for f in t.order}
    entering = Counter(r for ps in inbox.values() for p in ps for r in p.request_ids)
    at_cloud = []
    for f in reversed(t.order):
        merged = merge_payloads(inbox[f], 4000)
        parent = t.parent[f]
        (at_cloud if parent == CLOUD else inbox[parent]).append(merged)
    assert Counter(r for p in at_cloud for r in p.request_ids) == entering
