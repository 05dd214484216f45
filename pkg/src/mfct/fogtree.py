"""Height-balanced k-ary tree of fog nodes rooted at the cloud."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyMerge, InvalidParameter, InvalidTopology, UnknownFog
from .packets import MERGEABLE, Kind, Packet

CLOUD = "cloud"
MORTON_BITS = 16


def morton_code(ix: int, iy: int, bits: int = MORTON_BITS) -> int:
    """Interleave the bits of two grid coordinates (x in the even positions)."""
    code = 0
    for b in range(bits):
        code |= ((ix >> b) & 1) << (2 * b)
        code |= ((iy >> b) & 1) << (2 * b + 1)
    return code


def _quantize(v: float, lo: float, hi: float, bits: int) -> int:
    if hi <= lo:
        return 0
    top = (1 << bits) - 1
    return min(top, max(0, int((v - lo) / (hi - lo) * top)))


@dataclass(frozen=True)
class FogTree:
    branching: int
    order: tuple            # fog ids in level order
    parent: dict            # fog id -> fog id or CLOUD
    children: dict          # fog id or CLOUD -> tuple of fog ids
    depth: dict             # fog id -> depth (cloud's children have depth 1)

    @property
    def height(self) -> int:
        return max(self.depth.values())

    def leaves(self) -> list:
        return [f for f in self.order if not self.children[f]]

    def to_json(self) -> str:
        adj = {str(k): list(v) for k, v in self.children.items()}
        return json.dumps({"root": CLOUD, "branching": self.branching, "children": adj}, sort_keys=True)

    def to_text(self) -> str:
        lines = [CLOUD]

        def walk(node, indent):
            for c in self.children[node]:
                lines.append("  " * indent + f"fog {c}")
                walk(c, indent + 1)

        walk(CLOUD, 1)
        return "\n".join(lines)


def build_tree(fogs: Sequence, k: int = 2) -> FogTree:
    """Place fogs in Morton order into a complete k-ary tree under the cloud.

    ``fogs`` are objects with ``id`` and ``pos``.  Filling a complete tree in
    level order keeps leaf depths within one of each other.
    """
    if k < 2:
        raise InvalidParameter(f"branching must be >= 2, got {k}")
    if not fogs:
        raise InvalidTopology("no fog nodes")
    ids = [f.id for f in fogs]
    if len(set(ids)) != len(ids):
        raise InvalidTopology("duplicate fog ids")
    xs = [f.pos[0] for f in fogs]
    ys = [f.pos[1] for f in fogs]
    keyed = sorted(
        fogs,
        key=lambda f: (
            morton_code(_quantize(f.pos[0], min(xs), max(xs), MORTON_BITS),
                        _quantize(f.pos[1], min(ys), max(ys), MORTON_BITS)),
            f.id,
        ),
    )
    order = tuple(f.id for f in keyed)
    parent, depth = {}, {}
    children = {CLOUD: [order[0]]}
    for i, fid in enumerate(order):
        children[fid] = []
        if i == 0:
            parent[fid] = CLOUD
            depth[fid] = 1
        else:
            p = order[(i - 1) // k]
            parent[fid] = p
            children[p].append(fid)
            depth[fid] = depth[p] + 1
    return FogTree(
        branching=k,
        order=order,
        parent=parent,
        children={key: tuple(v) for key, v in children.items()},
        depth=depth,
    )


def attach_tree(fogs: Sequence, tree: FogTree) -> None:
    """Copy parent/children links onto the fog objects."""
    for f in fogs:
        f.parent = tree.parent[f.id]
        f.children = list(tree.children[f.id])


def path_to_root(tree: FogTree, fog_id) -> list:
    if fog_id not in tree.parent:
        raise UnknownFog(f"fog {fog_id!r} is not in the tree")
    path = []
    cur = fog_id
    while cur != CLOUD:
        cur = tree.parent[cur]
        path.append(cur)
    return path


def merge_payloads(packets: Sequence[Packet], out_bits: int = None) -> Packet:
    """Merge packets into one FogMerged packet.

    With ``out_bits=None`` sizes are concatenated rather than compressed.
    The earliest creation time is kept so delay accounting stays worst case.
    """
    if not packets:
        raise EmptyMerge("nothing to merge")
    for p in packets:
        if p.kind not in MERGEABLE:
            raise InvalidParameter(f"cannot merge {p.kind.value} packets")
    ids = tuple(rid for p in packets for rid in p.request_ids)
    bits = out_bits if out_bits is not None else sum(p.bits for p in packets)
    return Packet(
        kind=Kind.FOG_MERGED,
        request_ids=ids,
        bits=bits,
        created_at=min(p.created_at for p in packets),
    )
