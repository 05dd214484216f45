"""Packet type shared by the fog tree, protocols and engine."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Kind(str, enum.Enum):
    SENSOR_REPORT = "SensorReport"
    AGGREGATE = "Aggregate"
    FOG_MERGED = "FogMerged"
    RESPONSE = "Response"


MERGEABLE = frozenset({Kind.SENSOR_REPORT, Kind.AGGREGATE, Kind.FOG_MERGED})


@dataclass
class Packet:
    """``request_ids`` is a multiset stored as a tuple; ``route`` holds hop labels."""

    kind: Kind
    request_ids: tuple
    bits: int
    created_at: float
    route: list = field(default_factory=list)

    def __post_init__(self):
        if self.bits <= 0:
            raise ValueError("packet size must be positive")

    @property
    def hops(self) -> int:
        return len(self.route)

    @property
    def count(self) -> int:
        return len(self.request_ids)
