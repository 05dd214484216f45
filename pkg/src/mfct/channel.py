"""Radio energy, SNR and link-expiration models."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidParameter


@dataclass(frozen=True)
class RadioParams:
    """First-order radio model plus a log-distance SNR model.

    Energies are joules per bit (amplifier terms per m^2 / m^4).  ``d0`` is
    derived, so both amplifier branches agree at the crossover distance.
    """

    e_elec: float = 50e-9
    eps_fs: float = 10e-12
    eps_mp: float = 0.0013e-12
    e_da: float = 5e-9
    tx_power_dbm: float = 0.0
    pl_ref_db: float = 40.0
    pl_exponent: float = 2.7
    noise_floor_dbm: float = -90.0

    def __post_init__(self):
        for name in ("e_elec", "eps_fs", "eps_mp", "e_da"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidParameter(f"{name} must be a positive finite number, got {v}")
        for name in ("tx_power_dbm", "pl_ref_db", "noise_floor_dbm"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(f"{name} must be finite")
        if not (self.pl_exponent >= 2):
            raise InvalidParameter(f"pl_exponent must be >= 2, got {self.pl_exponent}")

    @property
    def d0(self) -> float:
        return math.sqrt(self.eps_fs / self.eps_mp)


@dataclass
class Kinematics:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.vx, self.vy)):
            raise InvalidParameter("kinematic components must be finite")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.vx, self.vy)

    def distance_to(self, other: "Kinematics") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _check_nonneg(**kw) -> None:
    for name, v in kw.items():
        if not (0 <= v < math.inf):
            raise InvalidParameter(f"{name} must be a nonnegative finite number, got {v}")


def tx_energy(bits: float, d: float, p: RadioParams) -> float:
    if not (0 <= bits < math.inf and 0 <= d < math.inf):
        _check_nonneg(bits=bits, d=d)
    if d < p.d0:
        return bits * p.e_elec + bits * p.eps_fs * d * d
    return bits * p.e_elec + bits * p.eps_mp * d ** 4


def rx_energy(bits: float, p: RadioParams) -> float:
    if not (0 <= bits < math.inf):
        _check_nonneg(bits=bits)
    return bits * p.e_elec


def aggregation_energy(bits: float, signals: float, p: RadioParams) -> float:
    _check_nonneg(bits=bits, signals=signals)
    return signals * bits * p.e_da


def snr_db(d: float, p: RadioParams) -> float:
    """Deterministic SNR; distances below 1 m are clamped to the 1 m reference."""
    _check_nonneg(d=d)
    path_loss = p.pl_ref_db + 10.0 * p.pl_exponent * math.log10(max(d, 1.0))
    return p.tx_power_dbm - path_loss - p.noise_floor_dbm


def link_expiration_time(i: Kinematics, j: Kinematics, r: float) -> float:
    """Seconds until nodes ``i`` and ``j`` drift further apart than ``r``.

    Returns ``inf`` for in-range pairs moving in lockstep and 0 for pairs
    already out of range.
    """
    if not (r > 0 and math.isfinite(r)):
        raise InvalidParameter(f"range must be positive and finite, got {r}")
    for k in (i, j):
        if not all(math.isfinite(v) for v in (k.x, k.y, k.vx, k.vy)):
            raise InvalidParameter("kinematic components must be finite")
    a = i.vx - j.vx
    b = i.x - j.x
    c = i.vy - j.vy
    e = i.y - j.y
    if math.hypot(b, e) > r:
        return 0.0
    speed2 = a * a + c * c
    if speed2 == 0:
        return math.inf
    disc = speed2 * r * r - (a * e - b * c) ** 2
    if disc < 0:
        return 0.0
    return max(0.0, (-(a * b + c * e) + math.sqrt(disc)) / speed2)
