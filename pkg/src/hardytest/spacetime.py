"""Space-like-separation checks for the two-station geometry.

Two pairs of timing inequalities are verified with signed margins in
nanoseconds: locality (each station's setting choice and measurement
finish outside the light cone of the remote station's events) and
measurement independence (each setting choice is space-like separated
from the pair-creation event). The inequalities are strict: a margin of
exactly zero fails.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError

SPEED_OF_LIGHT_M_PER_NS = 0.299792458


@dataclass(frozen=True)
class SpacetimeConfig:
    """Geometry and timing of one run.

    Distances are meters, times nanoseconds. ``sa``/``sb`` are free-space
    source-to-station distances; ``lsa``/``lsb`` the effective optical
    path lengths (fiber length times group index), which can never beat
    the straight line. The defaults describe the reference setup: 93 m /
    90 m stations, 188 m / 169 m effective fiber paths, 10 ns pump pulses,
    96 ns random-bit generation, 270/230 ns bit delivery, 112/100 ns
    analyzer setup and 55/100 ns detector output.
    """

    sa: float = 93.0
    sb: float = 90.0
    lsa: float = 188.0
    lsb: float = 169.0
    t_e: float = 10.0
    t_qrng1: float = 96.0
    t_qrng2: float = 96.0
    t_delay1: float = 270.0
    t_delay2: float = 230.0
    t_pc1: float = 112.0
    t_pc2: float = 100.0
    t_m1: float = 55.0
    t_m2: float = 100.0
    c: float = SPEED_OF_LIGHT_M_PER_NS

    def __post_init__(self):
        if self.sa <= 0 or self.sb <= 0:
            raise ValidationError("distances must be positive")
        if self.c <= 0:
            raise ValidationError("speed of light must be positive")
        for name in ("t_e", "t_qrng1", "t_qrng2", "t_delay1", "t_delay2",
                     "t_pc1", "t_pc2", "t_m1", "t_m2"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.lsa < self.sa or self.lsb < self.sb:
            raise ValidationError(
                "effective optical path cannot be shorter than the straight line"
            )

    @classmethod
    def from_dict(cls, payload: dict) -> "SpacetimeConfig":
        return cls(**payload)


@dataclass(frozen=True)
class SeparationCheck:
    """Signed margins (ns) of one inequality pair; strict positivity passes."""

    margin1: float
    margin2: float

    @property
    def passed(self) -> bool:
        return self.margin1 > 0.0 and self.margin2 > 0.0

    def as_dict(self) -> dict:
        return {
            "margin1_ns": round(self.margin1, 1),
            "margin2_ns": round(self.margin2, 1),
            "passed": self.passed,
        }


def check_locality(cfg: SpacetimeConfig) -> SeparationCheck:
    """Margins for mutual space-like separation of the two measurements.

    The light-travel budget (sa + sb)/c must exceed the chain from pair
    emission through the remote station's setting generation, delivery,
    analyzer setup and detector output, shifted by the fiber-path
    asymmetry (lsa - lsb)/c.
    """
    flight = (cfg.sa + cfg.sb) / cfg.c
    skew = (cfg.lsa - cfg.lsb) / cfg.c
    margin1 = flight - (cfg.t_e - skew + cfg.t_qrng1 + cfg.t_delay1 + cfg.t_pc1 + cfg.t_m2)
    margin2 = flight - (cfg.t_e + skew + cfg.t_qrng2 + cfg.t_delay2 + cfg.t_pc2 + cfg.t_m1)
    return SeparationCheck(margin1, margin2)


def check_measurement_independence(cfg: SpacetimeConfig) -> SeparationCheck:
    """Margins separating each setting choice from the pair creation.

    A station's analyzer must be configured before light from the source
    could reach it: sa/c > lsa/c - t_delay - t_pc per side.
    """
    margin_a = cfg.sa / cfg.c - (cfg.lsa / cfg.c - cfg.t_delay1 - cfg.t_pc1)
    margin_b = cfg.sb / cfg.c - (cfg.lsb / cfg.c - cfg.t_delay2 - cfg.t_pc2)
    return SeparationCheck(margin_a, margin_b)


def full_report(cfg: SpacetimeConfig) -> dict:
    locality = check_locality(cfg)
    independence = check_measurement_independence(cfg)
    return {
        "locality": locality.as_dict(),
        "measurement_independence": independence.as_dict(),
        "passed": locality.passed and independence.passed,
    }
