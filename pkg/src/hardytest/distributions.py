"""Joint conditional outcome distributions for the two-station experiment.

A trial has settings x, y in {1, 2} and ternary outcomes a, b in
{0, 1, u}. Outcomes are encoded as integers 0, 1, 2 with 2 = u
(inconclusive: no click or a double click at that station). The same
encoding is used in record and counts files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError

OUTCOME_U = 2
OUTCOMES = (0, 1, OUTCOME_U)
SETTINGS = (1, 2)

_COND_SUM_TOL = 1e-10
_WEIGHT_SUM_TOL = 1e-12
_NEGATIVITY_TOL = -1e-12


def uniform_setting_weights() -> np.ndarray:
    """The default 1:1 random setting choice on both sides."""
    return np.full((2, 2), 0.25)


def outcome_index(value) -> int:
    """Map 0/1/2 or the label 'u' to the internal outcome index."""
    if value == "u":
        return OUTCOME_U
    value = int(value)
    if value not in (0, 1, 2):
        raise DomainError(f"outcome must be 0, 1, 2 or 'u', got {value!r}")
    return value


@dataclass(frozen=True)
class JointDistribution:
    """Conditional probabilities p(ab|xy) plus setting weights p_xy.

    ``cond`` has shape (2, 2, 3, 3) indexed [x-1, y-1, a, b];
    ``setting_weights`` has shape (2, 2) indexed [x-1, y-1].
    """

    cond: np.ndarray
    setting_weights: np.ndarray = field(default_factory=uniform_setting_weights)

    def __post_init__(self):
        cond = np.asarray(self.cond, dtype=float).reshape(2, 2, 3, 3)
        weights = np.asarray(self.setting_weights, dtype=float).reshape(2, 2)
        cond.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "cond", cond)
        object.__setattr__(self, "setting_weights", weights)
        if float(cond.min()) < _NEGATIVITY_TOL:
            raise ValidationError(f"negative conditional probability {cond.min()!r}")
        sums = cond.sum(axis=(2, 3))
        if float(np.max(np.abs(sums - 1.0))) > _COND_SUM_TOL:
            raise ValidationError(f"conditional blocks must sum to 1, got {sums!r}")
        if float(weights.min()) < _NEGATIVITY_TOL:
            raise ValidationError("negative setting weight")
        if abs(float(weights.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise ValidationError(f"setting weights sum to {weights.sum()!r}, expected 1")

    def probability(self, x: int, y: int, a, b) -> float:
        """p(ab|xy) with a, b given as 0, 1, 2 or 'u'."""
        if x not in SETTINGS or y not in SETTINGS:
            raise DomainError(f"settings must be in {{1, 2}}, got {(x, y)!r}")
        return float(self.cond[x - 1, y - 1, outcome_index(a), outcome_index(b)])

    def weighted_cells(self) -> np.ndarray:
        """p_xy * p(ab|xy), shape (2, 2, 3, 3); sums to 1."""
        return self.setting_weights[:, :, None, None] * self.cond

    def alice_marginal(self, x: int, y: int) -> np.ndarray:
        """p(a|xy) for a in (0, 1, u)."""
        return self.cond[x - 1, y - 1].sum(axis=1)

    def bob_marginal(self, x: int, y: int) -> np.ndarray:
        return self.cond[x - 1, y - 1].sum(axis=0)

    def no_signaling_residual(self) -> float:
        """Largest marginal shift induced by the remote setting choice."""
        alice = np.abs(
            self.cond[:, 0].sum(axis=2) - self.cond[:, 1].sum(axis=2)
        ).max()
        bob = np.abs(
            self.cond[0, :].sum(axis=1) - self.cond[1, :].sum(axis=1)
        ).max()
        return float(max(alice, bob))

    @classmethod
    def uniform(cls, setting_weights=None) -> "JointDistribution":
        """p(ab|xy) = 1/9 for every cell."""
        weights = uniform_setting_weights() if setting_weights is None else setting_weights
        return cls(np.full((2, 2, 3, 3), 1.0 / 9.0), weights)


class NoSignalingDistribution(JointDistribution):
    """JointDistribution whose marginals ignore the remote setting.

    Construction fails if the marginal-mismatch residual exceeds 1e-9.
    """

    NS_TOL = 1e-9

    def __post_init__(self):
        super().__post_init__()
        residual = self.no_signaling_residual()
        if residual > self.NS_TOL:
            raise ValidationError(
                f"no-signaling residual {residual!r} exceeds {self.NS_TOL}"
            )
