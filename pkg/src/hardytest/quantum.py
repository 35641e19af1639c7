"""Two-qubit states, single-angle observables and Born-rule probabilities.

Conventions (fixed once, used everywhere):

* Basis ordering is |00>, |01>, |10>, |11> with qubit 0 belonging to Alice.
* An observable with angle ``t`` is cos(t)*sigma_z + sin(t)*sigma_x.
  Outcome 0 is mapped to the +1 eigenvalue (the transmission port of the
  analyzer), outcome 1 to the -1 eigenvalue.
* All values are immutable after construction and safe to share across
  threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

# Values in [-PROB_CLAMP, 0) clamp to 0 and (1, 1 + PROB_CLAMP] clamp to 1;
# anything further out of range is an error.
PROB_CLAMP = 1e-12

_HERMITICITY_TOL = 1e-10
_TRACE_TOL = 1e-10
_EIGENVALUE_TOL = -1e-10
_NORM_TOL = 1e-12


def clamp_probability(value: float, tol: float = PROB_CLAMP) -> float:
    """Clamp float noise at the edges of [0, 1]; reject larger violations."""
    if -tol <= value < 0.0:
        return 0.0
    if 1.0 < value <= 1.0 + tol:
        return 1.0
    if value < -tol or value > 1.0 + tol:
        raise ValidationError(f"value {value!r} is not a probability")
    return value


@dataclass(frozen=True)
class TwoQubitPureState:
    """Pure two-qubit state as four amplitudes over |00>,|01>,|10>,|11>."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(4)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValidationError(f"state norm^2 = {norm!r}, expected 1")

    def density_matrix(self) -> "DensityMatrix":
        """Rank-1 projector |psi><psi| as a DensityMatrix."""
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """4x4 Hermitian, unit-trace, positive-semidefinite matrix."""

    entries: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=complex).reshape(4, 4)
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)
        if np.max(np.abs(rho - rho.conj().T)) > _HERMITICITY_TOL:
            raise ValidationError("density matrix is not Hermitian")
        trace = complex(np.trace(rho))
        if abs(trace - 1.0) > _TRACE_TOL:
            raise ValidationError(f"density matrix trace = {trace!r}, expected 1")
        eigenvalues = np.linalg.eigvalsh(rho)
        if float(eigenvalues.min()) < _EIGENVALUE_TOL:
            raise ValidationError(
                f"density matrix has negative eigenvalue {eigenvalues.min()!r}"
            )


@dataclass(frozen=True)
class Observable:
    """Binary observable cos(angle)*sigma_z + sin(angle)*sigma_x.

    ``projector0``/``projector1`` are the rank-1 eigenprojectors of the
    +1 and -1 eigenvalues. The angle is wrapped into [-pi, pi].
    """

    angle: float
    projector0: np.ndarray
    projector1: np.ndarray

    def __post_init__(self):
        for name in ("projector0", "projector1"):
            proj = np.asarray(getattr(self, name), dtype=complex).reshape(2, 2)
            proj.setflags(write=False)
            object.__setattr__(self, name, proj)

    def projector(self, outcome: int) -> np.ndarray:
        if outcome == 0:
            return self.projector0
        if outcome == 1:
            return self.projector1
        raise DomainError(f"conclusive outcome must be 0 or 1, got {outcome!r}")

    def eigenvector(self, outcome: int) -> np.ndarray:
        """Unit eigenvector for an outcome; projector(k) = |v_k><v_k|.

        Computing pure-state amplitudes from these vectors preserves the
        quadratic smallness of near-orthogonal overlaps, which the trace
        form of the projectors cannot.
        """
        half = self.angle / 2.0
        if outcome == 0:
            return np.array([math.cos(half), math.sin(half)], dtype=complex)
        if outcome == 1:
            return np.array([-math.sin(half), math.cos(half)], dtype=complex)
        raise DomainError(f"conclusive outcome must be 0 or 1, got {outcome!r}")


def make_state(theta: float) -> TwoQubitPureState:
    """Entangled state cos(theta)|01> + sin(theta)|10>.

    Args:
        theta: state parameter in [0, pi/2]. theta = pi/4 gives the
            maximally entangled state; 0 and pi/2 are product states.
    """
    if not 0.0 <= theta <= math.pi / 2:
        raise DomainError(f"theta = {theta!r} outside [0, pi/2]")
    return TwoQubitPureState(
        np.array([0.0, math.cos(theta), math.sin(theta), 0.0], dtype=complex)
    )


def observable_from_angle(angle: float) -> Observable:
    """Observable cos(angle)*sigma_z + sin(angle)*sigma_x with its projectors.

    The +1 eigenvector is (cos(angle/2), sin(angle/2)), so angle = 0
    reproduces sigma_z with projector0 = |0><0|, and angle = pi/2
    reproduces sigma_x. Angles are wrapped into [-pi, pi] first.
    """
    wrapped = math.remainder(angle, 2.0 * math.pi)
    half = wrapped / 2.0
    plus = np.array([math.cos(half), math.sin(half)], dtype=complex)
    minus = np.array([-math.sin(half), math.cos(half)], dtype=complex)
    return Observable(
        angle=wrapped,
        projector0=np.outer(plus, plus.conj()),
        projector1=np.outer(minus, minus.conj()),
    )


def born_joint(rho: DensityMatrix, pa: np.ndarray, pb: np.ndarray) -> float:
    """Joint outcome probability Tr[(pa x pb) rho].

    ``pa`` and ``pb`` are 2x2 projectors acting on Alice's and Bob's
    qubit. The result is clamped into [0, 1] within PROB_CLAMP.
    """
    product = np.kron(np.asarray(pa, dtype=complex), np.asarray(pb, dtype=complex))
    value = float(np.trace(product @ rho.entries).real)
    return clamp_probability(value)


def werner(theta: float, v: float) -> DensityMatrix:
    """Werner mixture V|psi(theta)><psi(theta)| + (1-V)/4 * I."""
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"visibility v = {v!r} outside [0, 1]")
    pure = make_state(theta)
    projector = np.outer(pure.amplitudes, pure.amplitudes.conj())
    return DensityMatrix(v * projector + (1.0 - v) / 4.0 * np.eye(4, dtype=complex))


def fidelity(rho: DensityMatrix, target: TwoQubitPureState) -> float:
    """Overlap <target| rho |target> in [0, 1]."""
    amps = target.amplitudes
    value = float((amps.conj() @ rho.entries @ amps).real)
    return clamp_probability(value)
