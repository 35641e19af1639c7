"""Maximum-likelihood two-qubit state tomography from 36-basis counts.

Measurement bases are the products of the six single-qubit states H, V,
D = (H+V)/sqrt2, A = (H-V)/sqrt2, R = (H+iV)/sqrt2, L = (H-iV)/sqrt2,
ordered Alice-major: HH, HV, HD, ..., LL. Counts files use the two-letter
labels with that convention.

The density matrix is parameterized as rho(t) = T(t)^dag T(t) / trace,
with T lower triangular built from 16 real parameters, which enforces
positivity, Hermiticity and unit trace for any finite t. The fit
minimizes the Gaussian-approximation statistic
sum_mu (N p_mu(t) - n_mu)^2 / (2 N p_mu(t)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .errors import (
    ConvergenceError,
    DataFormatError,
    DomainError,
    ValidationError,
)
from .quantum import DensityMatrix, TwoQubitPureState
from .quantum import fidelity as state_fidelity

SINGLE_QUBIT_LABELS = "HVDARL"
TOMO_LABELS = tuple(a + b for a in SINGLE_QUBIT_LABELS for b in SINGLE_QUBIT_LABELS)

# floor for expected counts in the statistic's denominator, relative to N
EXPECTED_FLOOR = 1e-9

_SQRT2 = math.sqrt(2.0)

_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQRT2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQRT2,
    "R": np.array([1.0, 1.0j], dtype=complex) / _SQRT2,
    "L": np.array([1.0, -1.0j], dtype=complex) / _SQRT2,
}

# positions of the 16 parameters in the lower-triangular T, as
# (row, col, imaginary?) in parameter order t1..t16
_T_SLOTS = (
    (0, 0, False), (1, 1, False), (2, 2, False), (3, 3, False),
    (1, 0, False), (1, 0, True),
    (2, 1, False), (2, 1, True),
    (3, 2, False), (3, 2, True),
    (2, 0, False), (2, 0, True),
    (3, 1, False), (3, 1, True),
    (3, 0, False), (3, 0, True),
)


@lru_cache(maxsize=1)
def basis_projectors() -> np.ndarray:
    """The 36 rank-1 product projectors, shape (36, 4, 4), TOMO_LABELS order."""
    projectors = np.empty((36, 4, 4), dtype=complex)
    for idx, label in enumerate(TOMO_LABELS):
        ket = np.kron(_KETS[label[0]], _KETS[label[1]])
        projectors[idx] = np.outer(ket, ket.conj())
    projectors.setflags(write=False)
    return projectors


@dataclass(frozen=True)
class TomoCounts:
    """Coincidence counts for the 36 bases plus the flux normalization N."""

    n: np.ndarray
    n_total_scale: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(36)
        n.setflags(write=False)
        object.__setattr__(self, "n", n)
        if float(n.min()) < 0.0:
            raise ValidationError("counts must be nonnegative")
        if not self.n_total_scale > 0.0:
            raise ValidationError("n_total_scale must be positive")

    def to_json_dict(self) -> dict:
        return {
            "N": self.n_total_scale,
            "counts": {label: float(v) for label, v in zip(TOMO_LABELS, self.n)},
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TomoCounts":
        try:
            scale = float(payload["N"])
            raw = payload["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"tomography file missing field: {exc}") from exc
        missing = [label for label in TOMO_LABELS if label not in raw]
        if missing:
            raise DataFormatError(f"tomography counts missing bases: {missing[:4]}...")
        return cls(np.array([float(raw[label]) for label in TOMO_LABELS]), scale)


def read_tomo_json(path) -> TomoCounts:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(
                f"tomography file is not valid JSON: {exc}", line_number=exc.lineno
            ) from exc
    return TomoCounts.from_json_dict(payload)


def write_tomo_json(path, counts: TomoCounts) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(counts.to_json_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")


def t_matrix(t: np.ndarray) -> np.ndarray:
    """Lower-triangular T from the 16 real parameters."""
    t = np.asarray(t, dtype=float).reshape(16)
    T = np.zeros((4, 4), dtype=complex)
    for value, (row, col, imag) in zip(t, _T_SLOTS):
        T[row, col] += 1j * value if imag else value
    return T


def rho_from_t(t) -> DensityMatrix:
    """Physical density matrix T(t)^dag T(t) normalized to unit trace."""
    t = np.asarray(t, dtype=float).reshape(16)
    if not np.all(np.isfinite(t)):
        raise DomainError("t parameters must be finite")
    T = t_matrix(t)
    gram = T.conj().T @ T
    trace = float(np.trace(gram).real)
    if trace <= 1e-300:
        raise DomainError("t parameters give zero trace; density matrix undefined")
    return DensityMatrix(gram / trace)


def expected_probabilities(rho: DensityMatrix) -> np.ndarray:
    """Born probabilities of the 36 basis projectors, shape (36,)."""
    return np.einsum("mij,ji->m", basis_projectors(), rho.entries).real


def expected_counts(rho: DensityMatrix, total: float) -> np.ndarray:
    """Noise-free expected coincidence counts at flux normalization total."""
    return total * expected_probabilities(rho)


def likelihood(t, counts: TomoCounts) -> float:
    """The fitted statistic: sum (N p - n)^2 / (2 N max(p, floor))."""
    return _statistic(np.asarray(t, dtype=float).reshape(16), counts)[0]


def likelihood_gradient(t, counts: TomoCounts) -> np.ndarray:
    """Analytic gradient of ``likelihood`` with respect to t."""
    return _statistic(np.asarray(t, dtype=float).reshape(16), counts)[1]


def _statistic(t: np.ndarray, counts: TomoCounts) -> tuple[float, np.ndarray]:
    T = t_matrix(t)
    gram = T.conj().T @ T
    tau = float(np.trace(gram).real)
    if tau <= 1e-300:
        raise DomainError("t parameters give zero trace")
    rho = gram / tau
    projectors = basis_projectors()
    p = np.einsum("mij,ji->m", projectors, rho).real
    n = counts.n
    total = counts.n_total_scale

    q = np.maximum(p, EXPECTED_FLOOR)
    residual = total * p - n
    value = float(np.sum(residual**2 / (2.0 * total * q)))

    # dL/dp has two branches depending on whether the floor is active
    w = np.where(
        p > EXPECTED_FLOOR,
        (total**2 * p**2 - n**2) / (2.0 * total * q**2),
        residual / EXPECTED_FLOOR,
    )
    # chain rule through rho = G / tau: dp/dG = (Pi - p I) / tau, so the
    # matrix gradient is dL = tr(dG W) with the Hermitian W below
    w_matrix = np.tensordot(w, projectors, axes=(0, 0))
    w_matrix -= float(w @ p) * np.eye(4)
    w_matrix /= tau
    tw = T @ w_matrix
    grad = np.empty(16)
    for k, (row, col, imag) in enumerate(_T_SLOTS):
        grad[k] = 2.0 * (tw[row, col].imag if imag else tw[row, col].real)
    return value, grad


def _flip(matrix: np.ndarray) -> np.ndarray:
    return matrix[::-1, ::-1]


def _t_params_from_density(rho: np.ndarray) -> np.ndarray:
    """Parameters reproducing a strictly positive density matrix.

    Uses the reversed-order Cholesky factorization rho = T^dag T with T
    lower triangular.
    """
    lower = np.linalg.cholesky(_flip(rho))
    T = _flip(lower.conj().T)
    t = np.empty(16)
    for k, (row, col, imag) in enumerate(_T_SLOTS):
        t[k] = T[row, col].imag if imag else T[row, col].real
    return t


def _linear_inversion_start(counts: TomoCounts) -> np.ndarray:
    """Least-squares estimate projected to strictly positive spectrum."""
    projectors = basis_projectors()
    design = projectors.transpose(0, 2, 1).reshape(36, 16)  # row: vec(Pi^T)
    target = counts.n / counts.n_total_scale
    solution = np.linalg.lstsq(design, target.astype(complex), rcond=None)[0]
    rho = solution.reshape(4, 4)
    rho = (rho + rho.conj().T) / 2.0
    values, vectors = np.linalg.eigh(rho)
    values = np.clip(values.real, 1e-6, None)
    rho = (vectors * values) @ vectors.conj().T
    rho /= np.trace(rho).real
    return _t_params_from_density(rho)


def _fallback_start() -> np.ndarray:
    t = np.zeros(16)
    t[:4] = 0.5  # T = I/2, the maximally mixed state
    return t


def reconstruct(
    counts: TomoCounts,
    target: TwoQubitPureState | None = None,
    max_iterations: int = 4000,
) -> tuple[DensityMatrix, float | None]:
    """Maximum-likelihood density matrix, plus fidelity to ``target``.

    Starts from the positivity-projected linear-inversion estimate
    (falling back to the maximally mixed state) and runs a quasi-Newton
    minimization with the analytic gradient; convergence is declared when
    the statistic improves by less than 1e-10 (relative) over an
    iteration. Non-convergence raises ConvergenceError carrying the best
    iterate found.
    """
    if int(np.sum(counts.n > 0.0)) < 16:
        raise ValidationError(
            "reconstruction needs at least 16 strictly positive counts"
        )
    try:
        t0 = _linear_inversion_start(counts)
        if not np.all(np.isfinite(t0)):
            t0 = _fallback_start()
    except np.linalg.LinAlgError:
        t0 = _fallback_start()

    result = minimize(
        _statistic,
        t0,
        args=(counts,),
        method="L-BFGS-B",
        jac=True,
        options={"ftol": 1e-10, "gtol": 1e-14, "maxiter": max_iterations,
                 "maxfun": 10 * max_iterations},
    )
    rho = rho_from_t(result.x)
    if result.nit >= max_iterations:
        raise ConvergenceError(
            f"tomography fit hit the iteration limit {max_iterations}",
            best_result=rho,
            diagnostics={"statistic": float(result.fun), "iterations": result.nit},
        )
    if target is None:
        return rho, None
    return rho, state_fidelity(rho, target)
