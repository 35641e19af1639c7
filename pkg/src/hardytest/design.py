"""Optimal experiment design versus detection efficiency, and the analytic
prediction of the full three-outcome joint distribution under imperfections.

The design family is parameterized by a single state angle ``theta``; the
four measurement angles follow from it via the closed-form relations

    tan(theta_a2 / 2) =  (cos/sin)**0.5     tan(theta_b2 / 2) = -(sin/cos)**0.5
    tan(theta_a1 / 2) = -(cos/sin)**1.5     tan(theta_b1 / 2) =  (sin/cos)**1.5

which make the three Hardy-condition probabilities exactly zero for the
pure state at any detection efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quantum
from .distributions import JointDistribution, uniform_setting_weights
from .errors import DomainError, ValidationError

# Detection efficiency below which no positive Hardy value is achievable.
ETA_THRESHOLD = 2.0 / 3.0

# Reference-system defaults: 5 dark counts/s at a 200 kHz trial rate, and a
# mean pair number per pulse chosen so the predicted conclusive-event rates
# match the reference experiment (see ImperfectionModel docstring).
DEFAULT_DARK_PROB = 2.5e-5
DEFAULT_MEAN_PAIRS = 0.08

_ANGLE_IDENTITY_TOL = 1e-9

PAIR_MODES = ("fixed_one", "poisson", "poisson_exact")


def _check_eta_open(eta: float) -> None:
    if not ETA_THRESHOLD < eta <= 1.0:
        raise DomainError(
            f"eta = {eta!r}: no positive Hardy value achievable for "
            f"eta <= 2/3 (and eta cannot exceed 1)"
        )


def optimal_theta(eta: float) -> float:
    """State angle maximizing the Hardy value at detection efficiency eta.

    Closed form: theta = arcsin(3 - sqrt((6 eta - 1) / (2 eta - 1))) / 2,
    valid for eta in (2/3, 1]. This is also the argmax of the penalized
    Hardy value over theta in (0, pi/4).
    """
    _check_eta_open(eta)
    return 0.5 * math.asin(3.0 - math.sqrt((6.0 * eta - 1.0) / (2.0 * eta - 1.0)))


def max_hardy_value(eta: float) -> float:
    """Largest achievable Hardy value at detection efficiency eta.

    Accepts the closed interval [2/3, 1]; the value is 0 at the 2/3
    threshold and (5*sqrt(5) - 11)/2 at unit efficiency.
    """
    if not ETA_THRESHOLD <= eta <= 1.0:
        raise DomainError(
            f"eta = {eta!r}: no positive Hardy value achievable for "
            f"eta < 2/3 (and eta cannot exceed 1)"
        )
    root = math.sqrt(1.0 + 4.0 * eta * (3.0 * eta - 2.0))
    return 0.5 * (1.0 - root) + 3.0 * eta * (1.0 - 3.0 * eta + root)


def design_angles(theta: float) -> tuple[float, float, float, float]:
    """Measurement angles (a1, a2, b1, b2) for a given state angle.

    Valid for theta in (0, pi/4]; at theta = pi/4 the second settings
    degenerate to +/- pi/2.
    """
    if not 0.0 < theta <= math.pi / 4:
        raise DomainError(f"theta = {theta!r} outside (0, pi/4]")
    cot = math.cos(theta) / math.sin(theta)
    tan = math.sin(theta) / math.cos(theta)
    theta_a2 = 2.0 * math.atan(math.sqrt(cot))
    theta_b2 = -2.0 * math.atan(math.sqrt(tan))
    theta_a1 = -2.0 * math.atan(cot**1.5)
    theta_b1 = 2.0 * math.atan(tan**1.5)
    return theta_a1, theta_a2, theta_b1, theta_b2


@dataclass(frozen=True)
class HardyDesign:
    """State angle plus the four measurement angles of the optimal family."""

    theta: float
    theta_a1: float
    theta_a2: float
    theta_b1: float
    theta_b2: float

    def __post_init__(self):
        if not 0.0 < self.theta <= math.pi / 4:
            raise ValidationError(f"theta = {self.theta!r} outside (0, pi/4]")
        expected = design_angles(self.theta)
        actual = (self.theta_a1, self.theta_a2, self.theta_b1, self.theta_b2)
        for name, have, want in zip(
            ("theta_a1", "theta_a2", "theta_b1", "theta_b2"), actual, expected
        ):
            if abs(have - want) > _ANGLE_IDENTITY_TOL:
                raise ValidationError(
                    f"{name} = {have!r} violates the design angle identity "
                    f"(expected {want!r})"
                )

    @classmethod
    def from_theta(cls, theta: float) -> "HardyDesign":
        return cls(theta, *design_angles(theta))

    def alice_observables(self) -> tuple[quantum.Observable, quantum.Observable]:
        return (
            quantum.observable_from_angle(self.theta_a1),
            quantum.observable_from_angle(self.theta_a2),
        )

    def bob_observables(self) -> tuple[quantum.Observable, quantum.Observable]:
        return (
            quantum.observable_from_angle(self.theta_b1),
            quantum.observable_from_angle(self.theta_b2),
        )


def optimal_design(eta: float) -> HardyDesign:
    """Optimal state and measurement angles for detection efficiency eta."""
    return HardyDesign.from_theta(optimal_theta(eta))


def ideal_hardy_probabilities(theta: float, eta: float) -> tuple[float, float, float]:
    """Closed forms for the three nonzero probabilities of the ideal test.

    Returns (p00_11, p0u_12, pu0_21) for the pure state at symmetric
    detection efficiency eta: the signal probability P(00|A1 B1) and the
    two single-sided inconclusive probabilities P(0u|A1 B2), P(u0|A2 B1).
    """
    if not 0.0 < theta < math.pi / 4:
        raise DomainError(f"theta = {theta!r} outside (0, pi/4)")
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta = {eta!r} outside [0, 1]")
    c, s = math.cos(theta), math.sin(theta)
    cs = c * s
    p00_11 = eta**2 * (cs * (c - s) / (1.0 - cs)) ** 2
    p_single_u = eta * (1.0 - eta) * cs**2 / (1.0 - cs)
    return p00_11, p_single_u, p_single_u


@dataclass(frozen=True)
class ImperfectionModel:
    """Source and detector imperfections for prediction and simulation.

    Per-path detection efficiencies are indexed by outcome: ``eta_a0`` is
    Alice's transmission (outcome 0) path, ``eta_a1`` her reflection
    (outcome 1) path, and likewise for Bob. ``visibility`` mixes the pure
    design state with white noise; ``dark_prob`` is the per-detector,
    per-trial dark-count probability; ``mean_pairs`` is the mean photon
    pair number per pulse of the source.

    The defaults for ``dark_prob`` and ``mean_pairs`` describe the
    reference system: 5 dark counts/s at a 200 kHz repetition rate, and a
    pair rate that reproduces its observed conclusive-event probabilities
    (about 7.7% of pulses carrying at least one pair).
    """

    eta_a0: float
    eta_a1: float
    eta_b0: float
    eta_b1: float
    visibility: float = 1.0
    dark_prob: float = DEFAULT_DARK_PROB
    mean_pairs: float = DEFAULT_MEAN_PAIRS

    def __post_init__(self):
        for name in ("eta_a0", "eta_a1", "eta_b0", "eta_b1", "visibility"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} = {value!r} outside [0, 1]")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValidationError(f"dark_prob = {self.dark_prob!r} outside [0, 1)")
        if not (math.isfinite(self.mean_pairs) and self.mean_pairs >= 0.0):
            raise ValidationError(f"mean_pairs = {self.mean_pairs!r} must be finite and >= 0")

    @classmethod
    def symmetric(
        cls,
        eta: float,
        visibility: float = 1.0,
        dark_prob: float = DEFAULT_DARK_PROB,
        mean_pairs: float = DEFAULT_MEAN_PAIRS,
    ) -> "ImperfectionModel":
        """All four detector paths at the same efficiency."""
        return cls(eta, eta, eta, eta, visibility, dark_prob, mean_pairs)

    def alice_efficiencies(self) -> np.ndarray:
        return np.array([self.eta_a0, self.eta_a1])

    def bob_efficiencies(self) -> np.ndarray:
        return np.array([self.eta_b0, self.eta_b1])


@dataclass(frozen=True)
class HardyReport:
    """Hardy value decomposition with its statistical uncertainty.

    ``hardy_value`` always equals
    p00_11 - p0u_12 - pu0_21 - (eps1 + eps2 + eps3) for the stored
    components; ``sigma`` is 0 for exact distributions.
    """

    eps1: float
    eps2: float
    eps3: float
    p00_11: float
    p0u_12: float
    pu0_21: float
    hardy_value: float
    sigma: float

    @classmethod
    def from_probabilities(
        cls,
        eps1: float,
        eps2: float,
        eps3: float,
        p00_11: float,
        p0u_12: float,
        pu0_21: float,
        sigma: float = 0.0,
    ) -> "HardyReport":
        hardy_value = p00_11 - p0u_12 - pu0_21 - (eps1 + eps2 + eps3)
        return cls(eps1, eps2, eps3, p00_11, p0u_12, pu0_21, hardy_value, sigma)

    def as_dict(self) -> dict:
        return {
            "eps1": self.eps1,
            "eps2": self.eps2,
            "eps3": self.eps3,
            "p00_11": self.p00_11,
            "p0u_12": self.p0u_12,
            "pu0_21": self.pu0_21,
            "hardy_value": self.hardy_value,
            "sigma": self.sigma,
        }


# ---------------------------------------------------------------------------
# Click-level prediction machinery.
#
# Per station, a trial ends in one of four click states encoded as a bitmask:
# bit 0 = outcome-0 detector clicked, bit 1 = outcome-1 detector clicked.
# Exactly one click is a conclusive outcome; none or both map to u.
# ---------------------------------------------------------------------------

_MAX_PAIRS_EXACT = 8


def born_outcome_table(design: HardyDesign, visibility: float) -> np.ndarray:
    """Born probabilities q[x-1, y-1, a, b] for conclusive a, b of one pair.

    Evaluates the Werner mixture as V |<v_a v_b|psi>|^2 + (1 - V)/4; going
    through the amplitude keeps the design's exact-zero cells at ~1e-34
    instead of the ~1e-17 rounding dust a projector trace would leave.
    """
    psi = quantum.make_state(design.theta).amplitudes
    alice = design.alice_observables()
    bob = design.bob_observables()
    table = np.empty((2, 2, 2, 2))
    for xi, obs_a in enumerate(alice):
        for yi, obs_b in enumerate(bob):
            for a in (0, 1):
                for b in (0, 1):
                    vec = np.kron(obs_a.eigenvector(a), obs_b.eigenvector(b))
                    amplitude = vec.conj() @ psi
                    pure = float(abs(amplitude) ** 2)
                    table[xi, yi, a, b] = visibility * pure + (1.0 - visibility) / 4.0
    return table


def _single_pair_clicks(q_xy: np.ndarray, eta_a: np.ndarray, eta_b: np.ndarray) -> np.ndarray:
    """Joint click-state distribution (4, 4) left by one photon pair."""
    dist = np.zeros((4, 4))
    for a in (0, 1):
        for b in (0, 1):
            q = q_xy[a, b]
            pa, pb = eta_a[a], eta_b[b]
            for sa, wa in ((1 << a, pa), (0, 1.0 - pa)):
                for sb, wb in ((1 << b, pb), (0, 1.0 - pb)):
                    dist[sa, sb] += q * wa * wb
    return dist


def _apply_dark_counts(dist: np.ndarray, dark_prob: float) -> np.ndarray:
    """Independent dark clicks on each of the four detectors."""
    if dark_prob == 0.0:
        return dist
    out = dist.copy()
    # Alice-side bits act on axis 0, Bob-side on axis 1. A dark click on a
    # detector that already fired changes nothing, so only bit-free states
    # shed probability.
    for axis in (0, 1):
        for bit in (1, 2):
            new = out.copy()
            for state in range(4):
                if state & bit:
                    continue
                src = (state, slice(None)) if axis == 0 else (slice(None), state)
                dst = (state | bit, slice(None)) if axis == 0 else (slice(None), state | bit)
                new[dst] = new[dst] + out[src] * dark_prob
                new[src] = out[src] * (1.0 - dark_prob)
            out = new
    return out


def _clicks_to_outcomes(dist: np.ndarray) -> np.ndarray:
    """Map the (4, 4) click-state distribution to (3, 3) outcomes."""
    outcome_of = {0: 2, 1: 0, 2: 1, 3: 2}
    out = np.zeros((3, 3))
    for sa in range(4):
        for sb in range(4):
            out[outcome_of[sa], outcome_of[sb]] += dist[sa, sb]
    return out


def predict_distribution(
    design: HardyDesign,
    imperfections: ImperfectionModel,
    setting_weights: np.ndarray | None = None,
    pair_mode: str = "poisson",
    max_pairs: int = _MAX_PAIRS_EXACT,
) -> JointDistribution:
    """Analytic outcome distribution for a design under imperfections.

    ``pair_mode`` selects the source model:

    * ``"fixed_one"``: exactly one pair per trial.
    * ``"poisson"``: a vacuum component exp(-mean_pairs) yielding (u, u),
      with the whole remaining weight treated as a single pair. This is
      the standard analytic model; genuine multi-pair effects are left to
      the Monte Carlo engine.
    * ``"poisson_exact"``: Poisson pair numbers up to ``max_pairs`` with
      independent pairs whose clicks are OR-ed per detector - the same
      model the Monte Carlo engine samples, useful as a cross-check
      oracle.

    Dark counts are composed exactly as independent per-detector clicks,
    which keeps every conditional block normalized for any dark_prob.
    """
    if pair_mode not in PAIR_MODES:
        raise DomainError(f"pair_mode must be one of {PAIR_MODES}, got {pair_mode!r}")
    weights = uniform_setting_weights() if setting_weights is None else np.asarray(
        setting_weights, dtype=float
    )
    q = born_outcome_table(design, imperfections.visibility)
    eta_a = imperfections.alice_efficiencies()
    eta_b = imperfections.bob_efficiencies()
    mu = imperfections.mean_pairs

    cond = np.empty((2, 2, 3, 3))
    for xi in range(2):
        for yi in range(2):
            one_pair = _single_pair_clicks(q[xi, yi], eta_a, eta_b)
            if pair_mode == "fixed_one":
                clicks = one_pair
            elif pair_mode == "poisson":
                vacuum = math.exp(-mu)
                clicks = (1.0 - vacuum) * one_pair
                clicks[0, 0] += vacuum
            else:
                clicks = _poisson_clicks(one_pair, mu, max_pairs)
            clicks = _apply_dark_counts(clicks, imperfections.dark_prob)
            cond[xi, yi] = _clicks_to_outcomes(clicks)
    return JointDistribution(cond, weights)


def _poisson_clicks(one_pair: np.ndarray, mu: float, max_pairs: int) -> np.ndarray:
    """Poisson mixture of n-fold OR-convolutions of the one-pair clicks."""
    weights = [math.exp(-mu) * mu**n / math.factorial(n) for n in range(max_pairs + 1)]
    total = sum(weights)
    out = np.zeros((4, 4))
    out[0, 0] = weights[0]
    term = None
    for n in range(1, max_pairs + 1):
        term = one_pair if term is None else _or_convolve(term, one_pair)
        out += weights[n] * term
    return out / total


def _or_convolve(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Union-convolution of two independent (4, 4) click distributions."""
    out = np.zeros((4, 4))
    for sa in range(4):
        for sb in range(4):
            w = first[sa, sb]
            if w == 0.0:
                continue
            for ta in range(4):
                for tb in range(4):
                    out[sa | ta, sb | tb] += w * second[ta, tb]
    return out


def hardy_value_from_distribution(dist: JointDistribution) -> HardyReport:
    """Hardy value of an exact distribution (sigma = 0).

    The three condition probabilities are eps1 = p(00|22), eps2 = p(01|12)
    and eps3 = p(10|21); the value is
    p(00|11) - p(0u|12) - p(u0|21) - (eps1 + eps2 + eps3).
    """
    return HardyReport.from_probabilities(
        eps1=dist.probability(2, 2, 0, 0),
        eps2=dist.probability(1, 2, 0, 1),
        eps3=dist.probability(2, 1, 1, 0),
        p00_11=dist.probability(1, 1, 0, 0),
        p0u_12=dist.probability(1, 2, 0, "u"),
        pu0_21=dist.probability(2, 1, "u", 0),
        sigma=0.0,
    )
