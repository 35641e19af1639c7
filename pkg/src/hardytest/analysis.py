"""Statistical analysis of trial data: Hardy value with uncertainty,
block-wise prediction-based-ratio p-value bounds, and no-signaling Z-tests.

The PBR test multiplies per-trial ratios R(abxy) predicted from earlier
blocks only, so no independence assumption is needed: the running product
is a supermartingale under local realism and its inverse bounds the
p-value. All accumulation happens in log space, which represents bounds
like 1e-16348 exactly as finite log10 values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import HardyReport
from .distributions import uniform_setting_weights
from .errors import DomainError, InsufficientDataError
from .projections import _strategy_table, project_lhv, project_no_signaling
from .records import CountsTable, records_as_array

DEFAULT_BLOCK_SIZE = 24_000_000

# the six estimated cells of the Hardy value, as (x, y, a, b)
_HARDY_CELLS = {
    "p00_11": (1, 1, 0, 0),
    "p0u_12": (1, 2, 0, 2),
    "pu0_21": (2, 1, 2, 0),
    "eps1": (2, 2, 0, 0),
    "eps2": (1, 2, 0, 1),
    "eps3": (2, 1, 1, 0),
}


def hardy_value_from_counts(
    counts: CountsTable,
    sigma_method: str = "binomial",
    n_resamples: int = 200,
    seed: int = 0,
) -> HardyReport:
    """Estimate the Hardy value and its uncertainty from event counts.

    Each probability is the plug-in estimate n(abxy)/n(xy). ``sigma`` is
    the quadrature sum of per-term binomial standard errors by default;
    ``sigma_method="bootstrap"`` replaces it with the standard deviation
    over multinomial resamples of each setting block.
    """
    totals = counts.setting_totals()
    if totals.min() == 0:
        raise InsufficientDataError("every setting pair needs at least one trial")
    estimates = {
        name: counts.count(*cell) / totals[cell[0] - 1, cell[1] - 1]
        for name, cell in _HARDY_CELLS.items()
    }

    if sigma_method == "binomial":
        variance = 0.0
        for name, cell in _HARDY_CELLS.items():
            p = estimates[name]
            variance += p * (1.0 - p) / totals[cell[0] - 1, cell[1] - 1]
        sigma = math.sqrt(variance)
    elif sigma_method == "bootstrap":
        sigma = _bootstrap_sigma(counts, n_resamples, seed)
    else:
        raise DomainError(f"sigma_method must be 'binomial' or 'bootstrap', got {sigma_method!r}")

    return HardyReport.from_probabilities(
        eps1=estimates["eps1"],
        eps2=estimates["eps2"],
        eps3=estimates["eps3"],
        p00_11=estimates["p00_11"],
        p0u_12=estimates["p0u_12"],
        pu0_21=estimates["pu0_21"],
        sigma=sigma,
    )


def _bootstrap_sigma(counts: CountsTable, n_resamples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    totals = counts.setting_totals()
    values = np.empty(n_resamples)
    probs = counts.counts / totals[:, :, None, None]
    for i in range(n_resamples):
        resampled = np.empty_like(counts.counts)
        for x in range(2):
            for y in range(2):
                resampled[x, y] = rng.multinomial(
                    int(totals[x, y]), probs[x, y].reshape(9)
                ).reshape(3, 3)
        table = CountsTable(resampled, int(resampled.sum()))
        values[i] = hardy_value_from_counts(table, sigma_method="binomial").hardy_value
    return float(values.std(ddof=1))


# ---------------------------------------------------------------------------
# Prediction-based-ratio hypothesis test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PBRResult:
    """Per-block log-ratio sums and the final log10 p-value bound."""

    block_log_sums: np.ndarray
    log10_p_bound: float
    blocks: int
    block_size: int

    def __post_init__(self):
        sums = np.asarray(self.block_log_sums, dtype=float)
        sums.setflags(write=False)
        object.__setattr__(self, "block_log_sums", sums)

    @property
    def total_log_ratio(self) -> float:
        return float(self.block_log_sums.sum())

    @classmethod
    def from_block_log_sums(cls, sums, block_size: int = 0) -> "PBRResult":
        sums = np.asarray(sums, dtype=float)
        total = float(sums.sum())
        log10_p = min(-total / math.log(10.0), 0.0)
        return cls(sums, log10_p, int(sums.size), int(block_size))


def prediction_ratio_table(
    pooled: CountsTable, setting_weights: np.ndarray
) -> np.ndarray | None:
    """Ratio table R(abxy) learned from pooled prior data, or None.

    Returns None when the pooled data misses a whole setting pair (the
    caller then scores the block with R = 1). The table is rescaled so the
    local-realism bound <R> <= 1 holds exactly: first normalized against
    the projected local model, then divided by the largest expectation
    over the 81 deterministic strategies if that still exceeds 1.
    """
    if pooled.setting_totals().min() == 0:
        return None
    f = pooled.frequencies(setting_weights)
    ns = project_no_signaling(f)
    lhv = project_lhv(ns)
    lr_cells = lhv.induced.cond
    ns_cells = ns.cond
    if np.any((lr_cells == 0.0) & (ns_cells > 0.0)):
        lr_cells = (1.0 - 1e-9) * lr_cells + 1e-9 / 9.0
    ratio = np.divide(
        ns_cells, lr_cells, out=np.zeros_like(ns_cells), where=lr_cells > 0.0
    )
    weighted_lr = setting_weights[:, :, None, None] * lr_cells
    scale = float(np.sum(weighted_lr * ratio))
    if scale > 0.0:
        ratio = ratio / scale
    weighted_ratio = (setting_weights[:, :, None, None] * ratio).reshape(36)
    vertex_max = float((_strategy_table() @ weighted_ratio).max())
    if vertex_max > 1.0:
        ratio = ratio / vertex_max
    return ratio


def _block_log_sum(block: CountsTable, ratio: np.ndarray | None) -> float:
    """Sum of ln R over a block's trials; -inf if a zero-ratio cell occurs."""
    if ratio is None:
        return 0.0
    counts = block.counts
    occupied = counts > 0
    if np.any(occupied & (ratio <= 0.0)):
        return -math.inf
    return float(np.sum(counts[occupied] * np.log(ratio[occupied])))


def iter_blocks(records, block_size: int):
    """Yield CountsTable blocks from records or pass through pre-blocked data."""
    if isinstance(records, (list, tuple)) and records and isinstance(records[0], CountsTable):
        yield from records
        return
    arr = records_as_array(records)
    if block_size < 1:
        raise DomainError(f"block_size must be >= 1, got {block_size!r}")
    for start in range(0, arr.shape[0], block_size):
        yield CountsTable.from_records(arr[start : start + block_size])


def pbr_pvalue(
    records,
    block_size: int = DEFAULT_BLOCK_SIZE,
    setting_weights: np.ndarray | None = None,
    prediction: str = "cumulative",
) -> PBRResult:
    """Bound the p-value of local realism from a stream of trials.

    ``records`` is an (N, 4) array of rows (x, y, a, b), a sequence of
    TrialRecord, or a pre-blocked sequence of CountsTable. The first block
    always scores R = 1; block i >= 2 scores the ratio table learned from
    blocks 1..i-1 (``prediction="cumulative"``, the default) or from block
    i-1 alone (``prediction="previous"``). Blocks whose prediction basis
    misses a setting pair score R = 1 as a degenerate-data guard.
    """
    if prediction not in ("cumulative", "previous"):
        raise DomainError(
            f"prediction must be 'cumulative' or 'previous', got {prediction!r}"
        )
    weights = uniform_setting_weights() if setting_weights is None else np.asarray(
        setting_weights, dtype=float
    ).reshape(2, 2)

    block_sums: list[float] = []
    pooled = CountsTable.empty()
    ratio = None
    for block in iter_blocks(records, block_size):
        block_sums.append(_block_log_sum(block, ratio))
        if prediction == "cumulative":
            pooled = pooled.merge(block)
            basis = pooled
        else:
            basis = block
        ratio = prediction_ratio_table(basis, weights)
    if not block_sums:
        raise InsufficientDataError("record stream is empty")
    return PBRResult.from_block_log_sums(np.array(block_sums), block_size)


# ---------------------------------------------------------------------------
# Two-proportion Z-tests of no-signaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZTestResult:
    """One no-signaling condition: the remote setting must not shift a
    local outcome probability."""

    party: str
    setting: int
    outcome: int
    n_first: int
    n_second: int
    p_first: float
    p_second: float
    z: float
    p_value: float
    applicable: bool

    def label(self) -> str:
        setting_name = ("x" if self.party == "alice" else "y")
        return f"{self.party}_out{self.outcome}_{setting_name}{self.setting}"

    def as_dict(self) -> dict:
        return {
            "condition": self.label(),
            "party": self.party,
            "setting": self.setting,
            "outcome": self.outcome,
            "n_first": self.n_first,
            "n_second": self.n_second,
            "p_first": self.p_first,
            "p_second": self.p_second,
            "z": self.z,
            "p_value": self.p_value,
            "applicable": self.applicable,
        }


def _two_proportion_ztest(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    variance = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if variance == 0.0:
        return 0.0, 1.0
    z = (p1 - p2) / math.sqrt(variance)
    return z, math.erfc(abs(z) / math.sqrt(2.0))


def nosignaling_ztests(counts: CountsTable) -> list[ZTestResult]:
    """Eight pooled two-proportion Z-tests of the no-signaling conditions.

    For each local setting and conclusive outcome, the outcome proportion
    is compared across the two remote settings; two-sided p-values use the
    normal approximation. Conditions with an empty subsample are flagged
    not applicable.
    """
    results = []
    table = counts.counts
    totals = counts.setting_totals()
    for party in ("alice", "bob"):
        for setting in (1, 2):
            for outcome in (0, 1):
                if party == "alice":
                    n1, n2 = int(totals[setting - 1, 0]), int(totals[setting - 1, 1])
                    k1 = int(table[setting - 1, 0, outcome, :].sum())
                    k2 = int(table[setting - 1, 1, outcome, :].sum())
                else:
                    n1, n2 = int(totals[0, setting - 1]), int(totals[1, setting - 1])
                    k1 = int(table[0, setting - 1, :, outcome].sum())
                    k2 = int(table[1, setting - 1, :, outcome].sum())
                if n1 == 0 or n2 == 0:
                    results.append(
                        ZTestResult(
                            party, setting, outcome, n1, n2,
                            math.nan, math.nan, math.nan, math.nan, False,
                        )
                    )
                    continue
                z, p_value = _two_proportion_ztest(k1, n1, k2, n2)
                results.append(
                    ZTestResult(
                        party, setting, outcome, n1, n2,
                        k1 / n1, k2 / n2, z, p_value, True,
                    )
                )
    return results
