"""Trial-level Monte Carlo engine for the two-station experiment.

The engine is deterministic given (seed, n_trials, n_partitions): partition
j of k owns the trials with index congruent to j mod k and draws from its
own counter-based Philox stream, so any worker count reproduces identical
output. Worker threads only change who computes a partition, never what it
produces.

Each trial: draw settings, draw a pair count from the source model, give
every pair a Born-rule outcome for the chosen settings, thin each photon
by its detector-path efficiency, add independent dark clicks, then map the
per-station click pattern to an outcome (exactly one click is conclusive;
none or both is u).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import HardyDesign, ImperfectionModel, born_outcome_table
from .distributions import uniform_setting_weights
from .errors import DomainError, ValidationError
from .records import CountsTable, TrialRecord, write_records_csv

_CHUNK_SIZE = 1 << 20  # fixed: part of the determinism contract

SIM_PAIR_MODES = ("poisson", "fixed_one")


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a reproducible batch run needs."""

    design: HardyDesign
    imperfections: ImperfectionModel
    n_trials: int
    seed: int
    pair_mode: str = "poisson"
    setting_weights: np.ndarray = field(default_factory=uniform_setting_weights)
    n_partitions: int = 1

    def __post_init__(self):
        if int(self.n_trials) < 1:
            raise ValidationError(f"n_trials must be >= 1, got {self.n_trials!r}")
        object.__setattr__(self, "n_trials", int(self.n_trials))
        object.__setattr__(self, "seed", int(self.seed))
        if self.pair_mode not in SIM_PAIR_MODES:
            raise ValidationError(
                f"pair_mode must be one of {SIM_PAIR_MODES}, got {self.pair_mode!r}"
            )
        weights = np.asarray(self.setting_weights, dtype=float).reshape(2, 2)
        if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError("setting weights must be nonnegative and sum to 1")
        weights.setflags(write=False)
        object.__setattr__(self, "setting_weights", weights)
        if int(self.n_partitions) < 1:
            raise ValidationError("n_partitions must be >= 1")
        object.__setattr__(self, "n_partitions", int(self.n_partitions))


@dataclass(frozen=True)
class SimulationStats:
    """Side-channel tallies that are invisible in the ternary outcomes."""

    vacuum_trials: int
    multi_pair_trials: int
    double_clicks_alice: int
    double_clicks_bob: int


@dataclass(frozen=True)
class SimulationResult:
    counts: CountsTable
    stats: SimulationStats
    records: np.ndarray | None = None


def sample_pair_count(mu: float, rng: np.random.Generator) -> int:
    """Poisson-distributed photon-pair number for one pulse."""
    if not (math.isfinite(mu) and mu >= 0.0):
        raise DomainError(f"mean pair number must be finite and >= 0, got {mu!r}")
    return int(rng.poisson(mu))


class _TrialTables:
    """Precomputed per-setting sampling tables shared by all partitions."""

    def __init__(self, config: SimulationConfig):
        q = born_outcome_table(config.design, config.imperfections.visibility)
        # rows indexed by flat setting s = 2*(x-1) + (y-1); columns by the
        # flat pair outcome 2*a + b. Final cumulative cell is forced to 1 so
        # a uniform draw always lands.
        cum = np.cumsum(q.reshape(4, 4), axis=1)
        cum[:, -1] = np.maximum(cum[:, -1], 1.0)
        self.outcome_cum = cum
        self.setting_cum = np.cumsum(config.setting_weights.reshape(4))
        self.setting_cum[-1] = max(self.setting_cum[-1], 1.0)
        self.eta_a = config.imperfections.alice_efficiencies()
        self.eta_b = config.imperfections.bob_efficiencies()
        self.dark = config.imperfections.dark_prob
        self.mu = config.imperfections.mean_pairs
        self.poisson = config.pair_mode == "poisson"


def _simulate_chunk(tables: _TrialTables, rng: np.random.Generator, m: int):
    """Simulate m trials; returns (setting index, a, b) plus stats tuple."""
    s = np.searchsorted(tables.setting_cum, rng.random(m), side="left").astype(np.int8)
    if tables.poisson:
        npairs = rng.poisson(tables.mu, m)
    else:
        npairs = np.ones(m, dtype=np.int64)

    clicks_a0 = np.zeros(m, dtype=bool)
    clicks_a1 = np.zeros(m, dtype=bool)
    clicks_b0 = np.zeros(m, dtype=bool)
    clicks_b1 = np.zeros(m, dtype=bool)

    for nu in np.unique(npairs):
        if nu == 0:
            continue
        idx = np.nonzero(npairs == nu)[0]
        cum_rows = tables.outcome_cum[s[idx]]
        draws = rng.random((idx.size, int(nu)))
        # first cumulative bin >= draw, per pair
        outcome = (draws[:, :, None] > cum_rows[:, None, :]).sum(axis=2)
        path_a = outcome >> 1
        path_b = outcome & 1
        det_a = rng.random((idx.size, int(nu))) < tables.eta_a[path_a]
        det_b = rng.random((idx.size, int(nu))) < tables.eta_b[path_b]
        clicks_a0[idx] = ((path_a == 0) & det_a).any(axis=1)
        clicks_a1[idx] = ((path_a == 1) & det_a).any(axis=1)
        clicks_b0[idx] = ((path_b == 0) & det_b).any(axis=1)
        clicks_b1[idx] = ((path_b == 1) & det_b).any(axis=1)

    if tables.dark > 0.0:
        clicks_a0 |= rng.random(m) < tables.dark
        clicks_a1 |= rng.random(m) < tables.dark
        clicks_b0 |= rng.random(m) < tables.dark
        clicks_b1 |= rng.random(m) < tables.dark

    a = np.where(clicks_a0 & ~clicks_a1, 0, np.where(clicks_a1 & ~clicks_a0, 1, 2))
    b = np.where(clicks_b0 & ~clicks_b1, 0, np.where(clicks_b1 & ~clicks_b0, 1, 2))
    stats = (
        int((npairs == 0).sum()),
        int((npairs >= 2).sum()),
        int((clicks_a0 & clicks_a1).sum()),
        int((clicks_b0 & clicks_b1).sum()),
    )
    return s, a.astype(np.int8), b.astype(np.int8), stats


def _partition_rng(seed: int, partition: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(partition,)))
    )


def _run_partition(config: SimulationConfig, tables: _TrialTables, partition: int,
                   keep_records: bool):
    rng = _partition_rng(config.seed, partition)
    n_own = _partition_length(config.n_trials, config.n_partitions, partition)
    counts = np.zeros(36, dtype=np.int64)
    stats = np.zeros(4, dtype=np.int64)
    chunks = [] if keep_records else None
    done = 0
    while done < n_own:
        m = min(_CHUNK_SIZE, n_own - done)
        s, a, b, chunk_stats = _simulate_chunk(tables, rng, m)
        code = s.astype(np.int64) * 9 + a.astype(np.int64) * 3 + b.astype(np.int64)
        counts += np.bincount(code, minlength=36)
        stats += np.asarray(chunk_stats, dtype=np.int64)
        if keep_records:
            chunks.append(np.column_stack([(s >> 1) + 1, (s & 1) + 1, a, b]).astype(np.int8))
        done += m
    records = np.concatenate(chunks) if keep_records and chunks else None
    if keep_records and records is None:
        records = np.empty((0, 4), dtype=np.int8)
    return counts, stats, records


def _partition_length(n_trials: int, k: int, partition: int) -> int:
    return (n_trials - partition + k - 1) // k if partition < n_trials else 0


def simulate(
    config: SimulationConfig,
    workers: int = 1,
    record_path=None,
    return_records: bool = False,
) -> SimulationResult:
    """Run the configured batch and count every trial.

    ``workers`` only parallelizes over the config's partitions and has no
    effect on the result. Records are materialized (and optionally written
    as CSV) only when asked for; plain counting runs in constant memory.
    """
    keep_records = return_records or record_path is not None
    tables = _TrialTables(config)
    k = config.n_partitions
    if workers <= 1 or k == 1:
        outputs = [_run_partition(config, tables, j, keep_records) for j in range(k)]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, k)) as pool:
            futures = [
                pool.submit(_run_partition, config, tables, j, keep_records)
                for j in range(k)
            ]
            outputs = [f.result() for f in futures]

    counts = np.zeros(36, dtype=np.int64)
    stats = np.zeros(4, dtype=np.int64)
    for part_counts, part_stats, _ in outputs:
        counts += part_counts
        stats += part_stats

    records = None
    if keep_records:
        records = np.empty((config.n_trials, 4), dtype=np.int8)
        for j, (_, _, part_records) in enumerate(outputs):
            records[j::k] = part_records
        if record_path is not None:
            write_records_csv(record_path, records)

    table = CountsTable(counts.reshape(2, 2, 3, 3), config.n_trials)
    result_stats = SimulationStats(*(int(v) for v in stats))
    return SimulationResult(
        counts=table,
        stats=result_stats,
        records=records if return_records else None,
    )


def simulate_trial(config: SimulationConfig, rng: np.random.Generator) -> TrialRecord:
    """Draw a single trial; the scalar reference path of the engine."""
    tables = _TrialTables(config)
    s = int(np.searchsorted(tables.setting_cum, rng.random(), side="left"))
    n_pairs = sample_pair_count(tables.mu, rng) if tables.poisson else 1
    clicks_a = [False, False]
    clicks_b = [False, False]
    for _ in range(n_pairs):
        outcome = int(np.searchsorted(tables.outcome_cum[s], rng.random(), side="left"))
        path_a, path_b = outcome >> 1, outcome & 1
        if rng.random() < tables.eta_a[path_a]:
            clicks_a[path_a] = True
        if rng.random() < tables.eta_b[path_b]:
            clicks_b[path_b] = True
    if tables.dark > 0.0:
        for side in (clicks_a, clicks_b):
            for det in (0, 1):
                if rng.random() < tables.dark:
                    side[det] = True
    a = 0 if clicks_a == [True, False] else 1 if clicks_a == [False, True] else 2
    b = 0 if clicks_b == [True, False] else 1 if clicks_b == [False, True] else 2
    return TrialRecord(x=(s >> 1) + 1, y=(s & 1) + 1, a=a, b=b)
