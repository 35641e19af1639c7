"""Tests for Hardy-value estimation, the PBR bound and the Z-tests."""

import math

import numpy as np
import pytest

from hardytest.analysis import (
    PBRResult,
    hardy_value_from_counts,
    iter_blocks,
    nosignaling_ztests,
    pbr_pvalue,
    prediction_ratio_table,
)
from hardytest.design import ImperfectionModel, optimal_design, predict_distribution
from hardytest.distributions import uniform_setting_weights
from hardytest.errors import DomainError, InsufficientDataError
from hardytest.projections import (
    LHVDistribution,
    project_lhv,
    project_no_signaling,
)
from hardytest.records import CountsTable
from hardytest.simulate import SimulationConfig, simulate

UNIFORM = uniform_setting_weights()

# the six headline probabilities of the reference run
HEADLINE = {
    "p00_11": 3.227e-3,
    "p0u_12": 1.157e-3,
    "pu0_21": 1.154e-3,
    "eps1": 1.120e-4,
    "eps2": 1.578e-4,
    "eps3": 1.818e-4,
}


def headline_counts(n_per_setting=1_080_000_000) -> CountsTable:
    counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
    cells = {
        (1, 1, 0, 0): HEADLINE["p00_11"],
        (1, 2, 0, 2): HEADLINE["p0u_12"],
        (2, 1, 2, 0): HEADLINE["pu0_21"],
        (2, 2, 0, 0): HEADLINE["eps1"],
        (1, 2, 0, 1): HEADLINE["eps2"],
        (2, 1, 1, 0): HEADLINE["eps3"],
    }
    for (x, y, a, b), p in cells.items():
        counts[x - 1, y - 1, a, b] = round(p * n_per_setting)
    for x in range(2):
        for y in range(2):
            counts[x, y, 2, 2] = n_per_setting - counts[x, y].sum()
    return CountsTable(counts, 4 * n_per_setting)


def multinomial_counts(dist, n_per_setting, rng) -> CountsTable:
    counts = np.empty((2, 2, 3, 3), dtype=np.int64)
    for x in range(2):
        for y in range(2):
            counts[x, y] = rng.multinomial(
                n_per_setting, dist.cond[x, y].reshape(9)
            ).reshape(3, 3)
    return CountsTable(counts, int(counts.sum()))


def random_lhv_distribution(rng, smoothing=0.2):
    weights = rng.dirichlet(np.full(81, 0.3)) * (1 - smoothing) + smoothing / 81.0
    return LHVDistribution.from_weights(weights).induced


class TestHardyValueFromCounts:
    def test_headline_value(self):
        report = hardy_value_from_counts(headline_counts())
        assert report.hardy_value == pytest.approx(4.646e-4, abs=5e-7)
        assert report.sigma > 0.0

    def test_all_inconclusive(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[:, :, 2, 2] = 100
        report = hardy_value_from_counts(CountsTable(counts, 400))
        assert report.hardy_value == 0.0

    def test_missing_setting_pair(self):
        arr = np.array([[1, 1, 0, 0], [1, 2, 0, 1], [2, 1, 1, 0]])
        with pytest.raises(InsufficientDataError):
            hardy_value_from_counts(CountsTable.from_records(arr))

    def test_sigma_against_bootstrap(self):
        dist = predict_distribution(
            optimal_design(0.82),
            ImperfectionModel.symmetric(0.82, 1.0, dark_prob=0.0),
            pair_mode="fixed_one",
        )
        rng = np.random.default_rng(42)
        counts = multinomial_counts(dist, 2_500_000, rng)
        binomial = hardy_value_from_counts(counts)
        bootstrap = hardy_value_from_counts(
            counts, sigma_method="bootstrap", n_resamples=200, seed=7
        )
        assert binomial.hardy_value == bootstrap.hardy_value
        assert abs(binomial.sigma - bootstrap.sigma) < 0.2 * bootstrap.sigma
        assert abs(binomial.hardy_value - 0.0128816) < 4 * binomial.sigma

    def test_unknown_sigma_method(self):
        with pytest.raises(DomainError):
            hardy_value_from_counts(headline_counts(), sigma_method="magic")


class TestPBRResult:
    def test_single_block_is_trivial(self):
        result = PBRResult.from_block_log_sums([0.0])
        assert result.log10_p_bound == 0.0
        assert result.blocks == 1

    def test_extreme_bound_representable(self):
        # synthetic stream totalling -16348 in log10: no overflow allowed
        per_block = 16348.0 * math.log(10.0) / 100.0
        result = PBRResult.from_block_log_sums([per_block] * 100)
        assert result.log10_p_bound == pytest.approx(-16348.0, abs=1e-9)
        assert math.isfinite(result.log10_p_bound)

    def test_bound_clipped_at_one(self):
        result = PBRResult.from_block_log_sums([-5.0, 2.0])
        assert result.log10_p_bound == 0.0

    def test_invariant_exponential_form(self):
        result = PBRResult.from_block_log_sums([3.0, 1.5])
        assert result.log10_p_bound == pytest.approx(
            math.log10(min(math.exp(-4.5), 1.0)), rel=1e-12
        )


class TestPredictionRatioTable:
    def test_missing_setting_pair_gives_none(self):
        arr = np.array([[1, 1, 0, 0], [1, 2, 0, 1], [2, 1, 1, 0]] * 5)
        assert prediction_ratio_table(CountsTable.from_records(arr), UNIFORM) is None

    def test_local_realism_bound_holds_on_vertices(self):
        rng = np.random.default_rng(3)
        dist = random_lhv_distribution(rng)
        counts = multinomial_counts(dist, 20_000, rng)
        ratio = prediction_ratio_table(counts, UNIFORM)
        from hardytest.projections import _strategy_table

        weighted = (UNIFORM[:, :, None, None] * ratio).reshape(36)
        assert float((_strategy_table() @ weighted).max()) <= 1.0 + 1e-12

    def test_quantum_data_bets_above_one_on_signal(self):
        dist = predict_distribution(
            optimal_design(0.82),
            ImperfectionModel.symmetric(0.82, 1.0, dark_prob=0.0),
            pair_mode="fixed_one",
        )
        rng = np.random.default_rng(4)
        counts = multinomial_counts(dist, 200_000, rng)
        ratio = prediction_ratio_table(counts, UNIFORM)
        assert ratio[0, 0, 0, 0] > 1.0  # the Hardy signal cell


class TestPbrPvalue:
    def test_supermartingale_under_lhv_blocks(self):
        # appending blocks drawn from the projected local model must not,
        # on average, improve the bound
        rng = np.random.default_rng(11)
        data = random_lhv_distribution(rng)
        basis = multinomial_counts(data, 50_000, rng)
        ratio = prediction_ratio_table(basis, UNIFORM)
        f = basis.frequencies(UNIFORM)
        lhv = project_lhv(project_no_signaling(f))
        block_n = 10_000
        deltas = []
        for _ in range(100):
            block = multinomial_counts(lhv.induced, block_n // 4, rng)
            occupied = block.counts > 0
            deltas.append(float(np.sum(block.counts[occupied] * np.log(ratio[occupied]))))
        deltas = np.array(deltas)
        stderr = deltas.std(ddof=1) / math.sqrt(len(deltas))
        assert deltas.mean() <= 3 * stderr

    def test_null_calibration_quick(self):
        # 40-seed version of the acceptance check (200 seeds there)
        rng = np.random.default_rng(13)
        rejected = 0
        for _ in range(40):
            data = random_lhv_distribution(rng)
            blocks = [multinomial_counts(data, 25_000, rng) for _ in range(4)]
            result = pbr_pvalue(blocks)
            if result.log10_p_bound < math.log10(0.05):
                rejected += 1
        assert rejected / 40 <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 40)

    def test_quantum_data_rejects_local_realism(self):
        cfg = SimulationConfig(
            design=optimal_design(0.82),
            imperfections=ImperfectionModel.symmetric(0.82, 1.0, dark_prob=0.0),
            n_trials=400_000,
            seed=17,
            pair_mode="fixed_one",
            n_partitions=4,
        )
        records = simulate(cfg, return_records=True).records.astype(np.int64)
        result = pbr_pvalue(records, block_size=50_000)
        # evidence rate is ~8.06e-4 bits/trial; 350k scored trials should
        # land within a factor ~2 of the asymptotic rate
        expected = 350_000 * 8.065e-4 * math.log10(2.0)
        assert -result.log10_p_bound > 0.4 * expected
        assert result.blocks == 8

    def test_records_and_blocks_agree(self):
        rng = np.random.default_rng(19)
        cfg = SimulationConfig(
            design=optimal_design(0.82),
            imperfections=ImperfectionModel.symmetric(0.82, 0.988),
            n_trials=60_000,
            seed=23,
            pair_mode="poisson",
            n_partitions=2,
        )
        records = simulate(cfg, return_records=True).records.astype(np.int64)
        by_records = pbr_pvalue(records, block_size=20_000)
        blocks = list(iter_blocks(records, 20_000))
        by_blocks = pbr_pvalue(blocks)
        np.testing.assert_allclose(
            by_records.block_log_sums, by_blocks.block_log_sums, rtol=1e-12
        )

    def test_empty_stream_rejected(self):
        with pytest.raises(InsufficientDataError):
            pbr_pvalue(np.empty((0, 4), dtype=np.int64), block_size=10)

    def test_bad_prediction_mode(self):
        with pytest.raises(DomainError):
            pbr_pvalue(np.array([[1, 1, 0, 0]]), block_size=1, prediction="future")

    def test_degenerate_prediction_basis_scores_one(self):
        # first block misses setting pair (2, 2); the second block must
        # then be scored with R = 1 (zero log contribution)
        partial = np.array([[1, 1, 0, 0], [1, 2, 0, 1], [2, 1, 1, 0]] * 10)
        rng = np.random.default_rng(37)
        data = random_lhv_distribution(rng)
        blocks = [
            CountsTable.from_records(partial),
            multinomial_counts(data, 1000, rng),
            multinomial_counts(data, 1000, rng),
        ]
        result = pbr_pvalue(blocks)
        assert result.block_log_sums[0] == 0.0
        assert result.block_log_sums[1] == 0.0
        assert result.block_log_sums[2] != 0.0

    def test_previous_block_mode_runs(self):
        rng = np.random.default_rng(29)
        data = random_lhv_distribution(rng)
        blocks = [multinomial_counts(data, 10_000, rng) for _ in range(3)]
        result = pbr_pvalue(blocks, prediction="previous")
        assert result.blocks == 3
        assert result.block_log_sums[0] == 0.0


class TestZTests:
    def test_identical_proportions(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[:, :, 0, 0] = 300
        counts[:, :, 1, 1] = 200
        counts[:, :, 2, 2] = 500
        results = nosignaling_ztests(CountsTable(counts, 4000))
        assert len(results) == 8
        for res in results:
            assert res.applicable
            assert res.z == 0.0
            assert res.p_value == 1.0

    def test_labels_cover_all_conditions(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[:, :, 0, 0] = 10
        results = nosignaling_ztests(CountsTable(counts, 40))
        labels = {r.label() for r in results}
        assert labels == {
            "alice_out0_x1", "alice_out1_x1", "alice_out0_x2", "alice_out1_x2",
            "bob_out0_y1", "bob_out1_y1", "bob_out0_y2", "bob_out1_y2",
        }

    def test_injected_signaling_detected(self):
        # shift Alice's outcome-0 probability by 10 sigma between y settings
        n = 10**7 // 4
        p = 0.3
        sigma = math.sqrt(p * (1 - p) * (2 / n))
        shift = 10.0 * sigma
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        for x in range(2):
            for y in range(2):
                p_here = p + (shift if (x == 0 and y == 1) else 0.0)
                counts[x, y, 0, 0] = round(n * p_here)
                counts[x, y, 1, 1] = round(n * 0.2)
                counts[x, y, 2, 2] = n - counts[x, y].sum()
        results = {r.label(): r for r in nosignaling_ztests(CountsTable(counts, 4 * n))}
        assert results["alice_out0_x1"].p_value < 1e-6
        assert results["alice_out0_x2"].p_value > 1e-6

    def test_not_applicable_on_empty_subsample(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 10
        counts[1, 0, 1, 1] = 5
        counts[1, 1, 2, 2] = 5
        results = nosignaling_ztests(CountsTable(counts, 20))
        assert any(not r.applicable for r in results)

    def test_null_calibration_quick(self):
        rng = np.random.default_rng(31)
        data = random_lhv_distribution(rng)
        below = np.zeros(8)
        seeds = 60
        for _ in range(seeds):
            counts = multinomial_counts(data, 250_000, rng)
            for i, res in enumerate(nosignaling_ztests(counts)):
                below[i] += res.p_value < 0.05
        for fraction in below / seeds:
            assert fraction <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / seeds)
