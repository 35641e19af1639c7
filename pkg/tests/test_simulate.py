"""Monte Carlo engine tests: determinism, source statistics and physics."""

import math

import numpy as np
import pytest

from hardytest.design import ImperfectionModel, optimal_design, predict_distribution
from hardytest.errors import DomainError, ValidationError
from hardytest.simulate import (
    SimulationConfig,
    sample_pair_count,
    simulate,
    simulate_trial,
)


def config(n_trials=100_000, seed=7, eta=0.82, v=1.0, dark=0.0, mu=0.08,
           pair_mode="fixed_one", partitions=4):
    return SimulationConfig(
        design=optimal_design(eta),
        imperfections=ImperfectionModel.symmetric(eta, v, dark_prob=dark, mean_pairs=mu),
        n_trials=n_trials,
        seed=seed,
        pair_mode=pair_mode,
        n_partitions=partitions,
    )


class TestSamplePairCount:
    def test_zero_mean(self):
        rng = np.random.default_rng(1)
        assert all(sample_pair_count(0.0, rng) == 0 for _ in range(100))

    def test_sample_mean(self):
        rng = np.random.default_rng(2)
        draws = np.array([sample_pair_count(0.01, rng) for _ in range(10**6)])
        assert 0.0097 <= draws.mean() <= 0.0103  # 3 sigma binomial bound

    def test_multi_pair_tail(self):
        rng = np.random.default_rng(3)
        draws = np.array([sample_pair_count(0.01, rng) for _ in range(10**6)])
        expected = 1.0 - math.exp(-0.01) * 1.01
        fraction = (draws >= 2).mean()
        sigma = math.sqrt(expected * (1 - expected) / 10**6)
        assert abs(fraction - expected) <= 3 * sigma

    def test_negative_mean_rejected(self):
        with pytest.raises(DomainError):
            sample_pair_count(-0.1, np.random.default_rng(0))


class TestConfigValidation:
    def test_zero_trials_rejected(self):
        with pytest.raises(ValidationError):
            config(n_trials=0)

    def test_bad_pair_mode_rejected(self):
        with pytest.raises(ValidationError):
            config(pair_mode="exact")

    def test_bad_weights_rejected(self):
        with pytest.raises(ValidationError):
            SimulationConfig(
                design=optimal_design(0.82),
                imperfections=ImperfectionModel.symmetric(0.82),
                n_trials=10,
                seed=1,
                setting_weights=np.array([[0.5, 0.5], [0.5, 0.5]]),
            )


class TestDeterminism:
    def test_same_seed_identical(self):
        cfg = config(n_trials=50_000)
        first = simulate(cfg)
        second = simulate(cfg)
        np.testing.assert_array_equal(first.counts.counts, second.counts.counts)

    def test_worker_count_irrelevant(self):
        cfg = config(n_trials=50_000, partitions=8)
        base = simulate(cfg, workers=1)
        threaded = simulate(cfg, workers=4)
        np.testing.assert_array_equal(base.counts.counts, threaded.counts.counts)

    def test_records_interleaving_deterministic(self):
        cfg = config(n_trials=10_000, partitions=3)
        first = simulate(cfg, return_records=True)
        second = simulate(cfg, workers=2, return_records=True)
        np.testing.assert_array_equal(first.records, second.records)

    def test_different_seeds_differ(self):
        first = simulate(config(seed=1, n_trials=50_000))
        second = simulate(config(seed=2, n_trials=50_000))
        assert not np.array_equal(first.counts.counts, second.counts.counts)


class TestPhysics:
    def test_zero_conditions_never_fire(self):
        res = simulate(config(n_trials=10**6, seed=11))
        counts = res.counts
        assert counts.count(2, 2, 0, 0) == 0
        assert counts.count(1, 2, 0, 1) == 0
        assert counts.count(2, 1, 1, 0) == 0

    def test_vacuum_only(self):
        cfg = config(n_trials=10_000, mu=0.0, pair_mode="poisson")
        res = simulate(cfg)
        assert res.counts.count(1, 1, 2, 2) + res.counts.count(1, 2, 2, 2) \
            + res.counts.count(2, 1, 2, 2) + res.counts.count(2, 2, 2, 2) == 10_000

    def test_hardy_value_converges(self):
        res = simulate(config(n_trials=10**6, seed=13))
        counts = res.counts
        totals = counts.setting_totals()

        def phat(x, y, a, b):
            return counts.count(x, y, a, b) / totals[x - 1, y - 1]

        cells = [(1, 1, 0, 0), (1, 2, 0, 2), (2, 1, 2, 0),
                 (2, 2, 0, 0), (1, 2, 0, 1), (2, 1, 1, 0)]
        value = phat(*cells[0]) - sum(phat(*c) for c in cells[1:])
        sigma = math.sqrt(
            sum(phat(*c) * (1 - phat(*c)) / totals[c[0] - 1, c[1] - 1] for c in cells)
        )
        assert abs(value - 0.0128816) <= 3 * sigma

    def test_setting_marginals(self):
        n = 200_000
        res = simulate(config(n_trials=n, seed=17))
        totals = res.counts.setting_totals()
        for frac in (totals / n).reshape(4):
            sigma = math.sqrt(0.25 * 0.75 / n)
            assert abs(frac - 0.25) <= 4 * sigma

    def test_conditional_distributions_converge(self):
        # total-variation distance against the analytic single-pair model
        n = 400_000
        res = simulate(config(n_trials=n, seed=19, v=0.97))
        predicted = predict_distribution(
            optimal_design(0.82),
            ImperfectionModel.symmetric(0.82, 0.97, dark_prob=0.0),
            pair_mode="fixed_one",
        )
        freq = res.counts.frequencies()
        totals = res.counts.setting_totals()
        for x in range(2):
            for y in range(2):
                tv = 0.5 * np.abs(freq.cond[x, y] - predicted.cond[x, y]).sum()
                assert tv < 5.0 / math.sqrt(totals[x, y])

    def test_empirical_no_signaling(self):
        res = simulate(config(n_trials=10**6, seed=23, v=0.99, dark=2.5e-5,
                              mu=0.08, pair_mode="poisson"))
        counts = res.counts.counts
        totals = res.counts.setting_totals()
        for x in range(2):
            for a in range(3):
                k1 = counts[x, 0, a, :].sum()
                k2 = counts[x, 1, a, :].sum()
                p1, p2 = k1 / totals[x, 0], k2 / totals[x, 1]
                pooled = (k1 + k2) / (totals[x, 0] + totals[x, 1])
                if pooled in (0.0, 1.0):
                    continue
                se = math.sqrt(pooled * (1 - pooled) * (1 / totals[x, 0] + 1 / totals[x, 1]))
                assert abs(p1 - p2) < 5 * se

    def test_double_clicks_grow_with_mu(self):
        rates = []
        for mu in (0.001, 0.01, 0.05):
            res = simulate(config(n_trials=300_000, seed=29, mu=mu, pair_mode="poisson"))
            rates.append(res.stats.double_clicks_alice + res.stats.double_clicks_bob)
        assert rates[0] < rates[1] < rates[2]

    def test_multi_pair_statistics_match_poisson(self):
        mu = 0.05
        n = 400_000
        res = simulate(config(n_trials=n, seed=31, mu=mu, pair_mode="poisson"))
        expected = (1.0 - math.exp(-mu) * (1.0 + mu)) * n
        assert abs(res.stats.multi_pair_trials - expected) < 5 * math.sqrt(expected)


class TestReferenceScaleRun:
    def test_one_percent_of_reference_scale(self):
        # 4.32e7 trials at the reference system's imperfections; the
        # empirical Hardy value must be positive and match the exact
        # multi-pair analytic model within 3 standard errors
        imperfections = ImperfectionModel(
            0.821, 0.824, 0.821, 0.822, visibility=0.988
        )
        design = optimal_design(0.82)
        cfg = SimulationConfig(
            design=design,
            imperfections=imperfections,
            n_trials=43_200_000,
            seed=43_200_000,
            pair_mode="poisson",
            n_partitions=8,
        )
        counts = simulate(cfg, workers=4).counts
        predicted = predict_distribution(design, imperfections, pair_mode="poisson_exact")
        totals = counts.setting_totals()

        def phat(x, y, a, b):
            return counts.count(x, y, a, b) / totals[x - 1, y - 1]

        cells = [(1, 1, 0, 0), (1, 2, 0, 2), (2, 1, 2, 0),
                 (2, 2, 0, 0), (1, 2, 0, 1), (2, 1, 1, 0)]
        empirical = phat(*cells[0]) - sum(phat(*c) for c in cells[1:])
        sigma = math.sqrt(
            sum(phat(*c) * (1 - phat(*c)) / totals[c[0] - 1, c[1] - 1] for c in cells)
        )
        from hardytest.design import hardy_value_from_distribution

        analytic = hardy_value_from_distribution(predicted).hardy_value
        assert empirical > 0.0
        assert abs(empirical - analytic) <= 3.0 * sigma


class TestSimulateTrial:
    def test_returns_valid_records(self):
        rng = np.random.default_rng(3)
        cfg = config(n_trials=10, mu=0.08, pair_mode="poisson", dark=1e-3)
        for _ in range(200):
            rec = simulate_trial(cfg, rng)
            assert rec.x in (1, 2) and rec.y in (1, 2)
            assert rec.a in (0, 1, 2) and rec.b in (0, 1, 2)

    def test_distribution_agrees_with_batch_engine(self):
        # coarse chi-square-style comparison on pooled outcome frequencies
        cfg = config(n_trials=20_000, seed=37, v=0.95)
        rng = np.random.default_rng(37)
        scalar = np.zeros((2, 2, 3, 3))
        for _ in range(20_000):
            rec = simulate_trial(cfg, rng)
            scalar[rec.x - 1, rec.y - 1, rec.a, rec.b] += 1
        batch = simulate(cfg).counts.counts
        pooled_scalar = scalar.sum(axis=(0, 1)) / 20_000
        pooled_batch = batch.sum(axis=(0, 1)) / 20_000
        assert np.abs(pooled_scalar - pooled_batch).max() < 0.02

    def test_record_file_written(self, tmp_path):
        cfg = config(n_trials=500)
        path = tmp_path / "records.csv"
        simulate(cfg, record_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,a,b"
        assert len(lines) == 501
