"""Tests for the rejection-sampled conditioned market."""

import unittest

import numpy as np
import pytest

from shadowprice.conditioned_model import (
    GRID_ONLY_NOTE,
    ConditionedSampler,
    Tube,
    acceptance_curve,
    acceptance_rate,
    bayes_ratio_check,
    sample_conditioned,
    sample_conditioned_ensemble,
)
from shadowprice.core import DiversityRegion, MarketPath, RngStream, TimeGrid
from shadowprice.errors import AcceptanceTooRareError, PreconditionError
from shadowprice.sde_engine import VolatilitySpec, simulate_ensemble
from shadowprice.stats import two_sample_ks


def _sampler(sigma: float, delta: float = 0.2, n: int = 2, max_attempts: int = 10_000) -> ConditionedSampler:
    return ConditionedSampler(VolatilitySpec.scalar(sigma, n), DiversityRegion(delta, n), max_attempts)


class TestSampleConditioned(unittest.TestCase):
    """Test cases for sample_conditioned."""

    def setUp(self):
        """Set up a grid."""
        self.grid = TimeGrid(1.0, 50)

    def test_zero_volatility_accepts_first_attempt(self):
        """Test that sigma = 0 returns the constant path at s0."""
        sampler = ConditionedSampler(VolatilitySpec.constant(np.zeros((2, 2))), DiversityRegion(0.2, 2), 1)
        path = sample_conditioned(sampler, self.grid, [1.0, 1.0], RngStream(1))
        np.testing.assert_allclose(path.values, 1.0)

    def test_start_outside_region(self):
        """Test that s0 outside O(delta) is a precondition error."""
        with self.assertRaises(PreconditionError):
            sample_conditioned(_sampler(0.2), self.grid, [9.0, 1.0], RngStream(1))

    def test_paths_stay_in_region(self):
        """Test that every returned path lies in O(delta) at every grid point."""
        sampler = _sampler(0.6)
        ensemble = sample_conditioned_ensemble(sampler, self.grid, [1.0, 1.0], RngStream(2), 200)
        self.assertTrue(np.all(sampler.region.contains_rows(ensemble.values)))

    def test_ensemble_matches_single_draws(self):
        """Test that ensemble path p equals sample_conditioned with rng.substream(p)."""
        sampler = _sampler(0.6)
        rng = RngStream(3)
        ensemble = sample_conditioned_ensemble(sampler, self.grid, [1.0, 1.0], rng, 6)
        single = sample_conditioned(sampler, self.grid, [1.0, 1.0], rng.substream(4))
        np.testing.assert_allclose(ensemble.values[4], single.values, rtol=1e-13)

    def test_acceptance_too_rare(self):
        """Test that an exhausted attempt budget raises AcceptanceTooRareError."""
        sampler = _sampler(1.0, delta=0.49, max_attempts=3)
        with self.assertRaises(AcceptanceTooRareError) as ctx:
            sample_conditioned(sampler, self.grid, [1.0, 1.0], RngStream(4))
        self.assertEqual(ctx.exception.attempts, 3)
        self.assertIn("rate_upper_95", ctx.exception.to_dict()["details"])

    def test_matches_filtering_oracle(self):
        """Test the conditioned law of mu_(1)(T) against filtered pre-model paths (KS at 1%)."""
        sampler = _sampler(0.6)
        conditioned = sample_conditioned_ensemble(sampler, self.grid, [1.0, 1.0], RngStream(5), 2000)
        free = simulate_ensemble(
            self.grid, [1.0, 1.0], sampler.pre_model.drift, sampler.vol, RngStream(6), 6000
        ).values
        kept = free[sampler.stays_in_region(free)]
        self.assertGreater(len(kept), 1000)
        _, pvalue = two_sample_ks(conditioned.max_weights()[:, -1], kept[:, -1].max(axis=1) / kept[:, -1].sum(axis=1))
        self.assertGreater(pvalue, 0.01)

    @pytest.mark.slow
    def test_matches_filtering_oracle_acceptance(self):
        """Test the KS comparison with 10^4 accepted paths on each side."""
        sampler = _sampler(0.6)
        grid = TimeGrid(1.0, 100)
        conditioned = sample_conditioned_ensemble(sampler, grid, [1.0, 1.0], RngStream(7), 10_000)
        free = simulate_ensemble(grid, [1.0, 1.0], sampler.pre_model.drift, sampler.vol, RngStream(8), 30_000).values
        kept = free[sampler.stays_in_region(free)][:10_000]
        self.assertEqual(len(kept), 10_000)
        _, pvalue = two_sample_ks(conditioned.max_weights()[:, -1], kept[:, -1].max(axis=1) / kept[:, -1].sum(axis=1))
        self.assertGreater(pvalue, 0.01)


class TestAcceptanceRate(unittest.TestCase):
    """Test cases for acceptance_rate and acceptance_curve."""

    def setUp(self):
        """Set up a grid."""
        self.grid = TimeGrid(1.0, 50)

    def test_zero_volatility_rate_one(self):
        """Test that sigma = 0 and s0 in O give rate 1."""
        sampler = ConditionedSampler(VolatilitySpec.constant(np.zeros((2, 2))), DiversityRegion(0.2, 2))
        report = acceptance_rate(sampler, self.grid, [1.0, 1.0], 100, RngStream(1))
        self.assertEqual(report.rate, 1.0)
        self.assertEqual(report.note, GRID_ONLY_NOTE)

    def test_empty_region_rate_zero(self):
        """Test that an empty O(delta) gives rate 0."""
        report = acceptance_rate(_sampler(0.2, delta=0.5), self.grid, [1.0, 1.0], 100, RngStream(1))
        self.assertEqual(report.rate, 0.0)
        self.assertEqual(report.n_accepted, 0)

    def test_rate_strictly_between(self):
        """Test that a moderately volatile pre-model has a rate in (0, 1) with a Wilson interval around it."""
        report = acceptance_rate(_sampler(0.6), self.grid, [1.0, 1.0], 2000, RngStream(2))
        self.assertGreater(report.rate, 0.0)
        self.assertLess(report.rate, 1.0)
        self.assertLessEqual(report.lower, report.rate)
        self.assertGreaterEqual(report.upper, report.rate)

    def test_small_volatility_rarely_rejects(self):
        """Test n=2, delta=0.2, sigma=0.2 I, T=1: almost every path stays in O."""
        report = acceptance_rate(_sampler(0.2), self.grid, [1.0, 1.0], 2000, RngStream(3))
        self.assertGreater(report.rate, 0.95)

    def test_monotone_in_sigma_scale(self):
        """Test that acceptance does not increase with the volatility scale."""
        base = _sampler(0.3)
        cases = [(base.scaled(f), self.grid) for f in (1.0, 2.0, 3.0)]
        rates = [r.rate for r in acceptance_curve(cases, [1.0, 1.0], 1000, RngStream(4))]
        self.assertGreaterEqual(rates[0], rates[1])
        self.assertGreaterEqual(rates[1], rates[2])

    def test_monotone_in_horizon(self):
        """Test that acceptance does not increase with T."""
        sampler = _sampler(0.6)
        cases = [(sampler, TimeGrid(T, 50)) for T in (0.5, 1.0, 2.0)]
        rates = [r.rate for r in acceptance_curve(cases, [1.0, 1.0], 1000, RngStream(5))]
        self.assertGreaterEqual(rates[0], rates[1])
        self.assertGreaterEqual(rates[1], rates[2])


class TestBayesRatioCheck(unittest.TestCase):
    """Test cases for bayes_ratio_check."""

    def setUp(self):
        """Set up a sampler and a constant reference path."""
        self.grid = TimeGrid(1.0, 20)
        self.sampler = _sampler(0.6)
        self.reference = MarketPath(self.grid, np.ones((21, 2)))

    def test_infinite_tube(self):
        """Test that an infinite tube gives frequency one on both sides."""
        report = bayes_ratio_check(
            self.sampler, self.grid, [1.0, 1.0], 0, Tube(self.reference, np.inf), 300, RngStream(1)
        )
        self.assertEqual(report.ratio_estimate, 1.0)
        self.assertEqual(report.conditioned_estimate, 1.0)
        self.assertEqual(report.status, "consistent")

    def test_unconditional_ratio_agrees(self):
        """Test that t_index = 0 gives two estimators of the same number (z < 3)."""
        report = bayes_ratio_check(
            self.sampler, self.grid, [1.0, 1.0], 0, Tube(self.reference, 0.5), 3000, RngStream(2)
        )
        self.assertEqual(report.pre_model_matched, 3000)
        self.assertEqual(report.status, "consistent")
        self.assertLess(report.z_score, 3.0)

    def test_too_few_matches_inconclusive(self):
        """Test that insufficient matched paths give an inconclusive report, not an error."""
        report = bayes_ratio_check(
            self.sampler, self.grid, [1.0, 1.0], 0, Tube(self.reference, 0.5), 50, RngStream(3), min_matched=10_000
        )
        self.assertEqual(report.status, "inconclusive")
        self.assertTrue(np.isnan(report.z_score))

    def test_t_index_range(self):
        """Test that t_index beyond N is rejected."""
        with self.assertRaises(PreconditionError):
            bayes_ratio_check(self.sampler, self.grid, [1.0, 1.0], 21, Tube(self.reference, 1.0), 10, RngStream(4))


if __name__ == "__main__":
    unittest.main()
