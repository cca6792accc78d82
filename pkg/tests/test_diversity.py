"""Tests for market weights, diversity verdicts and portfolio values."""

import unittest

import numpy as np

from shadowprice import parallel
from shadowprice.core import MarketPath, PathEnsemble, RngStream, TimeGrid
from shadowprice.diversity import (
    EVIDENCE_NOTE,
    PortfolioSpec,
    WeightPath,
    diversity_summary,
    diversity_verdict,
    market_weights,
    portfolio_value,
    portfolio_values,
    relative_performance,
)
from shadowprice.errors import DomainError, PreconditionError
from shadowprice.sde_engine import ArctanModel, FernholzParams, VolatilitySpec, fernholz_model


class TestMarketWeights(unittest.TestCase):
    """Test cases for market_weights."""

    def setUp(self):
        """Set up a two-step grid."""
        self.grid = TimeGrid(1.0, 2)

    def test_equal_prices(self):
        """Test that S = (1, 1, 1, 1) gives equal weights."""
        weights = market_weights(MarketPath(self.grid, np.ones((3, 4))))
        np.testing.assert_allclose(weights.weights, 0.25)

    def test_unequal_prices(self):
        """Test that S = (2, 1, 1) gives (0.5, 0.25, 0.25)."""
        weights = market_weights(MarketPath(self.grid, np.tile([2.0, 1.0, 1.0], (3, 1))))
        np.testing.assert_allclose(weights.weights[0], [0.5, 0.25, 0.25])
        np.testing.assert_allclose(weights.max_weight, 0.5)

    def test_scale_invariance(self):
        """Test that scaling all prices leaves the weights unchanged."""
        values = np.exp(np.random.default_rng(1).normal(size=(3, 3)))
        a = market_weights(MarketPath(self.grid, values)).weights
        b = market_weights(MarketPath(self.grid, 7.5 * values)).weights
        np.testing.assert_allclose(a, b, rtol=1e-14)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_weight_rows_must_sum_to_one(self):
        """Test that WeightPath rejects rows off the simplex."""
        with self.assertRaises(DomainError):
            WeightPath(self.grid, np.full((3, 2), 0.6))


class TestDiversityVerdict(unittest.TestCase):
    """Test cases for diversity_verdict and diversity_summary."""

    def test_equal_weights_are_diverse(self):
        """Test that constant equal weights are diverse and weakly diverse."""
        weights = market_weights(MarketPath(TimeGrid(1.0, 4), np.ones((5, 3))))
        verdict = diversity_verdict(weights, 0.5)
        self.assertTrue(verdict.diverse)
        self.assertTrue(verdict.weak_diverse)
        self.assertEqual(verdict.violation_count, 0)

    def test_touching_boundary_once(self):
        """Test that mu_(1) = 1 - delta at one grid point breaks diversity but not weak diversity."""
        values = np.ones((5, 2))
        values[2] = [3.0, 1.0]
        verdict = diversity_verdict(market_weights(MarketPath(TimeGrid(1.0, 4), values)), 0.25)
        self.assertFalse(verdict.diverse)
        self.assertTrue(verdict.weak_diverse)
        self.assertEqual(verdict.violation_count, 1)
        self.assertAlmostEqual(verdict.max_weight_sup, 0.75)
        self.assertAlmostEqual(verdict.weight_avg, 0.5625)
        self.assertAlmostEqual(verdict.violation_rate, 0.2)

    def test_invalid_delta(self):
        """Test that delta outside (0, 1) is rejected."""
        weights = market_weights(MarketPath(TimeGrid(1.0, 1), np.ones((2, 2))))
        with self.assertRaises(DomainError):
            diversity_verdict(weights, 0.0)

    def test_diverse_implies_weak_diverse(self):
        """Test diverse => weak_diverse on simulated Fernholz paths for several delta."""
        model = fernholz_model(FernholzParams(np.full(3, 0.02), 0.3, 0.04), VolatilitySpec.scalar(0.2, 3))
        ensemble = model.simulate_ensemble(TimeGrid(1.0, 128), np.ones(3), RngStream(1), 20)
        for delta in (0.2, 0.3, 0.5, 0.6):
            for path in ensemble:
                verdict = diversity_verdict(market_weights(path), delta)
                if verdict.diverse:
                    self.assertTrue(verdict.weak_diverse)

    def test_arctan_market_diverse(self):
        """Test that every arctan path is diverse for delta = 0.17."""
        ensemble = ArctanModel().simulate_ensemble(TimeGrid(1.0, 256), (1.0, 1.0), RngStream(2), 200)
        summary = diversity_summary(ensemble, 0.17)
        self.assertEqual(summary.diverse.successes, 200)
        self.assertEqual(summary.violation_count, 0)
        self.assertLess(summary.max_weight_sup, 0.83)

    def test_summary_keys(self):
        """Test the serialized summary."""
        ensemble = PathEnsemble(TimeGrid(1.0, 2), np.ones((4, 3, 2)))
        document = diversity_summary(ensemble, 0.2).to_dict()
        self.assertEqual(document["n_paths"], 4)
        self.assertEqual(document["diverse_fraction"]["estimate"], 1.0)
        self.assertEqual(document["violation_rate"], 0.0)
        self.assertAlmostEqual(document["weight_avg_mean"], 0.5)


class TestPortfolioValue(unittest.TestCase):
    """Test cases for portfolio_value and portfolio_values."""

    def setUp(self):
        """Set up a random three-asset path."""
        self.grid = TimeGrid(1.0, 3)
        gen = np.random.default_rng(4)
        self.path = MarketPath(self.grid, np.exp(gen.normal(scale=0.3, size=(4, 3))))

    def test_constant_path(self):
        """Test that a constant path keeps V = z0."""
        path = MarketPath(self.grid, np.ones((4, 3)))
        np.testing.assert_allclose(portfolio_value(path, PortfolioSpec.equal_weight(3), 2.5), 2.5)

    def test_single_asset(self):
        """Test that pi = e_1 tracks S_1(t)/S_1(0)."""
        value = portfolio_value(self.path, PortfolioSpec.fixed([1.0, 0.0, 0.0]), 1.0)
        np.testing.assert_allclose(value, self.path.values[:, 0] / self.path.values[0, 0], rtol=1e-12)

    def test_market_portfolio_identity(self):
        """Test V(t) * sum S(0) = z0 * sum S(t) for the market portfolio."""
        value = portfolio_value(self.path, PortfolioSpec.market(), 3.0)
        totals = self.path.values.sum(axis=1)
        np.testing.assert_allclose(value * totals[0], 3.0 * totals, rtol=1e-10)

    def test_rejects_invalid_proportions(self):
        """Test that proportions off the simplex are rejected."""
        with self.assertRaises(PreconditionError):
            portfolio_value(self.path, PortfolioSpec.fixed([0.7, 0.7, 0.0]), 1.0)
        with self.assertRaises(PreconditionError):
            portfolio_value(self.path, PortfolioSpec.fixed([1.5, -0.5, 0.0]), 1.0)

    def test_rejects_nonpositive_wealth(self):
        """Test that z0 must be positive."""
        with self.assertRaises(PreconditionError):
            portfolio_value(self.path, PortfolioSpec.market(), 0.0)

    def test_chunking_does_not_change_values(self):
        """Test that ensemble values do not depend on the chunk size."""
        values = np.exp(np.random.default_rng(5).normal(scale=0.2, size=(9, 4, 3)))
        ensemble = PathEnsemble(self.grid, values)
        parallel.configure(1, 256)
        single = portfolio_values(ensemble, PortfolioSpec.market(), 1.0)
        parallel.configure(3, 2)
        try:
            chunked = portfolio_values(ensemble, PortfolioSpec.market(), 1.0)
        finally:
            parallel.configure(1, 256)
        np.testing.assert_allclose(single, chunked, rtol=1e-14)


class TestRelativePerformance(unittest.TestCase):
    """Test cases for relative_performance."""

    def test_identical_portfolios(self):
        """Test that pi = rho gives P(>=) = 1 and P(>) = 0."""
        values = np.exp(np.random.default_rng(6).normal(scale=0.2, size=(10, 5, 2)))
        ensemble = PathEnsemble(TimeGrid(1.0, 4), values)
        report = relative_performance(ensemble, PortfolioSpec.market(), PortfolioSpec.market())
        self.assertEqual(report.p_geq.estimate, 1.0)
        self.assertEqual(report.p_gt.estimate, 0.0)
        self.assertEqual(report.mean_log_ratio.estimate, 0.0)

    def test_constant_path(self):
        """Test that a constant path gives equal values for any pair."""
        path = MarketPath(TimeGrid(1.0, 4), np.ones((5, 2)))
        report = relative_performance(path, PortfolioSpec.equal_weight(2), PortfolioSpec.fixed([0.9, 0.1]), z0=2.0)
        self.assertEqual(report.n_paths, 1)
        self.assertEqual(report.p_geq.estimate, 1.0)
        self.assertEqual(report.p_gt.estimate, 0.0)

    def test_report_is_labelled_as_evidence(self):
        """Test that the report on a Fernholz ensemble carries the evidence wording."""
        model = fernholz_model(FernholzParams(np.full(3, 0.02), 0.3, 0.04), VolatilitySpec.scalar(0.2, 3))
        ensemble = model.simulate_ensemble(TimeGrid(1.0, 128), np.ones(3), RngStream(3), 50)
        document = relative_performance(ensemble, PortfolioSpec.equal_weight(3), PortfolioSpec.market()).to_dict()
        self.assertEqual(document["pi"], "equal-weight")
        self.assertEqual(document["rho"], "market")
        self.assertEqual(document["interpretation"], EVIDENCE_NOTE)
        self.assertIn("not proof", document["interpretation"])
        self.assertGreaterEqual(document["p_geq"]["estimate"], document["p_gt"]["estimate"])


if __name__ == "__main__":
    unittest.main()
