"""Tests for the Euler-Maruyama engine, the Fernholz drift and the arctan market."""

import unittest

import numpy as np
import pytest

from shadowprice import parallel
from shadowprice.core import DiversityRegion, MarketPath, RngStream, TimeGrid
from shadowprice.diversity import diversity_summary
from shadowprice.errors import (
    DomainError,
    ModelContractError,
    PreconditionError,
    SimulationDivergedError,
    SingularityError,
)
from shadowprice.sde_engine import (
    ArctanModel,
    DiffusionModel,
    DriftSpec,
    FernholzParams,
    VolatilitySpec,
    arctan_market,
    extend_path,
    fernholz_drift,
    fernholz_drift_batch,
    fernholz_model,
    reflect_into_region,
    simulate,
    simulate_ensemble,
    weights_from_logs,
)
from shadowprice.stats import two_sample_ks

ARCTAN_SUP = 1.0 / (1.0 + np.exp(-np.pi / 2))


class TestVolatilitySpec(unittest.TestCase):
    """Test cases for VolatilitySpec."""

    def test_constant_bounds_from_eigenvalues(self):
        """Test that the bounds are the extreme eigenvalues of sigma sigma^T."""
        vol = VolatilitySpec.constant(np.diag([0.1, 0.3]))
        self.assertAlmostEqual(vol.eps_lo, 0.01)
        self.assertAlmostEqual(vol.M_hi, 0.09)
        self.assertEqual((vol.n, vol.d), (2, 2))

    def test_bound_violation_detected(self):
        """Test that declared bounds the matrix does not meet raise ModelContractError."""
        with self.assertRaises(ModelContractError):
            VolatilitySpec.constant(np.eye(2), eps_lo=2.0, M_hi=3.0)

    def test_inverted_bounds_rejected(self):
        """Test that eps_lo > M_hi is a domain error."""
        with self.assertRaises(DomainError):
            VolatilitySpec.constant(np.eye(2), eps_lo=2.0, M_hi=1.0)

    def test_zero_volatility_allowed(self):
        """Test that sigma = 0 builds with a zero lower bound."""
        vol = VolatilitySpec.constant(np.zeros((2, 2)))
        self.assertEqual(vol.eps_lo, 0.0)


class TestFernholzDrift(unittest.TestCase):
    """Test cases for the Fernholz diverse drift."""

    def setUp(self):
        """Set up the two-asset parameters."""
        self.params = FernholzParams(np.array([0.1, 0.05]), 0.2, 1.0)

    def test_displayed_value(self):
        """Test n=2, delta=0.2, M=1, mu=(0.6, 0.4)."""
        gamma = fernholz_drift(self.params, [0.6, 0.4])
        self.assertAlmostEqual(gamma[0], 1.0 / (0.2 * (np.log(0.6) - np.log(0.8))), places=12)
        self.assertAlmostEqual(gamma[0], -17.381, places=3)
        self.assertEqual(gamma[1], 0.05)

    def test_lowest_index_wins_ties(self):
        """Test that asset 1 gets the singular term when all weights tie."""
        params = FernholzParams(np.array([0.1, 0.2, 0.3]), 0.3, 1.0)
        gamma = fernholz_drift(params, np.full(3, 1.0 / 3.0))
        self.assertLess(gamma[0], 0.0)
        np.testing.assert_array_equal(gamma[1:], [0.2, 0.3])

    def test_pole_is_monotone(self):
        """Test that the leader's drift decreases as mu_(1) approaches 1 - delta."""
        tops = [0.55, 0.65, 0.75, 0.79, 0.7999]
        values = [fernholz_drift(self.params, [t, 1.0 - t])[0] for t in tops]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_singularity_error(self):
        """Test that mu_(1) >= 1 - delta raises SingularityError."""
        with self.assertRaises(SingularityError):
            fernholz_drift(self.params, [0.8, 0.2])
        with self.assertRaises(ValueError):
            fernholz_drift(self.params, [0.9, 0.1])

    def test_batch_clamps_at_cap(self):
        """Test the batch form clamps the pole and matches the scalar form inside."""
        mu = np.array([[0.6, 0.4], [0.8, 0.2], [0.99, 0.01]])
        gamma = fernholz_drift_batch(self.params, mu, gamma_cap=50.0)
        self.assertAlmostEqual(gamma[0, 0], fernholz_drift(self.params, mu[0])[0], places=12)
        np.testing.assert_array_equal(gamma[1:, 0], [-50.0, -50.0])

    def test_invalid_params(self):
        """Test parameter validation."""
        with self.assertRaises(DomainError):
            FernholzParams(np.array([0.1, -0.1]), 0.2, 1.0)
        with self.assertRaises(DomainError):
            FernholzParams(np.array([0.1, 0.1]), 0.5, 1.0)

    def test_drift_clamp(self):
        """Test that DriftSpec clamps componentwise."""
        drift = DriftSpec(evaluator=lambda t, s: np.array([-5.0, 5.0]), clamp_bound=2.0)
        np.testing.assert_array_equal(drift.evaluate(0.0, np.zeros((1, 2))), [[-2.0, 2.0]])


class TestSimulate(unittest.TestCase):
    """Test cases for simulate and simulate_ensemble."""

    def setUp(self):
        """Set up a grid and a seed."""
        self.grid = TimeGrid(1.0, 16)
        self.rng = RngStream(123)

    def tearDown(self):
        """Restore default parallel settings."""
        parallel.configure(threads=1, chunk_size=256)

    def test_zero_dynamics_constant_path(self):
        """Test that gamma = 0 and sigma = 0 give S(t_k) = s0."""
        path = simulate(self.grid, [1.0, 2.0], DriftSpec.zero(2), VolatilitySpec.constant(np.zeros((2, 2))), self.rng)
        np.testing.assert_allclose(path.values, np.tile([1.0, 2.0], (17, 1)), rtol=1e-14)

    def test_deterministic_drift(self):
        """Test that gamma = c and sigma = 0 give log S = log s0 + c t."""
        c = np.array([0.3, -0.1])
        path = simulate(self.grid, [1.0, 2.0], DriftSpec.constant(c), VolatilitySpec.constant(np.zeros((2, 2))), self.rng)
        expected = np.log([1.0, 2.0]) + self.grid.times[:, None] * c
        np.testing.assert_allclose(np.log(path.values), expected, atol=1e-12)

    def test_reproducible(self):
        """Test that equal streams give bit-identical paths."""
        vol = VolatilitySpec.scalar(0.3, 2)
        a = simulate(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, RngStream(9, 2))
        b = simulate(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, RngStream(9, 2))
        np.testing.assert_array_equal(a.values, b.values)

    def test_ensemble_path_matches_substream(self):
        """Test that ensemble path p equals a single run with rng.substream(p)."""
        vol = VolatilitySpec.scalar(0.3, 2)
        ensemble = simulate_ensemble(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, self.rng, 5)
        single = simulate(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, self.rng.substream(3))
        np.testing.assert_allclose(ensemble.values[3], single.values, rtol=1e-13)

    def test_ensemble_independent_of_chunking(self):
        """Test that chunk size and worker count do not change results."""
        vol = VolatilitySpec.scalar(0.3, 2)
        parallel.configure(threads=1, chunk_size=256)
        first = simulate_ensemble(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, self.rng, 7)
        parallel.configure(threads=3, chunk_size=2)
        second = simulate_ensemble(self.grid, [1.0, 1.0], DriftSpec.zero(2), vol, self.rng, 7)
        np.testing.assert_allclose(first.values, second.values, rtol=1e-13)

    def test_divergence_reports_step(self):
        """Test that an exploding state raises SimulationDivergedError with its step."""
        grid = TimeGrid(1.0, 1)
        with self.assertRaises(SimulationDivergedError) as ctx:
            simulate(grid, [1.0], DriftSpec.constant([1000.0]), VolatilitySpec.constant([[0.0]]), self.rng)
        self.assertEqual(ctx.exception.step, 1)

    def test_bad_start_rejected(self):
        """Test that nonpositive s0 is a precondition error."""
        with self.assertRaises(PreconditionError):
            simulate(self.grid, [1.0, 0.0], DriftSpec.zero(2), VolatilitySpec.scalar(0.1, 2), self.rng)

    def test_brownian_moments(self):
        """Test the mean and variance of log S(T) for gamma = 0, sigma = 1."""
        grid = TimeGrid(1.0, 4)
        ensemble = simulate_ensemble(grid, [1.0], DriftSpec.zero(1), VolatilitySpec.scalar(1.0, 1), RngStream(2024), 100_000)
        logs = np.log(ensemble.values[:, -1, 0])
        self.assertLess(abs(logs.mean()), 3.0 * np.sqrt(1.0 / 100_000))
        self.assertAlmostEqual(logs.var(ddof=1), 1.0, delta=0.05)

    def test_weak_convergence_under_halving(self):
        """Test that halving dt leaves the law of log S(T) unchanged (KS at 1%)."""
        vol = VolatilitySpec.scalar(1.0, 1)
        coarse = simulate_ensemble(TimeGrid(1.0, 8), [1.0], DriftSpec.zero(1), vol, RngStream(1), 10_000)
        fine = simulate_ensemble(TimeGrid(1.0, 16), [1.0], DriftSpec.zero(1), vol, RngStream(2), 10_000)
        _, pvalue = two_sample_ks(np.log(coarse.values[:, -1, 0]), np.log(fine.values[:, -1, 0]))
        self.assertGreater(pvalue, 0.01)

    def test_continue_from_starts_at_state(self):
        """Test knot times and the first row of a continuation."""
        model = DiffusionModel(DriftSpec.zero(2), VolatilitySpec.scalar(0.2, 2))
        knots, prices = model.continue_from(0.3, [1.0, 2.0], TimeGrid(1.0, 4), self.rng)
        np.testing.assert_allclose(knots, [0.3, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(prices[0], [1.0, 2.0], rtol=1e-14)
        self.assertEqual(prices.shape, (4, 2))


class TestFernholzModel(unittest.TestCase):
    """Test cases for the Fernholz diverse market."""

    def test_reflection_lands_below_threshold(self):
        """Test that reflected rows sit at 1 - delta - guard."""
        region = DiversityRegion(0.3, 3)
        prices = reflect_into_region(np.array([[10.0, 1.0, 1.0], [1.0, 1.0, 1.0]]), region, 1e-6)
        weights = prices.max(axis=1) / prices.sum(axis=1)
        self.assertAlmostEqual(weights[0], 0.7 - 1e-6, places=12)
        np.testing.assert_array_equal(prices[1], [1.0, 1.0, 1.0])

    def test_weights_from_logs(self):
        """Test that weights from logs sum to one."""
        weights = weights_from_logs(np.array([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(weights, [[0.25, 0.75]])

    def test_violation_rate_small_run(self):
        """Test the grid violation rate of the Fernholz market on a reduced run."""
        params = FernholzParams(np.array([0.02, 0.02, 0.02]), 0.3, 0.04)
        model = fernholz_model(params, VolatilitySpec.scalar(0.2, 3))
        ensemble = model.simulate_ensemble(TimeGrid(1.0, 256), np.ones(3), RngStream(4), 100)
        summary = diversity_summary(ensemble, 0.3)
        self.assertLessEqual(summary.violation_rate, 1e-3)
        self.assertTrue(np.all(ensemble.values > 0))

    @pytest.mark.slow
    def test_violation_rate_acceptance(self):
        """Test n=3, delta=0.3, sigma=0.2 I, T=1, N=2^12, 1000 paths: violation rate <= 1e-3."""
        params = FernholzParams(np.array([0.02, 0.02, 0.02]), 0.3, 0.04)
        model = fernholz_model(params, VolatilitySpec.scalar(0.2, 3))
        ensemble = model.simulate_ensemble(TimeGrid(1.0, 2**12), np.ones(3), RngStream(5), 1000)
        self.assertLessEqual(diversity_summary(ensemble, 0.3).violation_rate, 1e-3)

    def test_dimension_mismatch(self):
        """Test that drift and volatility must agree on n."""
        params = FernholzParams(np.array([0.02, 0.02, 0.02]), 0.3, 0.04)
        with self.assertRaises(DomainError):
            fernholz_model(params, VolatilitySpec.scalar(0.2, 2))


class TestArctanMarket(unittest.TestCase):
    """Test cases for the two-asset arctan market."""

    def test_initial_condition(self):
        """Test S(0) = (1, 1)."""
        path = arctan_market(TimeGrid(1.0, 32), RngStream(8))
        np.testing.assert_array_equal(path.values[0], [1.0, 1.0])
        self.assertEqual(path.max_weights()[0], 0.5)

    def test_spread_and_weight_bounds(self):
        """Test |log S2 - log S1| < pi/2 and mu_(1) < 1/(1 + e^{-pi/2}) on every path."""
        ensemble = ArctanModel().simulate_ensemble(TimeGrid(1.0, 256), (1.0, 1.0), RngStream(10), 200)
        spread = np.abs(np.log(ensemble.values[..., 1]) - np.log(ensemble.values[..., 0]))
        self.assertTrue(np.all(spread < np.pi / 2))
        self.assertTrue(np.all(ensemble.max_weights() < ARCTAN_SUP))

    @pytest.mark.slow
    def test_weight_bound_acceptance(self):
        """Test sup mu_(1) < 0.82791 over 1000 paths."""
        ensemble = ArctanModel().simulate_ensemble(TimeGrid(1.0, 1024), (1.0, 1.0), RngStream(11), 1000)
        self.assertLess(ensemble.max_weights().max(), 0.82791)

    def test_bad_state_rejected(self):
        """Test that spreads beyond pi/2 cannot start a continuation."""
        with self.assertRaises(PreconditionError):
            ArctanModel().continue_from(0.0, [1.0, 10.0], TimeGrid(1.0, 4), RngStream(1))


class TestExtendPath(unittest.TestCase):
    """Test cases for extend_path."""

    def setUp(self):
        """Set up a short path."""
        self.grid = TimeGrid(1.0, 4)
        self.path = MarketPath(self.grid, np.exp(np.linspace(0.0, 1.0, 5))[:, None] * [1.0, 2.0])

    def test_zero_extension_is_identity(self):
        """Test that extra_T = 0 returns the path unchanged."""
        self.assertIs(extend_path(self.path, 0.0, 0.5, RngStream(1)), self.path)

    def test_zero_c_prime_rejected_with_lower_bound(self):
        """Test that c' = 0 is rejected when eps_lo > 0."""
        with self.assertRaises(PreconditionError):
            extend_path(self.path, 0.5, 0.0, RngStream(1), VolatilitySpec.scalar(0.5, 2))

    def test_junction_continuity(self):
        """Test that the extended path agrees with the original up to T."""
        extended = extend_path(self.path, 0.5, 0.25, RngStream(1), VolatilitySpec.scalar(0.5, 2))
        self.assertEqual(extended.grid.steps, 6)
        np.testing.assert_array_equal(extended.values[:5], self.path.values)


if __name__ == "__main__":
    unittest.main()
