"""
Tests for the Poisson limit laws and the scale constants.
"""

import math

import numpy as np
import pytest

from app.models.schemas import (
    AR1Profile,
    BoundedAR1Chain,
    FiniteMarkovChain,
    IIDChain,
    LimitLaw,
    MA1Profile,
    RandomCoefficientModel,
    iid_profile,
)
from app.services.limits_service import limits_service
from app.services.montecarlo_service import montecarlo_service


class TestIntensity:
    def test_closed_forms(self):
        assert limits_service.poisson_intensity(LimitLaw(alpha=2.0), 1.0) == 1.0
        assert limits_service.poisson_intensity(LimitLaw(alpha=2.0), 4.0) == 0.25
        assert limits_service.poisson_intensity(LimitLaw(alpha=2.0, sigma2=2.0), 1.0) == pytest.approx(2.0, rel=1e-12)

    def test_strictly_decreasing(self):
        grid = np.geomspace(1e-3, 1e3, 50)
        values = limits_service.poisson_intensity(LimitLaw(alpha=1.3, sigma2=0.7), grid)
        assert np.all(np.diff(values) < 0)

    def test_nonpositive_x_rejected(self):
        with pytest.raises(ValueError):
            limits_service.poisson_intensity(LimitLaw(alpha=1.0), 0.0)


class TestOrderStatisticLaws:
    def test_largest(self):
        assert limits_service.largest_eigenvalue_cdf(LimitLaw(alpha=2.0), 1.0) == pytest.approx(math.exp(-1), rel=1e-12)
        law = LimitLaw(alpha=2.0, sigma2=2.0)
        assert limits_service.largest_eigenvalue_cdf(law, 2.0) == pytest.approx(math.exp(-1), rel=1e-12)
        assert limits_service.largest_eigenvalue_cdf(law, 1e300) == pytest.approx(1.0, abs=1e-12)

    def test_kth(self):
        law = LimitLaw(alpha=2.0)
        assert limits_service.kth_eigenvalue_cdf(law, 2, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-12)
        assert limits_service.kth_eigenvalue_cdf(law, 10, 1e7) >= 1 - 1e-6

    def test_k_one_matches_largest(self):
        law = LimitLaw(alpha=0.9, sigma2=1.7)
        grid = np.geomspace(0.01, 100, 40)
        np.testing.assert_allclose(
            limits_service.kth_eigenvalue_cdf(law, 1, grid),
            limits_service.largest_eigenvalue_cdf(law, grid),
            rtol=1e-12,
        )

    def test_nondecreasing_in_k(self):
        law = LimitLaw(alpha=1.0)
        values = [limits_service.kth_eigenvalue_cdf(law, k, 0.8) for k in range(1, 6)]
        assert values == sorted(values)


class TestLimitPoints:
    def test_descending(self, rng):
        points = limits_service.sample_limit_points(LimitLaw(alpha=1.0), 6, rng, size=200)
        assert np.all(np.diff(points, axis=1) < 0)

    def test_scale_equivariance(self):
        one = limits_service.sample_limit_points(LimitLaw(alpha=1.0), 4, np.random.default_rng(3))
        two = limits_service.sample_limit_points(LimitLaw(alpha=1.0, sigma2=2.0), 4, np.random.default_rng(3))
        np.testing.assert_array_equal(two, 2.0 * one)

    def test_first_point_is_frechet(self, rng):
        law = LimitLaw(alpha=1.0)
        R = 10**5
        first = limits_service.sample_limit_points(law, 1, rng, size=R)[:, 0]
        ks = montecarlo_service.ks_statistic(first, lambda x: limits_service.largest_eigenvalue_cdf(law, x))
        assert ks < 0.01
        uniforms = limits_service.largest_eigenvalue_cdf(law, first)
        assert montecarlo_service.ks_statistic(uniforms, lambda u: np.clip(u, 0, 1)) < 1.36 / math.sqrt(R) * 1.5


class TestScaleConstants:
    def test_dependence_effect_constant(self):
        assert limits_service.dependence_effect_constant(iid_profile(), 1.3) == 1.0
        assert limits_service.dependence_effect_constant(MA1Profile(theta=1.0), 2.0) == pytest.approx(1.0, rel=1e-12)
        assert limits_service.dependence_effect_constant(MA1Profile(theta=1.0), 1.0) == pytest.approx(
            math.sqrt(2) / 2, rel=1e-12
        )

    def test_ma1_constant_at_most_one(self):
        thetas = np.linspace(-2, 2, 41)
        constants = [limits_service.dependence_effect_constant(MA1Profile(theta=t), 1.5) for t in thetas]
        assert max(constants) <= 1.0 + 1e-12
        assert np.max(np.abs(np.diff(constants))) < 0.05

    def test_tilde_intensity(self):
        profile = AR1Profile(phi=0.5)
        constant = limits_service.dependence_effect_constant(profile, 1.0)
        assert limits_service.tilde_intensity(1.0, profile, 4.0) == pytest.approx(0.5 * constant, rel=1e-12)

    def test_random_coeff_scale_constant_theta(self):
        rc = RandomCoefficientModel(chain=IIDChain(states=[0.5], probabilities=[1.0]))
        assert limits_service.random_coeff_scale(rc, 1.0) == pytest.approx(1.25, rel=1e-12)

    def test_random_coeff_scale_two_states(self):
        rc = RandomCoefficientModel(chain=IIDChain(states=[0.0, 1.0], probabilities=[0.5, 0.5]))
        assert limits_service.random_coeff_scale(rc, 2.0) == pytest.approx(1.5, rel=1e-12)

    def test_random_coeff_scale_markov(self):
        chain = FiniteMarkovChain(states=[0.0, 1.0], transition=[[0.9, 0.1], [0.5, 0.5]])
        rc = RandomCoefficientModel(chain=chain)
        expected = (5 / 6 * 1.0 + 1 / 6 * math.sqrt(2.0)) ** 2
        assert limits_service.random_coeff_scale(rc, 1.0) == pytest.approx(expected, rel=1e-10)

    def test_random_coeff_scale_bounded_ar1(self, rng):
        # theta is constant at 0.5 / (1 - 0.5) = 1 up to a tiny innovation range
        rc = RandomCoefficientModel(chain=BoundedAR1Chain(phi=0.5, low=0.4999, high=0.5001))
        estimate = limits_service.random_coeff_scale_estimate(rc, 1.0, rng)
        assert estimate.value == pytest.approx(2.0, rel=1e-3)
        assert estimate.std_error < 1e-3
