"""
Tests for latent chains: stationary laws and theta sampling.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from app.models.errors import ReducibleChainError
from app.models.schemas import BoundedAR1Chain, FiniteMarkovChain, IIDChain, RandomCoefficientModel
from app.services.chain_service import chain_service


def _markov(transition, initial=None, states=None):
    states = states if states is not None else [float(i) for i in range(len(transition))]
    chain = FiniteMarkovChain(states=states, transition=transition, initial=initial)
    return RandomCoefficientModel(chain=chain, coeff_family="ma1")


class TestStationaryDistribution:
    def test_two_state(self):
        pi = chain_service.stationary_distribution(_markov([[0.9, 0.1], [0.5, 0.5]]))
        np.testing.assert_allclose(pi, [5 / 6, 1 / 6], rtol=0, atol=1e-12)

    def test_doubly_stochastic(self):
        pi = chain_service.stationary_distribution(_markov([[0.5, 0.5], [0.5, 0.5]]))
        np.testing.assert_allclose(pi, [0.5, 0.5], rtol=0, atol=1e-12)

    def test_iid_chain(self):
        rc = RandomCoefficientModel(chain=IIDChain(states=[0.0, 0.5, 1.0], probabilities=[1 / 3, 1 / 3, 1 / 3]))
        np.testing.assert_allclose(chain_service.stationary_distribution(rc), [1 / 3] * 3)

    def test_reducible_chain(self):
        rc = _markov([[1.0, 0.0], [0.0, 1.0]])
        assert not chain_service.is_irreducible(rc.chain)
        with pytest.raises(ReducibleChainError):
            chain_service.stationary_distribution(rc)

    def test_bounded_ar1_has_no_vector(self):
        rc = RandomCoefficientModel(chain=BoundedAR1Chain(phi=0.5, low=0.0, high=0.2))
        with pytest.raises(ValueError):
            chain_service.stationary_distribution(rc)


class TestSampling:
    def test_absorbing_chain_stays(self, rng):
        rc = _markov([[1.0, 0.0], [0.0, 1.0]], initial=[0.0, 1.0], states=[0.25, 0.75])
        thetas = chain_service.sample_theta_chain(rc, 50, rng)
        assert np.all(thetas == 0.75)

    def test_markov_occupation(self, rng):
        rc = _markov([[0.9, 0.1], [0.5, 0.5]])
        thetas = chain_service.sample_theta_chain(rc, 10**5, rng)
        assert abs(np.mean(thetas == 0.0) - 5 / 6) < 0.01

    def test_iid_frequencies(self, rng):
        rc = RandomCoefficientModel(chain=IIDChain(states=[0.0, 1.0], probabilities=[0.25, 0.75]))
        thetas = chain_service.sample_theta_chain(rc, 10**5, rng)
        assert abs(np.mean(thetas == 1.0) - 0.75) < 0.01

    def test_bounded_ar1_support_and_mean(self, rng):
        chain = BoundedAR1Chain(phi=0.5, low=-0.2, high=0.4)
        rc = RandomCoefficientModel(chain=chain, coeff_family="ar1")
        thetas = chain_service.sample_theta_chain(rc, 10**5, rng)
        assert np.all(np.abs(thetas) <= chain.state_bound)
        assert thetas.mean() == pytest.approx(0.1 / 0.5, abs=0.01)

    def test_deterministic(self):
        rc = _markov([[0.9, 0.1], [0.5, 0.5]])
        first = chain_service.sample_theta_chain(rc, 100, np.random.default_rng(4))
        second = chain_service.sample_theta_chain(rc, 100, np.random.default_rng(4))
        np.testing.assert_array_equal(first, second)

    def test_length_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            chain_service.sample_theta_chain(_markov([[0.5, 0.5], [0.5, 0.5]]), 0, rng)


class TestChainValidation:
    def test_rows_must_be_stochastic(self):
        with pytest.raises(ValidationError):
            FiniteMarkovChain(states=[0.0, 1.0], transition=[[0.9, 0.2], [0.5, 0.5]])

    def test_bounded_ar1_map_restrictions(self):
        with pytest.raises(ValidationError):
            RandomCoefficientModel(chain=BoundedAR1Chain(phi=0.5, low=0.0, high=0.1), coeff_family="farima")
        with pytest.raises(ValidationError):
            RandomCoefficientModel(chain=BoundedAR1Chain(phi=0.5, low=0.0, high=0.6), coeff_family="ar1")

    def test_states_must_map_to_valid_profiles(self):
        with pytest.raises(ValidationError):
            RandomCoefficientModel(
                chain=IIDChain(states=[0.5, 1.5], probabilities=[0.5, 0.5]), coeff_family="ar1"
            )
