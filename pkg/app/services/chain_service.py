"""
Latent chain service for random coefficient models.
Samples the theta sequence driving row-wise coefficients and solves for
the stationary law of finite chains.
"""

import numpy as np
from loguru import logger
from scipy import signal
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from app.config import settings
from app.models.errors import ReducibleChainError
from app.models.schemas import (
    BoundedAR1Chain,
    FiniteMarkovChain,
    IIDChain,
    RandomCoefficientModel,
)


class ChainService:
    """Service for latent theta chains."""

    def is_irreducible(self, chain: FiniteMarkovChain) -> bool:
        """Every state reaches every other state."""
        graph = csr_matrix(chain.transition_matrix() > 0.0)
        n_components, _ = connected_components(graph, directed=True, connection="strong")
        return n_components == 1

    def stationary_distribution(self, rc: RandomCoefficientModel) -> np.ndarray:
        """
        Stationary law pi over the chain's states.

        Args:
            rc: Random coefficient model with an iid or finite Markov chain

        Returns:
            Probability vector aligned with ``rc.chain.states``
        """
        chain = rc.chain
        if isinstance(chain, IIDChain):
            return np.asarray(chain.probabilities, dtype=float)
        if isinstance(chain, BoundedAR1Chain):
            raise ValueError("bounded_ar1 chains have no finite stationary vector")
        return self._solve_stationary(chain)

    def _solve_stationary(self, chain: FiniteMarkovChain) -> np.ndarray:
        if not self.is_irreducible(chain):
            raise ReducibleChainError("transition matrix is reducible; stationary law is not unique")
        P = chain.transition_matrix()
        m = P.shape[0]
        # pi (P - I) = 0 with one equation replaced by sum(pi) = 1
        A = P.T - np.eye(m)
        A[-1, :] = 1.0
        b = np.zeros(m)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        residual = float(np.max(np.abs(pi @ P - pi)))
        if residual > 1e-12:
            logger.warning(f"Stationary solve residual {residual:.3g} exceeds 1e-12")
        return pi

    def sample_theta_chain(
        self, rc: RandomCoefficientModel, p: int, rng: np.random.Generator
    ) -> np.ndarray:
        """
        Sample theta_1..theta_p.

        Args:
            rc: Random coefficient model
            p: Chain length (>= 1)
            rng: Chain stream, independent of every noise stream

        Returns:
            Array of latent states
        """
        if p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        chain = rc.chain
        if isinstance(chain, IIDChain):
            idx = rng.choice(len(chain.states), size=p, p=chain.probabilities)
            return np.asarray(chain.states, dtype=float)[idx]
        if isinstance(chain, FiniteMarkovChain):
            return self._sample_markov(chain, p, rng)
        return self._sample_bounded_ar1(chain, p, rng)

    def _sample_markov(self, chain: FiniteMarkovChain, p: int, rng: np.random.Generator) -> np.ndarray:
        states = np.asarray(chain.states, dtype=float)
        m = states.size
        if chain.initial is not None:
            initial = np.asarray(chain.initial, dtype=float)
        else:
            initial = self._solve_stationary(chain)
        cumulative = np.cumsum(chain.transition_matrix(), axis=1)
        uniforms = rng.random(p)
        idx = np.empty(p, dtype=int)
        current = min(int(np.searchsorted(np.cumsum(initial), uniforms[0], side="right")), m - 1)
        idx[0] = current
        for i in range(1, p):
            current = min(int(np.searchsorted(cumulative[current], uniforms[i], side="right")), m - 1)
            idx[i] = current
        return states[idx]

    def _sample_bounded_ar1(self, chain: BoundedAR1Chain, p: int, rng: np.random.Generator) -> np.ndarray:
        burn_in = settings.chain_burn_in
        innovations = rng.uniform(chain.low, chain.high, size=burn_in + p)
        path = signal.lfilter([1.0], [1.0, -chain.phi], innovations)
        return path[burn_in:]


# Global chain service instance
chain_service = ChainService()
