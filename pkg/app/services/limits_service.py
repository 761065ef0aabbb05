"""
Limit-law service.
Closed-form Poisson intensity and Frechet-type order statistic laws for the
scaled top eigenvalues, limit-point sampling via Gamma sums, and the
scale constants for dependent and random-coefficient rows.

The k-th order statistic law is exp(-nu) * sum_{m<k} nu^m / m! with
nu = x^{-alpha/2} * sigma2^{alpha/2}. A display of the same law that drops the
sigma2 scale from the exponential factor also circulates; it disagrees with the
Poisson count reading unless sigma2 = 1, so it is not used here.
"""

import math

import numpy as np
from loguru import logger
from scipy import stats

from app.config import settings
from app.models.schemas import (
    BoundedAR1Chain,
    CoefficientProfile,
    LimitLaw,
    RandomCoefficientModel,
    ScaleEstimate,
)
from app.services.chain_service import chain_service
from app.services.linproc_service import linproc_service


class LimitsService:
    """Service for the Poisson limit of the scaled eigenvalue point process."""

    def poisson_intensity(self, law: LimitLaw, x):
        """nu((x, inf]) = x^{-alpha/2} sigma2^{alpha/2}."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("x must be > 0")
        half = law.alpha / 2.0
        out = np.power(law.sigma2 / x, half)
        return float(out) if out.ndim == 0 else out

    def largest_eigenvalue_cdf(self, law: LimitLaw, x):
        """P(lambda_(1) <= x) in the limit: exp(-nu(x))."""
        out = np.exp(-np.asarray(self.poisson_intensity(law, x)))
        return float(out) if np.ndim(out) == 0 else out

    def kth_eigenvalue_cdf(self, law: LimitLaw, k: int, x):
        """P(N(x, inf) <= k - 1) for the limiting Poisson process."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        nu = np.asarray(self.poisson_intensity(law, x))
        out = stats.poisson.cdf(k - 1, nu)
        return float(out) if np.ndim(out) == 0 else out

    def sample_limit_points(self, law: LimitLaw, count: int, rng: np.random.Generator, size=None) -> np.ndarray:
        """
        First ``count`` points Gamma_i^{-2/alpha} sigma2 of the limit process.

        Args:
            law: Limit law
            count: Number of points k (>= 1)
            rng: Random stream
            size: Optional number of independent draws; adds a leading axis

        Returns:
            Descending points, shape (count,) or (size, count)
        """
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        shape = (count,) if size is None else (size, count)
        gammas = np.cumsum(rng.standard_exponential(shape), axis=-1)
        return np.power(gammas, -2.0 / law.alpha) * law.sigma2

    def dependence_effect_constant(self, profile: CoefficientProfile, alpha: float) -> float:
        """(sum c_j^2)^{alpha/2} / sum |c_j|^alpha."""
        if not 0.0 < alpha < 4.0:
            raise ValueError(f"alpha must lie in (0, 4), got {alpha}")
        return linproc_service.sum_squared(profile) ** (alpha / 2.0) / linproc_service.sum_abs_pow(profile, alpha)

    def tilde_intensity(self, alpha: float, profile: CoefficientProfile, x):
        """Intensity after rescaling entries to the iid tail scale."""
        base = LimitLaw(alpha=alpha, sigma2=1.0)
        return np.asarray(self.poisson_intensity(base, x)) * self.dependence_effect_constant(profile, alpha)

    def random_coeff_scale(self, rc: RandomCoefficientModel, alpha: float, rng: np.random.Generator = None) -> float:
        """(E |sum_j c_j^2(theta)|^{alpha/2})^{2/alpha} under the stationary law."""
        return self.random_coeff_scale_estimate(rc, alpha, rng).value

    def random_coeff_scale_estimate(
        self, rc: RandomCoefficientModel, alpha: float, rng: np.random.Generator = None
    ) -> ScaleEstimate:
        """
        Random-coefficient scale with its standard error.

        Finite chains are exact. Bounded AR(1) chains are averaged along one
        long path; the standard error comes from batch means.
        """
        half = alpha / 2.0
        if not isinstance(rc.chain, BoundedAR1Chain):
            pi = chain_service.stationary_distribution(rc)
            weights = np.array(
                [linproc_service.sum_squared(rc.coeff_map(theta)) ** half for theta in rc.chain.states]
            )
            return ScaleEstimate(value=float(pi @ weights) ** (1.0 / half))
        if rng is None:
            rng = np.random.default_rng(0)
        length = settings.rc_scale_mc_length
        thetas = chain_service.sample_theta_chain(rc, length, rng)
        if rc.coeff_family == "ma1":
            terms = (1.0 + thetas**2) ** half
        else:
            terms = (1.0 / (1.0 - thetas**2)) ** half
        batches = terms[: (length // 100) * 100].reshape(100, -1).mean(axis=1)
        mean = float(terms.mean())
        mean_se = float(batches.std(ddof=1) / math.sqrt(batches.size))
        value = mean ** (1.0 / half)
        # delta method for m -> m^{2/alpha}
        std_error = abs((1.0 / half) * mean ** (1.0 / half - 1.0)) * mean_se
        logger.debug(f"Random-coefficient scale {value:.6g} +/- {std_error:.2g} from {length} chain steps")
        return ScaleEstimate(value=value, std_error=std_error)


# Global limits service instance
limits_service = LimitsService()
