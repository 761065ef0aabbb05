"""
Noise service for regularly varying innovation laws.
Handles sampling, exact survival functions, the norming constants a_m
and truncated second moments.
"""

import math
from typing import Callable

import numpy as np
from loguru import logger
from scipy import integrate, optimize, stats

from app.config import settings
from app.models.errors import NormingConstantError, QuadratureError
from app.models.schemas import NoiseFamily, TailModel


class NoiseService:
    """Service for the three built-in noise families."""

    def mean(self, model: TailModel) -> float:
        """Analytic mean of the un-shifted law (inf if it does not exist)."""
        if model.family == NoiseFamily.EXACT_PARETO:
            if model.alpha <= 1.0:
                return math.inf
            return model.alpha / (model.alpha - 1.0)
        return 0.0

    def shift(self, model: TailModel) -> float:
        """Amount subtracted from raw draws."""
        return self.mean(model) if model.center_mean else 0.0

    def sample_noise(self, model: TailModel, count: int, rng: np.random.Generator) -> np.ndarray:
        """
        Draw iid noise variables.

        Args:
            model: Noise law
            count: Number of draws (>= 1)
            rng: Random stream, the only state mutated

        Returns:
            Array of length count
        """
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        return self.sample_noise_array(model, (count,), rng)

    def sample_noise_array(
        self, model: TailModel, shape: tuple, rng: np.random.Generator
    ) -> np.ndarray:
        """Same law as sample_noise, drawn in C order into an array of ``shape``."""
        alpha = model.alpha
        if model.family == NoiseFamily.EXACT_PARETO:
            z = 1.0 + rng.pareto(alpha, size=shape)
        elif model.family == NoiseFamily.SYMMETRIC_PARETO:
            magnitude = 1.0 + rng.pareto(alpha, size=shape)
            sign = 2.0 * rng.integers(0, 2, size=shape) - 1.0
            z = sign * magnitude
        else:
            z = rng.standard_t(alpha, size=shape)
        shift = self.shift(model)
        if shift:
            z -= shift
        return z

    def survival(self, model: TailModel, x: float) -> float:
        """P(|Z| > x) for the (possibly shifted) law."""
        if x < 0:
            raise ValueError(f"x must be >= 0, got {x}")
        return float(self._survival_vec(model, np.asarray(x, dtype=float)))

    def survival_array(self, model: TailModel, x: np.ndarray) -> np.ndarray:
        """Vectorized survival over an array of nonnegative levels."""
        return self._survival_vec(model, np.asarray(x, dtype=float))

    def _survival_vec(self, model: TailModel, x: np.ndarray) -> np.ndarray:
        alpha = model.alpha
        if model.family == NoiseFamily.STUDENT_T:
            return np.where(x <= 0, 1.0, 2.0 * stats.t.sf(x, alpha))
        if model.family == NoiseFamily.SYMMETRIC_PARETO or not model.center_mean:
            with np.errstate(divide="ignore"):
                return np.where(x < 1.0, 1.0, np.power(np.maximum(x, 1.0), -alpha))
        # Centered exact Pareto: |P - m| > x splits into an upper and a lower piece.
        m = self.mean(model)
        upper = np.power(m + x, -alpha)
        low_edge = m - x
        lower = np.where(low_edge > 1.0, 1.0 - np.power(np.maximum(low_edge, 1.0), -alpha), 0.0)
        return np.where(x <= 0, 1.0, upper + lower)

    def _has_closed_form_quantile(self, model: TailModel) -> bool:
        return model.family == NoiseFamily.SYMMETRIC_PARETO or (
            model.family == NoiseFamily.EXACT_PARETO and not model.center_mean
        )

    def norming_constant(self, model: TailModel, m: float) -> float:
        """
        Exact generalized inverse a_m = inf{x : P(|Z| > x) <= 1/m}.

        Args:
            model: Noise law
            m: Level (>= 1); need not be an integer, n*p products are common

        Returns:
            a_m
        """
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        level = 1.0 / m
        if level >= 1.0:
            return 0.0
        if self._has_closed_form_quantile(model):
            return self._settle(lambda x: self.survival(model, x), level, m ** (1.0 / model.alpha))
        return self._invert_survival(lambda x: self.survival(model, x), level)

    def _invert_survival(self, survival: Callable[[float], float], level: float) -> float:
        if level >= 1.0:
            return 0.0
        lo, hi = 0.0, 1.0
        for _ in range(2000):
            if survival(hi) <= level:
                break
            lo, hi = hi, hi * 2.0
        else:
            raise NormingConstantError(f"could not bracket survival level {level!r}")
        if survival(lo) <= level:
            raise NormingConstantError(f"survival is not decreasing near level {level!r}")
        try:
            root = optimize.brentq(
                lambda x: survival(x) - level,
                lo,
                hi,
                xtol=1e-300,
                rtol=max(settings.bisection_rtol, 4 * np.finfo(float).eps),
                maxiter=500,
            )
        except (RuntimeError, ValueError) as e:
            logger.error(f"Survival inversion failed at level {level!r}: {e}")
            raise NormingConstantError(str(e)) from e
        return self._settle(survival, level, root)

    @staticmethod
    def _settle(survival: Callable[[float], float], level: float, x: float) -> float:
        """Step x up by ulps until survival(x) <= level holds exactly."""
        x = float(x)
        while survival(x) > level:
            x = float(np.nextafter(x, math.inf))
        return x

    def second_moment(self, model: TailModel) -> float:
        """E[Z^2] for the (possibly shifted) law; inf when alpha <= 2."""
        alpha = model.alpha
        if alpha <= 2.0:
            return math.inf
        if model.family == NoiseFamily.STUDENT_T:
            return alpha / (alpha - 2.0)
        raw = alpha / (alpha - 2.0)
        if model.family == NoiseFamily.EXACT_PARETO and model.center_mean:
            return raw - self.mean(model) ** 2
        return raw

    def truncated_second_moment(self, model: TailModel, level: float) -> float:
        """
        E[Z^2 * 1{Z^2 <= level}].

        Args:
            model: Noise law
            level: Truncation level for Z^2 (> 0, may be inf)

        Returns:
            Truncated second moment
        """
        if not level > 0:
            raise ValueError(f"level must be > 0, got {level}")
        if math.isinf(level):
            return self.second_moment(model)
        s = math.sqrt(level)
        alpha = model.alpha
        if self._has_closed_form_quantile(model):
            if s <= 1.0:
                return 0.0
            if alpha == 2.0:
                return 2.0 * math.log(s)
            return alpha * (s ** (2.0 - alpha) - 1.0) / (2.0 - alpha)
        if model.family == NoiseFamily.STUDENT_T:
            value, abserr = integrate.quad(
                lambda x: x * x * stats.t.pdf(x, alpha),
                0.0,
                s,
                epsabs=0.0,
                epsrel=settings.quadrature_rtol * 0.1,
                limit=200,
            )
            value, abserr = 2.0 * value, 2.0 * abserr
        else:
            m = self.mean(model)
            lo, hi = max(1.0, m - s), m + s
            if hi <= lo:
                return 0.0
            value, abserr = integrate.quad(
                lambda x: (x - m) ** 2 * alpha * x ** (-alpha - 1.0),
                lo,
                hi,
                points=[m] if lo < m < hi else None,
                epsabs=0.0,
                epsrel=settings.quadrature_rtol * 0.1,
                limit=200,
            )
        if value > 0 and abserr > settings.quadrature_rtol * value:
            raise QuadratureError(
                f"truncated second moment at level {level!r}: error {abserr!r} on value {value!r}"
            )
        return float(value)


# Global noise service instance
noise_service = NoiseService()
