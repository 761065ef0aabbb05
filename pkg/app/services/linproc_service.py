"""
Linear process service.
Handles coefficient profiles (MA(1), AR(1), FARIMA(0,d,0), finite filters),
their truncation and summability, and simulation of p x n data matrices
whose rows are iid copies (or latent-chain driven versions) of a linear process.
"""

import math
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from app.config import settings
from app.models.errors import ConfigValidationError
from app.models.schemas import (
    AR1Profile,
    BoundedAR1Chain,
    CoefficientProfile,
    FarimaProfile,
    FiniteProfile,
    MA1Profile,
    RandomCoefficientModel,
    SummabilityReport,
    TailModel,
    TruncationReport,
)
from app.services.chain_service import chain_service
from app.services.noise_service import noise_service


@lru_cache(maxsize=256)
def _farima_coefficients(d: float, lag: int) -> np.ndarray:
    """c_0..c_lag of (1 - B)^{-d} by the ratio recursion c_j = c_{j-1} (j - 1 + d) / j."""
    j = np.arange(1, lag + 1, dtype=float)
    out = np.empty(lag + 1)
    out[0] = 1.0
    out[1:] = np.cumprod((j - 1.0 + d) / j)
    out.setflags(write=False)
    return out


# Cached so the cap warning is logged once per parameter set, not per replication.
@lru_cache(maxsize=256)
def _ar1_auto_lag(phi: float, tol: float, cap: int) -> int:
    phi = abs(phi)
    if phi == 0.0:
        return 0
    # |phi|^{J+1} / (1 - |phi|) <= tol * sum_j |phi|^j
    lag = max(0, math.ceil(math.log(tol) / math.log(phi)) - 1)
    if lag > cap:
        logger.warning(f"ar1 phi={phi}: truncation lag capped at {cap}")
        return cap
    return lag


@lru_cache(maxsize=256)
def _farima_auto_lag(d: float, tol: float, cap: int) -> int:
    # tail <= |c_J| (J + 1) / (-d), total absolute mass is exactly 2
    c = np.abs(_farima_coefficients(d, cap))
    lags = np.arange(cap + 1)
    bounds = c * (lags + 1) / (-d)
    ok = np.nonzero((bounds <= tol * 2.0) & (lags >= 1))[0]
    if ok.size:
        return int(ok[0])
    logger.warning(
        f"farima d={d}: tail tolerance {tol:g} not reachable below lag {cap}; "
        f"tail bound is {bounds[cap]:.3g}"
    )
    return cap


class LinearProcessService:
    """Service for coefficient profiles and data-matrix simulation."""

    # ------------------------------------------------------------------
    # Coefficients
    # ------------------------------------------------------------------

    def coeff(self, profile: CoefficientProfile, j: int) -> float:
        """c_j of the untruncated profile."""
        if isinstance(profile, MA1Profile):
            return {0: 1.0, 1: profile.theta}.get(j, 0.0)
        if isinstance(profile, AR1Profile):
            return profile.phi**j if j >= 0 else 0.0
        if isinstance(profile, FarimaProfile):
            if j < 0:
                return 0.0
            return float(_farima_coefficients(profile.d, j)[j])
        return dict(profile.coefficients).get(j, 0.0)

    def truncation_lag(self, profile: CoefficientProfile) -> int:
        """Lag J used in simulation; explicit if set, else from the tail tolerance."""
        if profile.truncation_lag is not None:
            return int(profile.truncation_lag)
        return self._auto_lag(profile)

    def _auto_lag(self, profile: CoefficientProfile) -> int:
        tol = settings.truncation_tolerance
        cap = settings.max_truncation_lag
        if isinstance(profile, FiniteProfile):
            return max(abs(j) for j, _ in profile.coefficients)
        if isinstance(profile, MA1Profile):
            return 1
        if isinstance(profile, AR1Profile):
            return _ar1_auto_lag(profile.phi, tol, cap)
        return _farima_auto_lag(profile.d, tol, cap)

    def coefficients(self, profile: CoefficientProfile) -> Tuple[np.ndarray, np.ndarray]:
        """
        Truncated coefficients as parallel arrays.

        Args:
            profile: Coefficient profile

        Returns:
            Tuple of (lags, values) with |lag| <= J, lags ascending
        """
        lag = self.truncation_lag(profile)
        if isinstance(profile, FiniteProfile):
            kept = sorted((j, c) for j, c in profile.coefficients if abs(j) <= lag)
            if not kept:
                return np.zeros(0, dtype=int), np.zeros(0)
            lags, values = zip(*kept)
            return np.asarray(lags, dtype=int), np.asarray(values, dtype=float)
        lags = np.arange(lag + 1)
        if isinstance(profile, MA1Profile):
            values = np.where(lags == 0, 1.0, np.where(lags == 1, profile.theta, 0.0))
        elif isinstance(profile, AR1Profile):
            values = np.power(profile.phi, lags.astype(float))
        else:
            values = np.array(_farima_coefficients(profile.d, lag))
        return lags, values

    def tail_bound(self, profile: CoefficientProfile) -> float:
        """Upper bound on sum_{|j| > J} |c_j| for the lag J in use."""
        lag = self.truncation_lag(profile)
        if isinstance(profile, FiniteProfile):
            return float(sum(abs(c) for j, c in profile.coefficients if abs(j) > lag))
        if isinstance(profile, MA1Profile):
            return abs(profile.theta) if lag < 1 else 0.0
        if isinstance(profile, AR1Profile):
            phi = abs(profile.phi)
            return phi ** (lag + 1) / (1.0 - phi)
        c = _farima_coefficients(profile.d, max(lag, 1))
        if lag == 0:
            # |c_1| (1 + 1) / (-d) bounds the mass beyond lag 1; add |c_1| itself
            return float(abs(c[1]) + abs(c[1]) * 2.0 / (-profile.d))
        return float(abs(c[lag]) * (lag + 1) / (-profile.d))

    def truncation_report(self, profile: CoefficientProfile) -> TruncationReport:
        lag = self.truncation_lag(profile)
        tol = settings.truncation_tolerance
        bound = self.tail_bound(profile)
        total = self.sum_abs_pow(profile, 1.0) + bound
        return TruncationReport(
            lag=lag,
            tail_bound=bound,
            tolerance=tol,
            tolerance_met=bound <= tol * max(total, 1.0),
        )

    # ------------------------------------------------------------------
    # Sums
    # ------------------------------------------------------------------

    def sum_squared(self, profile: CoefficientProfile) -> float:
        """sum_j c_j^2; closed form for ma1 and ar1, truncated at J otherwise."""
        if isinstance(profile, MA1Profile):
            return 1.0 + profile.theta**2
        if isinstance(profile, AR1Profile):
            return 1.0 / (1.0 - profile.phi**2)
        _, values = self.coefficients(profile)
        return float(np.sum(values * values))

    def sum_abs_pow(self, profile: CoefficientProfile, exponent: float) -> float:
        """sum_j |c_j|^exponent; exact for ma1 and ar1, truncated at J otherwise."""
        if not exponent > 0:
            raise ValueError(f"exponent must be > 0, got {exponent}")
        if isinstance(profile, MA1Profile):
            return 1.0 + abs(profile.theta) ** exponent
        if isinstance(profile, AR1Profile):
            return 1.0 / (1.0 - abs(profile.phi) ** exponent)
        _, values = self.coefficients(profile)
        nonzero = np.abs(values[values != 0.0])
        return float(np.sum(nonzero**exponent))

    def check_summability(self, profile: CoefficientProfile, delta: float) -> SummabilityReport:
        """
        Decide whether sum_j |c_j|^delta is finite from the profile's decay rate.

        Args:
            profile: Coefficient profile
            delta: Exponent in (0, 1]

        Returns:
            SummabilityReport with a bound on sum_{|j| > J} |c_j|^delta
        """
        if not 0.0 < delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {delta}")
        lag = self.truncation_lag(profile)
        if isinstance(profile, FarimaProfile):
            # |c_j| <= C j^{d-1}: a p-series with exponent delta (1 - d)
            rate = delta * (1.0 - profile.d)
            passed = rate > 1.0
            j = max(lag, 1)
            c_j = abs(_farima_coefficients(profile.d, j)[j])
            tail = c_j**delta * (j + 1) / (rate - 1.0) if passed else math.inf
        elif isinstance(profile, AR1Profile):
            passed = True
            phi_d = abs(profile.phi) ** delta
            tail = phi_d ** (lag + 1) / (1.0 - phi_d)
        else:
            passed = True
            tail = self.tail_bound(profile) ** delta
        return SummabilityReport(passed=passed, delta=delta, tail_estimate=float(tail))

    # ------------------------------------------------------------------
    # Simulation
    # ------------------------------------------------------------------

    def simulate_noise_matrix(
        self, model: TailModel, p: int, width: int, rng: np.random.Generator
    ) -> np.ndarray:
        """
        Noise block Z with one child stream per row.

        Row i is drawn from the i-th stream spawned off ``rng``, so its
        content does not depend on how rows are scheduled.
        """
        if p < 1 or width < 1:
            raise ValueError(f"noise matrix needs p, width >= 1, got {p}x{width}")
        streams = rng.spawn(p)
        out = np.empty((p, width))
        for i, stream in enumerate(streams):
            out[i] = noise_service.sample_noise_array(model, (width,), stream)
        return out

    @staticmethod
    def apply_filter(noise: np.ndarray, lags: np.ndarray, values: np.ndarray, lag: int) -> np.ndarray:
        """
        X_t = sum_j c_j Z_{t-j} over the interior of a noise block.

        ``noise`` has n + 2*lag columns holding Z at times 1-lag..n+lag.
        ``values`` may be 1-d (shared filter) or p x len(lags) (one filter per row).
        """
        noise = np.atleast_2d(noise)
        n = noise.shape[1] - 2 * lag
        if n < 1:
            raise ValueError("noise block is narrower than the filter support")
        out = np.zeros((noise.shape[0], n))
        per_row = np.ndim(values) == 2
        for idx, j in enumerate(lags):
            start = lag - int(j)
            window = noise[:, start:start + n]
            if per_row:
                out += values[:, idx][:, None] * window
            elif values[idx] != 0.0:
                out += values[idx] * window
        return out

    def _min_delta(self, model: TailModel) -> float:
        return min(model.alpha, 1.0) * 0.99

    def _require_summable(self, profile: CoefficientProfile, model: TailModel) -> None:
        report = self.check_summability(profile, self._min_delta(model))
        if not report.passed:
            raise ConfigValidationError(
                f"coefficients of {profile.kind} profile are not summable with "
                f"delta={report.delta:.4g} < min(alpha, 1)"
            )

    def simulate_matrix(
        self,
        model: TailModel,
        profile: CoefficientProfile,
        p: int,
        n: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """
        Simulate the p x n data matrix X with iid linear-process rows.

        Args:
            model: Noise law
            profile: Coefficient profile
            p: Number of rows
            n: Number of columns
            rng: Noise stream

        Returns:
            Data matrix of shape (p, n)
        """
        if p < 1 or n < 1:
            raise ValueError(f"p and n must be >= 1, got p={p}, n={n}")
        self._require_summable(profile, model)
        lags, values = self.coefficients(profile)
        lag = self.truncation_lag(profile)
        noise = self.simulate_noise_matrix(model, p, n + 2 * lag, rng)
        return self.apply_filter(noise, lags, values, lag)

    # ------------------------------------------------------------------
    # Random coefficients
    # ------------------------------------------------------------------

    def uniform_bound(self, rc: RandomCoefficientModel) -> FiniteProfile:
        """Deterministic c~_j with sup_theta |c_j(theta)| <= c~_j, by enumeration."""
        chain = rc.chain
        if isinstance(chain, BoundedAR1Chain):
            b = chain.state_bound
            envelope = rc.coeff_map(b) if rc.coeff_family == "ar1" else MA1Profile(theta=b)
            lags, values = self.coefficients(envelope)
            pairs = [(int(j), abs(float(v))) for j, v in zip(lags, values)]
            return FiniteProfile(coefficients=pairs)
        bound: Dict[int, float] = {}
        for theta in set(chain.states):
            lags, values = self.coefficients(rc.coeff_map(theta))
            for j, v in zip(lags, values):
                bound[int(j)] = max(bound.get(int(j), 0.0), abs(float(v)))
        return FiniteProfile(coefficients=sorted(bound.items()))

    def random_coeff_lag(self, rc: RandomCoefficientModel) -> int:
        """Common truncation lag for every row of a random-coefficient matrix."""
        if isinstance(rc.chain, BoundedAR1Chain):
            if rc.truncation_lag is not None:
                return int(rc.truncation_lag)
            return self.truncation_lag(self.uniform_bound(rc))
        return max(self.truncation_lag(rc.coeff_map(theta)) for theta in set(rc.chain.states))

    def row_coefficients(self, rc: RandomCoefficientModel, thetas: np.ndarray, lag: int) -> np.ndarray:
        """p x (lag + 1) matrix of c_0..c_lag for each row's latent state."""
        thetas = np.asarray(thetas, dtype=float)
        out = np.zeros((thetas.size, lag + 1))
        cache: Dict[float, np.ndarray] = {}
        for i, theta in enumerate(thetas):
            row = cache.get(theta)
            if row is None:
                lags, values = self.coefficients(rc.coeff_map(float(theta)).model_copy(
                    update={"truncation_lag": max(lag, 1)}
                ))
                row = np.zeros(lag + 1)
                keep = lags <= lag
                row[lags[keep]] = values[keep]
                if len(cache) < 4096:
                    cache[theta] = row
            out[i] = row
        return out

    def simulate_matrix_random_coeff(
        self,
        model: TailModel,
        rc: RandomCoefficientModel,
        p: int,
        n: int,
        rng: np.random.Generator,
        chain_rng: Optional[np.random.Generator] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Simulate X_it = sum_j c_j(theta_i) Z_{i,t-j}.

        Args:
            model: Noise law
            rc: Random coefficient model
            p: Number of rows
            n: Number of columns
            rng: Noise stream
            chain_rng: Latent chain stream; spawned off ``rng`` when omitted

        Returns:
            Tuple of (X, thetas)
        """
        if p < 1 or n < 1:
            raise ValueError(f"p and n must be >= 1, got p={p}, n={n}")
        if isinstance(rc.chain, BoundedAR1Chain):
            self._require_summable(self.uniform_bound(rc), model)
        else:
            for theta in set(rc.chain.states):
                self._require_summable(rc.coeff_map(theta), model)
        if chain_rng is None:
            chain_rng = rng.spawn(1)[0]
        thetas = chain_service.sample_theta_chain(rc, p, chain_rng)
        lag = self.random_coeff_lag(rc)
        coefficients = self.row_coefficients(rc, thetas, lag)
        noise = self.simulate_noise_matrix(model, p, n + 2 * lag, rng)
        x = self.apply_filter(noise, np.arange(lag + 1), coefficients, lag)
        return x, thetas


# Global linear process service instance
linproc_service = LinearProcessService()
