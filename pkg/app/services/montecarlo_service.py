"""
Monte Carlo service for the heavy-tail eigenvalue lab.
Runs seeded replication loops over an experiment schedule and provides the
empirical statistics used to compare them against the limit laws.
"""

import math
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from scipy import stats

from app.config import settings
from app.models.errors import ConfigValidationError, ReplicationFailedError, UnreliableEstimateError
from app.models.schemas import (
    Centering,
    ExperimentConfig,
    JointTailEstimate,
    LargeDeviationEstimate,
    LimitLaw,
    PairPointReport,
    TailModel,
    result_columns,
)
from app.services.limits_service import limits_service
from app.services.linproc_service import linproc_service
from app.services.noise_service import noise_service
from app.services.seeding import StreamRole, child_rng
from app.services.spectra_service import spectra_service

# Highest m reported in P(count <= m)
MAX_COUNT_LEVEL = 4
# Slack in the b_n x_n / n^(1+delta) growth check for alpha/2 >= 1
LD_GROWTH_DELTA = 0.05
# Relative slack on the Weyl coupling check, scaled by the trace
WEYL_TRACE_RTOL = 1e-8


def _replication_task(
    config: ExperimentConfig, n: int, p: int, replication: int, a_np: float, noise_factor: float
) -> Dict[str, float]:
    """One (n, replication) row. Module level so joblib workers can import it."""
    started = time.perf_counter()
    try:
        noise_rng = child_rng(config.master_seed, n, replication, StreamRole.NOISE)
        if config.random_coeff is not None:
            chain_rng = child_rng(config.master_seed, n, replication, StreamRole.CHAIN)
            X, thetas = linproc_service.simulate_matrix_random_coeff(
                config.tail, config.random_coeff, p, n, noise_rng, chain_rng
            )
            unique, counts = np.unique(thetas, return_counts=True)
            squares = np.array(
                [linproc_service.sum_squared(config.random_coeff.coeff_map(float(t))) for t in unique]
            )
            mu = noise_factor * float(squares @ counts) / p
        else:
            profile = config.effective_profile()
            X = linproc_service.simulate_matrix(config.tail, profile, p, n, noise_rng)
            mu = noise_factor * linproc_service.sum_squared(profile)
        if config.centering == Centering.OFF:
            mu = 0.0

        sample = spectra_service.spectral_sample(X, config.k)
    except ConfigValidationError:
        raise
    except Exception as e:
        logger.error(f"Replication (n={n}, r={replication}) failed: {e}")
        raise ReplicationFailedError(str(e), n, replication) from e

    if sample.weyl_gap > sample.offdiag_inf_norm + WEYL_TRACE_RTOL * sample.trace:
        logger.warning(
            f"Weyl coupling violated at (n={n}, r={replication}): gap {sample.weyl_gap:.6g} "
            f"> offdiag {sample.offdiag_inf_norm:.6g}"
        )

    scale = a_np**2
    row: Dict[str, float] = {"n": n, "p": p, "replication": replication, "a_np": a_np, "mu": mu}
    eigs = spectra_service.center_scale(sample.eigen_topk, n, mu, a_np)
    diags = spectra_service.center_scale(sample.diag_topk, n, mu, a_np)
    for j in range(config.k):
        row[f"eig_{j + 1}"] = float(eigs[j])
    for j in range(config.k):
        row[f"diag_{j + 1}"] = float(diags[j])
    row["offdiag_scaled"] = sample.offdiag_inf_norm / scale
    row["cross_max_scaled"] = sample.cross_max / scale
    row["trace_scaled"] = sample.trace / scale
    row["weyl_gap_scaled"] = sample.weyl_gap / scale
    row["wall_time"] = time.perf_counter() - started
    logger.debug(f"Replication (n={n}, r={replication}) eig_1={row['eig_1']:.6g}")
    return row


class MonteCarloService:
    """Service for seeded experiment runs and their empirical statistics."""

    def run_experiment(self, config: ExperimentConfig, n_jobs: Optional[int] = None) -> pd.DataFrame:
        """
        Run every (n, replication) pair of an experiment.

        Args:
            config: Validated experiment description
            n_jobs: Worker count (settings default); never changes the output

        Returns:
            ResultTable with one row per (n, replication), sorted by (n, replication),
            plus a trailing wall_time column
        """
        try:
            for message in config.regime_warnings():
                logger.warning(f"Growth regime: {message}")
            n_jobs = settings.n_jobs if n_jobs is None else n_jobs
            logger.info(
                f"Starting experiment: {len(config.n_schedule)} sample sizes x "
                f"{config.replications} replications, k={config.k}, n_jobs={n_jobs}"
            )

            rows: List[Dict[str, float]] = []
            for n, p in config.schedule():
                a_np = noise_service.norming_constant(config.tail, n * p)
                if config.centering == Centering.OFF:
                    noise_factor = 0.0
                else:
                    noise_factor = spectra_service.noise_second_moment(config.tail, n, p)
                tasks = (
                    delayed(_replication_task)(config, n, p, r, a_np, noise_factor)
                    for r in range(config.replications)
                )
                rows.extend(Parallel(n_jobs=n_jobs)(tasks))
                logger.info(f"Finished n={n}, p={p}: {config.replications} replications, a_np={a_np:.6g}")

            table = pd.DataFrame(rows, columns=result_columns(config.k) + ["wall_time"])
            logger.info(f"Experiment finished with {len(table)} rows")
            return table

        except Exception as e:
            logger.error(f"Error running experiment: {e}")
            raise

    # ------------------------------------------------------------------
    # Goodness of fit
    # ------------------------------------------------------------------

    def ks_statistic(self, sample: Sequence[float], cdf: Callable) -> float:
        """
        Kolmogorov-Smirnov distance between a sample and a continuous CDF.

        Args:
            sample: Nonempty sample
            cdf: Nondecreasing function into [0, 1], applied to arrays

        Returns:
            sup_i max(|i/R - F(x_(i))|, |(i-1)/R - F(x_(i))|)
        """
        values = np.asarray(sample, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("KS statistic needs a nonempty sample")
        return float(stats.kstest(values, cdf).statistic)

    def empirical_cdf(self, sample: Sequence[float], x) -> np.ndarray:
        """Fraction of the sample at or below each x."""
        ordered = np.sort(np.asarray(sample, dtype=float).ravel())
        return np.searchsorted(ordered, np.asarray(x, dtype=float), side="right") / ordered.size

    def count_process_stats(self, scaled_points, thresholds: Sequence[float]) -> pd.DataFrame:
        """
        Statistics of N_n(x, inf) across replications.

        Args:
            scaled_points: One sequence of scaled points per replication
                (a 2-d array or ragged lists; only the tracked points count)
            thresholds: Levels x > 0

        Returns:
            DataFrame with threshold, mean_count, var_count, p_le_0..p_le_4 and the
            censored fraction. Counts can never exceed the number of tracked points,
            so P(count <= m) is NaN for m at or beyond that number.
        """
        rows = [np.asarray(points, dtype=float).ravel() for points in scaled_points]
        if not rows:
            raise ValueError("count statistics need at least one replication")
        tracked = min(r.size for r in rows)
        width = max(r.size for r in rows)
        padded = np.full((len(rows), width), -np.inf)
        for i, r in enumerate(rows):
            padded[i, : r.size] = r

        records = []
        for x in thresholds:
            if not x > 0:
                raise ValueError(f"thresholds must be > 0, got {x}")
            counts = np.sum(padded > x, axis=1)
            record = {
                "threshold": float(x),
                "mean_count": float(counts.mean()),
                "var_count": float(counts.var(ddof=1)) if counts.size > 1 else 0.0,
            }
            for m in range(MAX_COUNT_LEVEL + 1):
                record[f"p_le_{m}"] = float(np.mean(counts <= m)) if m < tracked else math.nan
            record["censored"] = float(np.mean(counts >= tracked))
            records.append(record)
        return pd.DataFrame(records)

    # ------------------------------------------------------------------
    # Single-big-jump checks
    # ------------------------------------------------------------------

    def _joint_exceedances(
        self,
        model: TailModel,
        n: int,
        sum_level: float,
        max_level: float,
        replications: int,
        rng: np.random.Generator,
    ) -> int:
        """Blocks of n squared draws with sum > sum_level and max > max_level."""
        hits = 0
        remaining = replications
        while remaining > 0:
            batch = min(settings.ld_batch_size, remaining)
            squares = noise_service.sample_noise_array(model, (batch, n), rng) ** 2
            hit = (squares.sum(axis=1) > sum_level) & (squares.max(axis=1) > max_level)
            hits += int(np.count_nonzero(hit))
            remaining -= batch
        return hits

    def large_deviation_ratio(
        self,
        model: TailModel,
        n: int,
        x_n: float,
        y_n: float,
        replications: int,
        rng: np.random.Generator,
    ) -> LargeDeviationEstimate:
        """
        P(sum Y_t > b_n x_n, max Y_t > b_n y_n) / (n P(Y_1 > b_n max(x_n, y_n))) with Y = Z^2.

        Args:
            model: Noise law of Z
            n: Block length
            x_n: Sum threshold in units of b_n
            y_n: Max threshold in units of b_n (>= 0)
            replications: Number of independent n-blocks
            rng: Random stream

        Returns:
            Ratio estimate with its binomial standard error

        Raises:
            UnreliableEstimateError: fewer than ``settings.min_ld_hits`` hits
        """
        if n < 1 or replications < 1:
            raise ValueError(f"n and replications must be >= 1, got n={n}, R={replications}")
        if not x_n > 0 or y_n < 0:
            raise ValueError(f"need x_n > 0 and y_n >= 0, got x_n={x_n}, y_n={y_n}")
        b_n = noise_service.norming_constant(model, n) ** 2
        if model.alpha / 2.0 >= 1.0 and b_n * x_n / n ** (1.0 + LD_GROWTH_DELTA) <= 1.0:
            logger.warning(
                f"b_n x_n / n^(1+delta) = {b_n * x_n / n ** (1.0 + LD_GROWTH_DELTA):.3g} is not large; "
                "the sum threshold sits in the central region"
            )

        hits = self._joint_exceedances(model, n, b_n * x_n, b_n * y_n, replications, rng)
        numerator = hits / replications
        numerator_se = math.sqrt(numerator * (1.0 - numerator) / replications)
        denominator = n * noise_service.survival(model, math.sqrt(b_n * max(x_n, y_n)))
        if denominator <= 0.0:
            raise ValueError(f"analytic denominator vanished at x_n={x_n}, y_n={y_n}")

        estimate = LargeDeviationEstimate(
            n=n,
            x_n=x_n,
            y_n=y_n,
            b_n=b_n,
            numerator=numerator,
            denominator=denominator,
            ratio=numerator / denominator,
            std_error=numerator_se / denominator,
            hits=hits,
            replications=replications,
        )
        logger.debug(f"Large deviation ratio at n={n}: {estimate.ratio:.4f} +/- {estimate.std_error:.4f}")
        if hits < settings.min_ld_hits:
            logger.warning(f"Only {hits} hits at n={n}, x_n={x_n}, y_n={y_n}")
            raise UnreliableEstimateError(
                f"{hits} numerator hits < {settings.min_ld_hits}; ratio is unreliable", estimate
            )
        return estimate

    def tune_ld_threshold(self, model: TailModel, n: int, target: float) -> float:
        """x_n with n P(Y_1 > b_n x_n) = target, for Y = Z^2 and b_n = a_n^2."""
        if not 0.0 < target < n:
            raise ValueError(f"target must lie in (0, n), got {target}")
        b_n = noise_service.norming_constant(model, n) ** 2
        return noise_service.norming_constant(model, n / target) ** 2 / b_n

    def joint_tail_check(
        self,
        model: TailModel,
        n: int,
        p: int,
        x: float,
        y: float,
        replications: int,
        rng: np.random.Generator,
    ) -> JointTailEstimate:
        """p P(sum Z^2 > a_np^2 x, max Z^2 > a_np^2 y) against its limit max(x, y)^{-alpha/2}."""
        if model.alpha >= 2.0:
            raise ValueError("joint tail check needs alpha < 2")
        if not x > 0 or not y > 0:
            raise ValueError(f"x and y must be > 0, got x={x}, y={y}")
        scale = noise_service.norming_constant(model, n * p) ** 2
        hits = self._joint_exceedances(model, n, scale * x, scale * y, replications, rng)
        q = hits / replications
        if hits < settings.min_ld_hits:
            logger.warning(f"Joint tail check at (x={x}, y={y}) rests on {hits} hits")
        return JointTailEstimate(
            x=x,
            y=y,
            estimate=p * q,
            std_error=p * math.sqrt(q * (1.0 - q) / replications),
            limit=max(x, y) ** (-model.alpha / 2.0),
            hits=hits,
            replications=replications,
        )

    def pair_point_check(
        self, model: TailModel, n: int, p: int, replications: int, rng: np.random.Generator
    ) -> PairPointReport:
        """
        Row-wise (sum, max) of squared noise at the row with the largest sum.

        Args:
            model: Noise law with alpha < 2
            n: Row length
            p: Number of rows
            replications: Number of p x n blocks
            rng: Random stream

        Returns:
            KS distance of the scaled largest row sum against exp(-x^{-alpha/2}),
            and the (sum - max) / sum ratios at the argmax row
        """
        if model.alpha >= 2.0:
            raise ValueError("pair point check needs alpha < 2")
        scale = noise_service.norming_constant(model, n * p) ** 2
        maxima = np.empty(replications)
        ratios = np.empty(replications)
        for r in range(replications):
            squares = noise_service.sample_noise_array(model, (p, n), rng) ** 2
            sums = squares.sum(axis=1)
            top = int(np.argmax(sums))
            maxima[r] = sums[top] / scale
            ratios[r] = (sums[top] - squares[top].max()) / sums[top]
        law = LimitLaw(alpha=model.alpha, sigma2=1.0)
        ks = self.ks_statistic(maxima, lambda v: limits_service.largest_eigenvalue_cdf(law, v))
        return PairPointReport(
            ks_statistic=ks,
            median_ratio=float(np.median(ratios)),
            scaled_max_sums=maxima,
            ratios=np.clip(ratios, 0.0, 1.0),
        )

    def synthetic_result_table(self, law: LimitLaw, k: int, replications: int, seed: int) -> pd.DataFrame:
        """ResultTable whose eigenvalue columns are drawn from the limit process itself."""
        rng = child_rng(seed, 0, 0, StreamRole.LIMIT)
        points = limits_service.sample_limit_points(law, k, rng, size=replications)
        table = pd.DataFrame(
            {
                "n": 1,
                "p": k,
                "replication": np.arange(replications),
                "a_np": 1.0,
                "mu": 0.0,
            }
        )
        for j in range(k):
            table[f"eig_{j + 1}"] = points[:, j]
        for j in range(k):
            table[f"diag_{j + 1}"] = points[:, j]
        for column in ("offdiag_scaled", "cross_max_scaled", "weyl_gap_scaled"):
            table[column] = 0.0
        table["trace_scaled"] = points.sum(axis=1)
        return table[result_columns(k)]


# Global Monte Carlo service instance
montecarlo_service = MonteCarloService()
