"""
Command handlers for the heavy-tail eigenvalue lab.
Each handler reads its inputs, delegates to the services and writes its
report files. Errors propagate to the global handler in app.main.
"""

from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

from app.config import settings
from app.models.errors import SchemaMismatchError, UnreliableEstimateError
from app.models.schemas import (
    CompareRequest,
    ExperimentConfig,
    LDCheckRequest,
    LimitLaw,
    LimitsRequest,
    RunManifest,
)
from app.repositories.result_repository import result_repository
from app.services.limits_service import limits_service
from app.services.montecarlo_service import MAX_COUNT_LEVEL, montecarlo_service
from app.services.seeding import StreamRole, child_rng


@contextmanager
def tracked_run(config: BaseModel, master_seed: int, out_dir: Path) -> Iterator[RunManifest]:
    """Write a running manifest, yield it for outputs, then finalize it."""
    manifest = RunManifest(
        config_digest=result_repository.config_digest(config),
        tool_version=settings.tool_version,
        master_seed=master_seed,
        started_at=datetime.now(timezone.utc),
    )
    result_repository.write_manifest(manifest, out_dir)
    try:
        yield manifest
    except Exception:
        manifest.status = "failed"
        manifest.finished_at = datetime.now(timezone.utc)
        result_repository.write_manifest(manifest, out_dir)
        raise
    manifest.status = "succeeded"
    manifest.finished_at = datetime.now(timezone.utc)
    result_repository.write_manifest(manifest, out_dir)


def _with_seed(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    if seed is None:
        return config
    raw = config.model_dump(mode="json")
    raw["master_seed"] = seed
    return result_repository.validate_model(raw, ExperimentConfig, source="--seed")


def cmd_simulate(
    config_path: Path, out_dir: Path, seed: Optional[int] = None, threads: Optional[int] = None
) -> int:
    """
    Run an experiment and write results.csv, timings.csv and manifest.json.

    Args:
        config_path: ExperimentConfig JSON document
        out_dir: Output directory
        seed: Overrides the config's master_seed
        threads: Worker count; affects speed only

    Returns:
        Process exit code
    """
    config = _with_seed(result_repository.load_model(config_path, ExperimentConfig), seed)
    out_dir = Path(out_dir)
    with tracked_run(config, config.master_seed, out_dir) as manifest:
        manifest.warnings.extend(config.regime_warnings())
        table = montecarlo_service.run_experiment(config, n_jobs=threads)
        paths = result_repository.write_results(table, out_dir)
        manifest.outputs.update({name: str(path) for name, path in paths.items()})
    logger.info(f"Simulation finished: {len(table)} rows in {out_dir}")
    return 0


def kth_cdf(law: LimitLaw, k: int) -> Callable[[np.ndarray], np.ndarray]:
    """Limit CDF of the k-th point, extended by 0 to x <= 0."""

    def cdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        positive = x > 0
        if np.any(positive):
            out[positive] = limits_service.kth_eigenvalue_cdf(law, k, x[positive])
        return out

    return cdf


def cmd_compare(results_path: Path, request: CompareRequest, out_dir: Path) -> int:
    """
    Compare the scaled eigenvalues in results.csv with the limit laws.

    Writes compare.csv, one row per (n, k, threshold) with the empirical and
    limiting CDF, the KS distance for that k and the count statistics at the
    threshold, and plotdata.csv with (x, empirical, theoretical) curves.
    """
    table = result_repository.read_results(results_path)
    tracked = result_repository.tracked_k(table)
    absent = [k for k in request.ks if k > tracked]
    if absent:
        raise SchemaMismatchError(f"results track k={tracked}; no eig columns for k={absent}")

    out_dir = Path(out_dir)
    law = request.law
    with tracked_run(request, 0, out_dir) as manifest:
        compare_rows: List[dict] = []
        plot_rows: List[dict] = []
        for n, group in table.groupby("n", sort=True):
            points = group[[f"eig_{j}" for j in range(1, tracked + 1)]].to_numpy()
            counts = montecarlo_service.count_process_stats(points, request.thresholds).set_index("threshold")
            for k in request.ks:
                sample = group[f"eig_{k}"].to_numpy()
                cdf = kth_cdf(law, k)
                ks = montecarlo_service.ks_statistic(sample, cdf)
                logger.info(f"n={n}, k={k}: KS distance {ks:.4f} over {sample.size} replications")
                for x in request.thresholds:
                    row = {
                        "n": int(n),
                        "k": k,
                        "threshold": x,
                        "empirical_cdf": float(montecarlo_service.empirical_cdf(sample, x)),
                        "theoretical_cdf": float(cdf(x)[0]),
                        "ks_distance": ks,
                        "nu": limits_service.poisson_intensity(law, x),
                    }
                    row.update(counts.loc[x].to_dict())
                    for m in range(MAX_COUNT_LEVEL + 1):
                        # P(N(x, inf) <= m) is the law of the (m + 1)-th point at x
                        row[f"poisson_le_{m}"] = limits_service.kth_eigenvalue_cdf(law, m + 1, x)
                    compare_rows.append(row)
                plot_rows.extend(_plot_curve(int(n), k, sample, cdf, request.plot_points))

        compare = pd.DataFrame(compare_rows)
        levels = range(MAX_COUNT_LEVEL + 1)
        count_columns = (
            ["mean_count", "var_count"]
            + [f"p_le_{m}" for m in levels]
            + [f"poisson_le_{m}" for m in levels]
            + ["censored"]
        )
        compare = compare[
            ["n", "k", "threshold", "empirical_cdf", "theoretical_cdf", "ks_distance", "nu"] + count_columns
        ]
        manifest.outputs["compare"] = str(result_repository.write_table(compare, out_dir / "compare.csv"))
        manifest.outputs["plotdata"] = str(
            result_repository.write_table(pd.DataFrame(plot_rows), out_dir / "plotdata.csv")
        )
    return 0


def _plot_curve(n: int, k: int, sample: np.ndarray, cdf: Callable, points: int) -> List[dict]:
    positive = sample[sample > 0]
    if positive.size == 0:
        return []
    low, high = np.quantile(positive, [0.005, 0.995])
    grid = np.geomspace(low, max(high, low * 1.0001), points)
    empirical = montecarlo_service.empirical_cdf(sample, grid)
    theoretical = cdf(grid)
    return [
        {"n": n, "k": k, "x": float(x), "empirical": float(e), "theoretical": float(t)}
        for x, e, t in zip(grid, empirical, theoretical)
    ]


def cmd_ldcheck(request: LDCheckRequest, out_dir: Path) -> int:
    """
    Estimate the large-deviation ratio over a grid of (n, x_n, y_n).

    Rows that rest on too few hits are kept and flagged as unreliable.
    """
    out_dir = Path(out_dir)
    with tracked_run(request, request.master_seed, out_dir) as manifest:
        records = []
        for index, grid_row in enumerate(request.rows):
            x_n = grid_row.x_n
            if x_n is None:
                x_n = montecarlo_service.tune_ld_threshold(request.tail, grid_row.n, grid_row.target)
                logger.info(f"Tuned x_n={x_n:.6g} for n={grid_row.n}, target {grid_row.target}")
            rng = child_rng(request.master_seed, grid_row.n, index, StreamRole.LARGE_DEVIATION)
            unreliable = False
            try:
                estimate = montecarlo_service.large_deviation_ratio(
                    request.tail, grid_row.n, x_n, grid_row.y_n, request.replications, rng
                )
            except UnreliableEstimateError as e:
                estimate = e.estimate
                unreliable = True
                manifest.warnings.append(e.detail)
            record = estimate.model_dump()
            record["unreliable"] = unreliable
            records.append(record)
        manifest.outputs["ldcheck"] = str(result_repository.write_table(pd.DataFrame(records), out_dir / "ldcheck.csv"))
    return 0


def cmd_limits(request: LimitsRequest, out_dir: Path) -> int:
    """
    Tabulate the limit-law quantities on a grid and write limits.csv.

    Columns: quantity, label, k, x, value, std_error.
    """
    out_dir = Path(out_dir)
    law = request.law
    with tracked_run(request, request.master_seed, out_dir) as manifest:
        rows = []
        for x in request.x_grid:
            rows.append(_limit_row("poisson_intensity", "", 0, x, limits_service.poisson_intensity(law, x)))
            for k in range(1, request.k_max + 1):
                rows.append(_limit_row("kth_cdf", "", k, x, limits_service.kth_eigenvalue_cdf(law, k, x)))
        for index, profile in enumerate(request.profiles):
            label = f"{index}:{profile.kind}"
            constant = limits_service.dependence_effect_constant(profile, law.alpha)
            rows.append(_limit_row("dependence_effect_constant", label, 0, float("nan"), constant))
            for x in request.x_grid:
                tilde = float(limits_service.tilde_intensity(law.alpha, profile, x))
                rows.append(_limit_row("tilde_intensity", label, 0, x, tilde))
        if request.random_coeff is not None:
            rng = child_rng(request.master_seed, 0, 0, StreamRole.LIMIT)
            scale = limits_service.random_coeff_scale_estimate(request.random_coeff, law.alpha, rng)
            rows.append(
                _limit_row(
                    "random_coeff_scale", request.random_coeff.coeff_family, 0, float("nan"),
                    scale.value, scale.std_error,
                )
            )
        manifest.outputs["limits"] = str(result_repository.write_table(pd.DataFrame(rows), out_dir / "limits.csv"))
    return 0


def _limit_row(quantity: str, label: str, k: int, x: float, value: float, std_error: float = 0.0) -> dict:
    return {"quantity": quantity, "label": label, "k": k, "x": x, "value": float(value), "std_error": std_error}
