"""
Script to run the desk-scale acceptance checks of the heavy-tail eigenvalue lab.
Each check logs pass/fail; the summary is written to acceptance.csv.
"""

import argparse
import math
import sys
import tempfile
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import pandas as pd
from loguru import logger
from scipy import linalg

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.api.commands import cmd_simulate, kth_cdf  # noqa: E402
from app.main import setup_logging  # noqa: E402
from app.models.errors import UnreliableEstimateError  # noqa: E402
from app.models.schemas import (  # noqa: E402
    ExperimentConfig,
    FiniteMarkovChain,
    LimitLaw,
    MA1Profile,
    NoiseFamily,
    RandomCoefficientModel,
    TailModel,
    iid_profile,
)
from app.repositories.result_repository import result_repository  # noqa: E402
from app.services.limits_service import limits_service  # noqa: E402
from app.services.linproc_service import linproc_service  # noqa: E402
from app.services.montecarlo_service import montecarlo_service  # noqa: E402
from app.services.noise_service import noise_service  # noqa: E402
from app.services.seeding import StreamRole, child_rng  # noqa: E402
from app.services.spectra_service import spectra_service  # noqa: E402

PARETO_1 = {"alpha": 1.0, "family": "exact_pareto"}
MARKOV_TRANSITION = [[0.9, 0.1], [0.5, 0.5]]
COUNT_POINTS = 10


class AcceptanceRun:
    """Collects the outcome of each acceptance check."""

    def __init__(self, scale: float, n_jobs: int, seed: int):
        self.scale = scale
        self.n_jobs = n_jobs
        self.seed = seed
        self.records: List[Dict] = []
        self.tables: List[pd.DataFrame] = []

    def replications(self, full: int) -> int:
        return max(20, int(round(full * self.scale)))

    def record(self, criterion: str, statistic: float, bound: str, passed: bool):
        self.records.append(
            {"criterion": criterion, "statistic": float(statistic), "bound": bound, "passed": bool(passed)}
        )
        log = logger.info if passed else logger.warning
        log(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {statistic:.6g} ({bound})")

    def experiment(self, **fields) -> pd.DataFrame:
        fields.setdefault("master_seed", self.seed)
        config = ExperimentConfig.model_validate(fields)
        table = montecarlo_service.run_experiment(config, n_jobs=self.n_jobs)
        self.tables.append(table)
        return table

    # ------------------------------------------------------------------

    def iid_frechet(self):
        table = self.experiment(
            tail=PARETO_1,
            n_schedule=[500],
            p_rule={"kind": "explicit", "values": [500]},
            # P(N(1, inf) >= 10) is about 1e-7, so counts over ten points are uncensored
            k=COUNT_POINTS,
            replications=self.replications(2000),
        )
        law = LimitLaw(alpha=1.0)
        ks = montecarlo_service.ks_statistic(table["eig_1"], kth_cdf(law, 1))
        self.record("1 frechet law, iid", ks, "KS <= 0.08", ks <= 0.08)

        worst = 0.0
        for k in (2, 3):
            for x in (0.5, 1.0, 2.0, 4.0):
                empirical = float(montecarlo_service.empirical_cdf(table[f"eig_{k}"], x))
                worst = max(worst, abs(empirical - limits_service.kth_eigenvalue_cdf(law, k, x)))
        self.record("3 k-th order statistic law", worst, "max |F_n - F| <= 0.08", worst <= 0.08)

        counts = montecarlo_service.count_process_stats(
            table[[f"eig_{j}" for j in range(1, COUNT_POINTS + 1)]].to_numpy(), [1.0]
        ).iloc[0]
        dispersion = counts["var_count"] / counts["mean_count"]
        self.record(
            "4 poisson counts at x=1 (mean)", counts["mean_count"], "in [0.85, 1.15]",
            0.85 <= counts["mean_count"] <= 1.15,
        )
        self.record("4 poisson counts at x=1 (var/mean)", dispersion, "in [0.8, 1.2]", 0.8 <= dispersion <= 1.2)

    def dependence_scale(self):
        common = dict(
            tail=PARETO_1,
            n_schedule=[400],
            p_rule={"kind": "explicit", "values": [400]},
            replications=self.replications(1000),
        )
        iid = self.experiment(**common)
        ma1 = self.experiment(profile={"kind": "ma1", "theta": 1.0}, **common)
        ratio = ma1["eig_1"].median() / iid["eig_1"].median()
        self.record("2 dependence scale ma1(1) vs iid", ratio, "in [1.7, 2.3]", 1.7 <= ratio <= 2.3)

    def offdiag_negligibility(self):
        schedule = [200, 800, 3200]
        table = self.experiment(
            tail=PARETO_1,
            n_schedule=schedule,
            p_rule={"kind": "explicit", "values": [math.floor(math.sqrt(n)) for n in schedule]},
            replications=self.replications(200),
        )
        medians = table.groupby("n")["offdiag_scaled"].median().to_numpy()
        decreasing = bool(np.all(np.diff(medians) < 0))
        final_eig = table.loc[table["n"] == schedule[-1], "eig_1"].median()
        self.record("5 off-diagonal medians decreasing", float(decreasing), "strictly decreasing", decreasing)
        share = medians[-1] / final_eig
        self.record("5 off-diagonal final share", share, "< 0.1 x median eig_1", share < 0.1)

    def random_coefficients(self):
        chain = {"kind": "finite_markov", "states": [0.0, 1.0], "transition": MARKOV_TRANSITION}
        table = self.experiment(
            tail=PARETO_1,
            random_coeff={"chain": chain, "coeff_family": "ma1"},
            n_schedule=[400],
            p_rule={"kind": "explicit", "values": [400]},
            replications=self.replications(1000),
        )
        rc = RandomCoefficientModel(chain=FiniteMarkovChain(states=[0.0, 1.0], transition=MARKOV_TRANSITION))
        sigma2 = limits_service.random_coeff_scale(rc, 1.0)
        points = limits_service.sample_limit_points(
            LimitLaw(alpha=1.0, sigma2=sigma2), 1, child_rng(self.seed, 0, 0, StreamRole.LIMIT), size=10**5
        )
        deviation = abs(table["eig_1"].median() / np.median(points[:, 0]) - 1.0)
        self.record("8 random coefficients median", deviation, "relative deviation <= 0.2", deviation <= 0.2)

    def centered_trend(self):
        table = self.experiment(
            tail={"alpha": 2.5, "family": "symmetric_pareto", "center_mean": True},
            n_schedule=[3200],
            p_rule={"kind": "power", "c": 1.0, "beta": 0.3},
            replications=self.replications(200),
        )
        frechet_median = math.log(2.0) ** (-1.0 / 1.25)
        factor = table["eig_1"].median() / frechet_median
        self.record("trend alpha=2.5 centered", factor, "within factor 2", 0.5 <= factor <= 2.0)

    def weyl_coupling(self):
        rows = pd.concat(self.tables, ignore_index=True)
        slack = rows["offdiag_scaled"] + 1e-8 * rows["trace_scaled"] - rows["weyl_gap_scaled"]
        violations = int(np.sum(slack < 0))
        self.record("6 weyl coupling violations", violations, "== 0", violations == 0)

    def large_deviation(self):
        model = TailModel(alpha=1.0, family=NoiseFamily.EXACT_PARETO)
        n = 2000
        x_n = montecarlo_service.tune_ld_threshold(model, n, 0.01)
        rng = child_rng(self.seed, n, 0, StreamRole.LARGE_DEVIATION)
        try:
            estimate = montecarlo_service.large_deviation_ratio(
                model, n, x_n, 0.0, max(10**4, int(10**5 * self.scale)), rng
            )
        except UnreliableEstimateError as e:
            estimate = e.estimate
        self.record("7 large deviation ratio", estimate.ratio, "in [0.85, 1.15]", 0.85 <= estimate.ratio <= 1.15)
        self.record("7 large deviation hits", estimate.hits, ">= 500", estimate.hits >= 500)

    def pair_points(self):
        model = TailModel(alpha=0.8, family=NoiseFamily.SYMMETRIC_PARETO)
        n = 400
        rng = child_rng(self.seed, n, 0, StreamRole.PAIR_POINTS)
        report = montecarlo_service.pair_point_check(model, n, n, self.replications(2000), rng)
        self.record("pair points max-sum law", report.ks_statistic, "KS < 0.08", report.ks_statistic < 0.08)

        medians = []
        for n in (100, 400, 1600):
            rng = child_rng(self.seed, n, 1, StreamRole.PAIR_POINTS)
            medians.append(montecarlo_service.pair_point_check(model, n, n, self.replications(200), rng).median_ratio)
        decreasing = bool(np.all(np.diff(medians) < 0))
        self.record("pair points (sum - max)/sum median decreasing", float(decreasing), "strictly decreasing", decreasing)

    def solver_oracle(self):
        rng = child_rng(self.seed, 20, 0, StreamRole.NOISE)
        worst_eig, worst_trace = 0.0, 0.0
        for _ in range(100):
            A = spectra_service.gram_matrix(rng.standard_normal((20, 20)))
            full = np.sort(linalg.eigvalsh(A))[::-1]
            top = spectra_service.top_k_eigenvalues(A, 5)
            worst_eig = max(worst_eig, float(np.max(np.abs(top - full[:5]) / np.abs(full[:5]))))
            worst_trace = max(worst_trace, abs(full.sum() - np.trace(A)) / np.trace(A))
        self.record("9 solver oracle top-5", worst_eig, "<= 1e-10 relative", worst_eig <= 1e-10)
        self.record("9 solver oracle trace", worst_trace, "<= 1e-8 relative", worst_trace <= 1e-8)

    def determinism(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            config = tmp / "config.json"
            config.write_text(
                ExperimentConfig.model_validate(
                    {
                        "tail": PARETO_1,
                        "n_schedule": [50, 100],
                        "p_rule": {"kind": "power", "c": 1.0, "beta": 0.5},
                        "k": 2,
                        "replications": 8,
                        "master_seed": self.seed,
                    }
                ).model_dump_json(),
                encoding="utf-8",
            )
            cmd_simulate(config, tmp / "one", threads=1)
            cmd_simulate(config, tmp / "two", threads=max(2, self.n_jobs))
            same = result_repository.file_digest(tmp / "one" / "results.csv") == result_repository.file_digest(
                tmp / "two" / "results.csv"
            )
        self.record("10 determinism across worker counts", float(same), "identical SHA-256", same)

    def closed_forms(self):
        pareto_1 = TailModel(alpha=1.0, family=NoiseFamily.EXACT_PARETO)
        sym_2 = TailModel(alpha=2.0, family=NoiseFamily.SYMMETRIC_PARETO, center_mean=True)
        raw_pareto: Callable[[float], TailModel] = lambda a: TailModel.model_construct(
            alpha=a, family=NoiseFamily.EXACT_PARETO, center_mean=False
        )
        law_2 = LimitLaw(alpha=2.0)
        cases = [
            (noise_service.survival(pareto_1, 1000.0), 0.001),
            (noise_service.survival(sym_2, 10.0), 0.01),
            (noise_service.norming_constant(pareto_1, 1000), 1000.0),
            (noise_service.norming_constant(sym_2, 10**4), 100.0),
            (noise_service.truncated_second_moment(raw_pareto(2.0), math.e**2), 2.0),
            (noise_service.truncated_second_moment(raw_pareto(3.0), math.inf), 3.0),
            (linproc_service.coeff(MA1Profile(theta=0.7), 1), 0.7),
            (linproc_service.sum_squared(MA1Profile(theta=0.5)), 1.25),
            (linproc_service.sum_squared(iid_profile()), 1.0),
            (linproc_service.sum_abs_pow(MA1Profile(theta=1.0), 2.0), 2.0),
            (limits_service.poisson_intensity(law_2, 1.0), 1.0),
            (limits_service.poisson_intensity(law_2, 4.0), 0.25),
            (limits_service.poisson_intensity(LimitLaw(alpha=2.0, sigma2=2.0), 1.0), 2.0),
            (limits_service.largest_eigenvalue_cdf(law_2, 1.0), math.exp(-1.0)),
            (limits_service.kth_eigenvalue_cdf(law_2, 2, 1.0), 2.0 * math.exp(-1.0)),
            (limits_service.dependence_effect_constant(MA1Profile(theta=1.0), 2.0), 1.0),
            (limits_service.dependence_effect_constant(MA1Profile(theta=1.0), 1.0), math.sqrt(2.0) / 2.0),
        ]
        worst = max(abs(value - expected) / abs(expected) for value, expected in cases)
        self.record("11 closed-form suite", worst, "<= 1e-12 relative", worst <= 1e-12)


def run_acceptance(out_dir: Path, scale: float, n_jobs: int, seed: int) -> pd.DataFrame:
    """Run every acceptance check and write acceptance.csv."""
    try:
        logger.info(f"Starting acceptance run (scale={scale}, n_jobs={n_jobs}, seed={seed})")
        run = AcceptanceRun(scale, n_jobs, seed)
        run.closed_forms()
        run.solver_oracle()
        run.iid_frechet()
        run.dependence_scale()
        run.offdiag_negligibility()
        run.random_coefficients()
        run.centered_trend()
        run.weyl_coupling()
        run.large_deviation()
        run.pair_points()
        run.determinism()

        summary = pd.DataFrame(run.records)
        result_repository.write_table(summary, Path(out_dir) / "acceptance.csv")
        logger.info(f"Acceptance finished: {int(summary['passed'].sum())}/{len(summary)} checks passed")
        return summary

    except Exception as e:
        logger.error(f"Error during acceptance run: {e}")
        raise


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Desk-scale acceptance checks")
    parser.add_argument("--out", type=Path, default=Path("acceptance"))
    parser.add_argument("--scale", type=float, default=1.0, help="fraction of the full replication counts")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=20240611)
    args = parser.parse_args()
    setup_logging()
    summary = run_acceptance(args.out, args.scale, args.threads, args.seed)
    sys.exit(0 if summary["passed"].all() else 1)
