"""
End-to-end tests for the command-line surface and the files it writes.
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from app.api.commands import cmd_compare
from app.config import settings
from app.main import run
from app.models.errors import SchemaMismatchError
from app.models.schemas import CompareRequest, LimitLaw, result_columns
from app.repositories.result_repository import result_repository
from app.services.montecarlo_service import montecarlo_service

MINIMAL_CONFIG = {
    "tail": {"alpha": 1.0, "family": "exact_pareto"},
    "n_schedule": [10],
    "p_rule": {"kind": "explicit", "values": [5]},
    "k": 2,
    "replications": 2,
    "master_seed": "12345",
}


@pytest.fixture(autouse=True)
def _log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "log_file", str(tmp_path / "logs" / "lab.log"))


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestSimulate:
    def test_minimal_run(self, tmp_path, out_dir):
        config = write_json(tmp_path / "config.json", MINIMAL_CONFIG)
        assert run(["--quiet", "simulate", "--config", str(config), "--out", str(out_dir)]) == 0

        raw = (out_dir / "results.csv").read_bytes()
        assert raw.startswith(b"# heavytail-lab/results/1\n")
        assert b"\r\n" not in raw
        table = result_repository.read_results(out_dir / "results.csv")
        assert len(table) == 2
        assert list(table.columns) == result_columns(2)
        assert (out_dir / "timings.csv").is_file()

        manifest = result_repository.read_manifest(out_dir)
        assert manifest.status == "succeeded"
        assert manifest.master_seed == 12345
        assert manifest.finished_at is not None
        assert set(manifest.outputs) == {"results", "timings"}

    def test_rerun_is_byte_identical(self, tmp_path):
        config = write_json(tmp_path / "config.json", MINIMAL_CONFIG)
        first, second = tmp_path / "a", tmp_path / "b"
        assert run(["simulate", "--config", str(config), "--out", str(first)]) == 0
        assert run(["simulate", "--config", str(config), "--out", str(second), "--threads", "2"]) == 0
        assert result_repository.file_digest(first / "results.csv") == result_repository.file_digest(
            second / "results.csv"
        )

    def test_key_order_does_not_matter(self, tmp_path):
        reordered = dict(reversed(list(MINIMAL_CONFIG.items())))
        a = write_json(tmp_path / "a.json", MINIMAL_CONFIG)
        b = write_json(tmp_path / "b.json", reordered)
        assert run(["simulate", "--config", str(a), "--out", str(tmp_path / "ra")]) == 0
        assert run(["simulate", "--config", str(b), "--out", str(tmp_path / "rb")]) == 0
        assert (
            result_repository.read_manifest(tmp_path / "ra").config_digest
            == result_repository.read_manifest(tmp_path / "rb").config_digest
        )
        assert (tmp_path / "ra" / "results.csv").read_bytes() == (tmp_path / "rb" / "results.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        config = write_json(tmp_path / "config.json", MINIMAL_CONFIG)
        assert run(["simulate", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
        assert run(["simulate", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "99"]) == 0
        assert result_repository.read_manifest(tmp_path / "b").master_seed == 99
        assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()

    def test_alpha_out_of_range(self, tmp_path, out_dir, capsys):
        bad = dict(MINIMAL_CONFIG, tail={"alpha": 4.5, "family": "symmetric_pareto", "center_mean": True})
        config = write_json(tmp_path / "config.json", bad)
        assert run(["simulate", "--config", str(config), "--out", str(out_dir)]) == 3
        record = json.loads((out_dir / "error.json").read_text())
        assert record["exit_code"] == 3
        assert "alpha must lie in (0, 4)" in record["detail"]
        assert "ConfigValidationError" in capsys.readouterr().err

    def test_overflowing_p_rule(self, tmp_path, out_dir):
        bad = dict(MINIMAL_CONFIG, p_rule={"kind": "expgrowth", "C": 1.0, "c": 1.0, "kappa": 3.0})
        config = write_json(tmp_path / "config.json", bad)
        assert run(["simulate", "--config", str(config), "--out", str(out_dir)]) == 3
        assert "overflows" in json.loads((out_dir / "error.json").read_text())["detail"]

    def test_unparseable_config(self, tmp_path, out_dir):
        config = tmp_path / "config.json"
        config.write_text("{not json", encoding="utf-8")
        assert run(["simulate", "--config", str(config), "--out", str(out_dir)]) == 2

    def test_missing_config(self, tmp_path, out_dir):
        assert run(["simulate", "--config", str(tmp_path / "absent.json"), "--out", str(out_dir)]) == 2


class TestCompare:
    def test_limit_law_self_test(self, tmp_path, out_dir):
        R = 2000
        law = LimitLaw(alpha=1.0)
        result_repository.write_results(montecarlo_service.synthetic_result_table(law, 3, R, seed=5), tmp_path)
        request = write_json(
            tmp_path / "compare.json",
            {"law": {"alpha": 1.0}, "ks": [1, 2, 3], "thresholds": [0.5, 1.0, 2.0, 4.0], "plot_points": 50},
        )
        code = run(
            ["compare", "--results", str(tmp_path / "results.csv"), "--config", str(request), "--out", str(out_dir)]
        )
        assert code == 0

        compare = pd.read_csv(out_dir / "compare.csv")
        assert len(compare) == 3 * 4
        assert (compare["ks_distance"] < 1.36 / math.sqrt(R) * 1.5).all()
        assert ((compare["empirical_cdf"] - compare["theoretical_cdf"]).abs() < 0.05).all()
        for m in range(3):
            assert ((compare[f"p_le_{m}"] - compare[f"poisson_le_{m}"]).abs() < 0.05).all()
        for _, row in compare.iterrows():
            nu = row["nu"]
            poisson = [math.exp(-nu) * sum(nu**j / math.factorial(j) for j in range(m + 1)) for m in range(5)]
            np.testing.assert_allclose(row[[f"poisson_le_{m}" for m in range(5)]].to_numpy(float), poisson, rtol=1e-12)
        plot = pd.read_csv(out_dir / "plotdata.csv")
        assert list(plot.columns) == ["n", "k", "x", "empirical", "theoretical"]
        assert len(plot) == 3 * 50

    def test_missing_k_column(self, tmp_path, out_dir):
        table = montecarlo_service.synthetic_result_table(LimitLaw(alpha=1.0), 2, 20, seed=1)
        result_repository.write_results(table, tmp_path)
        request = CompareRequest(law=LimitLaw(alpha=1.0), ks=[3])
        with pytest.raises(SchemaMismatchError):
            cmd_compare(tmp_path / "results.csv", request, out_dir)

        config = write_json(tmp_path / "compare.json", {"law": {"alpha": 1.0}, "ks": [3]})
        code = run(
            ["compare", "--results", str(tmp_path / "results.csv"), "--config", str(config), "--out", str(out_dir)]
        )
        assert code == 4

    def test_schema_line_required(self, tmp_path, out_dir):
        table = montecarlo_service.synthetic_result_table(LimitLaw(alpha=1.0), 1, 10, seed=1)
        table.to_csv(tmp_path / "results.csv", index=False)
        config = write_json(tmp_path / "compare.json", {"law": {"alpha": 1.0}})
        code = run(
            ["compare", "--results", str(tmp_path / "results.csv"), "--config", str(config), "--out", str(out_dir)]
        )
        assert code == 4


class TestLDCheck:
    def test_grid_with_unreliable_row(self, tmp_path, out_dir):
        config = write_json(
            tmp_path / "ld.json",
            {
                "tail": {"alpha": 1.0, "family": "exact_pareto"},
                "rows": [{"n": 200, "target": 0.05}, {"n": 100, "target": 0.0001}],
                "replications": 4000,
                "master_seed": 3,
            },
        )
        assert run(["ldcheck", "--config", str(config), "--out", str(out_dir)]) == 0
        table = pd.read_csv(out_dir / "ldcheck.csv")
        assert table["unreliable"].tolist() == [False, True]
        assert table.loc[0, "hits"] >= 50
        assert table.loc[0, "denominator"] == pytest.approx(0.05, rel=1e-9)
        assert result_repository.read_manifest(out_dir).warnings


class TestLimits:
    def test_closed_form_table(self, tmp_path, out_dir):
        config = write_json(
            tmp_path / "limits.json",
            {
                "law": {"alpha": 2.0},
                "x_grid": [1.0, 4.0],
                "k_max": 2,
                "profiles": [{"kind": "finite", "coefficients": [[0, 1.0]]}, {"kind": "ma1", "theta": 1.0}],
                "random_coeff": {"chain": {"kind": "iid", "states": [0.0, 1.0], "probabilities": [0.5, 0.5]}},
            },
        )
        assert run(["limits", "--config", str(config), "--out", str(out_dir)]) == 0
        table = pd.read_csv(out_dir / "limits.csv")

        def value(quantity, **where):
            rows = table[table["quantity"] == quantity]
            for column, expected in where.items():
                rows = rows[rows[column] == expected]
            assert len(rows) == 1
            return float(rows["value"].iloc[0])

        assert value("poisson_intensity", x=1.0) == 1.0
        assert value("poisson_intensity", x=4.0) == 0.25
        assert value("kth_cdf", k=2, x=1.0) == pytest.approx(2 * math.exp(-1), rel=1e-12)
        assert value("dependence_effect_constant", label="0:finite") == 1.0
        assert value("dependence_effect_constant", label="1:ma1") == pytest.approx(1.0, rel=1e-15)
        assert value("random_coeff_scale") == pytest.approx(1.5, rel=1e-15)
