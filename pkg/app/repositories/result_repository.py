"""
Result repository for experiment files.
Handles configuration loading, the versioned results.csv layout, report
tables, manifests and error records. Every write is atomic.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Type, TypeVar

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ValidationError

from app.config import settings
from app.models.errors import ConfigParseError, ConfigValidationError, SchemaMismatchError
from app.models.schemas import RESULT_LEADING_COLUMNS, RunManifest, result_columns

ModelT = TypeVar("ModelT", bound=BaseModel)

RESULTS_FILE = "results.csv"
TIMINGS_FILE = "timings.csv"
MANIFEST_FILE = "manifest.json"
ERROR_FILE = "error.json"
FLOAT_FORMAT = "%.17g"


class ResultRepository:
    """Repository for experiment inputs and outputs on the local filesystem."""

    # ------------------------------------------------------------------
    # Low-level writes
    # ------------------------------------------------------------------

    def _atomic_write_text(self, path: Path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
            os.replace(tmp_name, path)
        except Exception:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        return path

    def _csv_text(self, table: pd.DataFrame) -> str:
        return table.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def write_table(self, table: pd.DataFrame, path: Path) -> Path:
        """Write a report table as CSV with 17 significant digits."""
        try:
            written = self._atomic_write_text(path, self._csv_text(table))
            logger.info(f"Wrote {len(table)} rows to {written}")
            return written
        except Exception as e:
            logger.error(f"Error writing table {path}: {e}")
            raise

    # ------------------------------------------------------------------
    # Results
    # ------------------------------------------------------------------

    def write_results(self, table: pd.DataFrame, out_dir: Path) -> Dict[str, Path]:
        """
        Write results.csv, and timings.csv when the table carries wall times.

        Args:
            table: ResultTable from the Monte Carlo service
            out_dir: Output directory

        Returns:
            Mapping of output name to written path
        """
        out_dir = Path(out_dir)
        k = self.tracked_k(table)
        columns = result_columns(k)
        header = f"# {settings.results_schema}\n"
        paths = {
            "results": self._atomic_write_text(out_dir / RESULTS_FILE, header + self._csv_text(table[columns]))
        }
        if "wall_time" in table.columns:
            timings = table[["n", "p", "replication", "wall_time"]]
            paths["timings"] = self.write_table(timings, out_dir / TIMINGS_FILE)
        logger.info(f"Wrote {len(table)} result rows (k={k}) to {paths['results']}")
        return paths

    def read_results(self, path: Path) -> pd.DataFrame:
        """
        Read results.csv and check its schema line and column order.

        Raises:
            SchemaMismatchError: missing file, wrong schema string or column layout
        """
        path = Path(path)
        if not path.is_file():
            raise SchemaMismatchError(f"results file {path} does not exist")
        with path.open("r", encoding="utf-8") as handle:
            first = handle.readline().rstrip("\n")
        expected = f"# {settings.results_schema}"
        if first != expected:
            raise SchemaMismatchError(f"{path}: schema line is {first!r}, expected {expected!r}")
        table = pd.read_csv(path, skiprows=1)
        k = self.tracked_k(table)
        if k < 1 or list(table.columns) != result_columns(k):
            raise SchemaMismatchError(
                f"{path}: columns {list(table.columns)} do not match the results layout"
            )
        return table

    @staticmethod
    def tracked_k(table: pd.DataFrame) -> int:
        """Number of eig_j columns in a ResultTable."""
        k = 0
        while f"eig_{k + 1}" in table.columns:
            k += 1
        missing = [c for c in RESULT_LEADING_COLUMNS if c not in table.columns]
        if missing:
            raise SchemaMismatchError(f"result table lacks columns {missing}")
        return k

    # ------------------------------------------------------------------
    # Configuration and provenance
    # ------------------------------------------------------------------

    def load_model(self, path: Path, model: Type[ModelT]) -> ModelT:
        """
        Parse a JSON document into a validated model.

        Raises:
            ConfigParseError: unreadable file or invalid JSON
            ConfigValidationError: JSON violates the model's constraints
        """
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigParseError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigParseError(f"{path} is not valid JSON: {e}") from e
        return self.validate_model(raw, model, source=str(path))

    def validate_model(self, raw: Any, model: Type[ModelT], source: str = "config") -> ModelT:
        try:
            return model.model_validate(raw)
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
            )
            raise ConfigValidationError(f"{source}: {problems}") from e

    def config_digest(self, config: BaseModel) -> str:
        """SHA-256 of the canonical JSON form; independent of key order in the source file."""
        canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def write_manifest(self, manifest: RunManifest, out_dir: Path) -> Path:
        text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        return self._atomic_write_text(Path(out_dir) / MANIFEST_FILE, text)

    def read_manifest(self, out_dir: Path) -> RunManifest:
        path = Path(out_dir) / MANIFEST_FILE
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))

    def write_error(self, record: Dict[str, Any], out_dir: Path) -> Path:
        text = json.dumps(record, indent=2, sort_keys=True) + "\n"
        return self._atomic_write_text(Path(out_dir) / ERROR_FILE, text)

    @staticmethod
    def file_digest(path: Path) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# Global result repository instance
result_repository = ResultRepository()
