"""
Error types for the heavy-tail eigenvalue lab.
Each error carries the process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base error with a human-readable detail and a CLI exit code."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def to_record(self) -> Dict[str, Any]:
        """Machine-readable error record."""
        return {
            "error": type(self).__name__,
            "detail": self.detail,
            "exit_code": self.exit_code,
        }


class ConfigParseError(LabError):
    """Configuration file is missing or is not valid JSON."""

    exit_code = 2


class ConfigValidationError(LabError):
    """Configuration parsed but violates a model constraint."""

    exit_code = 3


class SchemaMismatchError(LabError):
    """A results file does not carry the expected schema or columns."""

    exit_code = 4


class LabRuntimeError(LabError):
    """Failure while computing."""

    exit_code = 1


class NormingConstantError(LabRuntimeError):
    """Survival inversion could not bracket the requested level."""


class QuadratureError(LabRuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class SolverConvergenceError(LabRuntimeError):
    """Iterative eigensolver did not converge."""

    def __init__(self, detail: str, residuals: Optional[list] = None):
        super().__init__(detail)
        self.residuals = residuals or []

    def __reduce__(self):
        return type(self), (self.detail, self.residuals)

    def to_record(self) -> Dict[str, Any]:
        record = super().to_record()
        record["residuals"] = [float(r) for r in self.residuals]
        return record


class ReducibleChainError(LabRuntimeError):
    """Markov chain has no unique stationary distribution."""


class ReplicationFailedError(LabRuntimeError):
    """A Monte Carlo replication failed; the experiment is aborted."""

    def __init__(self, detail: str, n: int, replication: int):
        super().__init__(f"replication (n={n}, r={replication}) failed: {detail}")
        self.cause = detail
        self.n = n
        self.replication = replication

    def __reduce__(self):
        return type(self), (self.cause, self.n, self.replication)

    def to_record(self) -> Dict[str, Any]:
        record = super().to_record()
        record.update({"n": self.n, "replication": self.replication})
        return record


class UnreliableEstimateError(LabRuntimeError):
    """A Monte Carlo ratio was estimated from too few hits."""

    def __init__(self, detail: str, estimate: Any = None):
        super().__init__(detail)
        self.estimate = estimate

    def __reduce__(self):
        return type(self), (self.detail, self.estimate)
