"""
Pydantic schemas for the lab's domain types.
Defines noise laws, coefficient profiles, latent chains, limit laws,
experiment descriptions and the records written next to results.
"""

import math
from datetime import datetime
from enum import Enum
from typing import Annotated, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    field_validator,
    model_validator,
)


STOCHASTIC_TOL = 1e-12


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


class NoiseFamily(str, Enum):
    """Regularly varying noise families with exact survival functions."""

    EXACT_PARETO = "exact_pareto"
    SYMMETRIC_PARETO = "symmetric_pareto"
    STUDENT_T = "student_t"


class TailModel(BaseModel):
    """Regularly varying noise law with tail index alpha.

    For ``student_t`` the degrees of freedom equal ``alpha``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float
    family: NoiseFamily = NoiseFamily.SYMMETRIC_PARETO
    center_mean: bool = False

    @field_validator("alpha")
    @classmethod
    def _alpha_in_range(cls, v: float) -> float:
        if not (0.0 < v < 4.0) or not math.isfinite(v):
            raise ValueError(f"alpha must lie in (0, 4), got {v}")
        return v

    @model_validator(mode="after")
    def _check_centering(self) -> "TailModel":
        if 5.0 / 3.0 < self.alpha < 4.0 and not self.center_mean:
            raise ValueError(
                f"center_mean must be true for alpha in (5/3, 4), got alpha={self.alpha}"
            )
        if self.family == NoiseFamily.EXACT_PARETO and self.center_mean and self.alpha <= 1.0:
            raise ValueError("exact_pareto has no finite mean for alpha <= 1; cannot center")
        return self

    @property
    def balance_q(self) -> float:
        """Limiting share of tail mass on the positive side."""
        return 1.0 if self.family == NoiseFamily.EXACT_PARETO else 0.5


# ---------------------------------------------------------------------------
# Coefficient profiles
# ---------------------------------------------------------------------------


class _ProfileBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # None lets the linear-process service choose J from the tail tolerance.
    truncation_lag: Optional[PositiveInt] = None


class FiniteProfile(_ProfileBase):
    """Finitely many nonzero coefficients given as (lag, value) pairs."""

    kind: Literal["finite"] = "finite"
    coefficients: List[Tuple[int, float]]

    @field_validator("coefficients")
    @classmethod
    def _unique_lags(cls, v: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        if not v:
            raise ValueError("finite profile needs at least one coefficient")
        lags = [j for j, _ in v]
        if len(set(lags)) != len(lags):
            raise ValueError("finite profile has duplicate lags")
        return v

    def scaled(self, factor: float) -> "FiniteProfile":
        return self.model_copy(
            update={"coefficients": [(j, factor * c) for j, c in self.coefficients]}
        )


class MA1Profile(_ProfileBase):
    kind: Literal["ma1"] = "ma1"
    theta: float


class AR1Profile(_ProfileBase):
    kind: Literal["ar1"] = "ar1"
    phi: float

    @field_validator("phi")
    @classmethod
    def _stationary(cls, v: float) -> float:
        if not abs(v) < 1.0:
            raise ValueError(f"ar1 requires |phi| < 1, got {v}")
        return v


class FarimaProfile(_ProfileBase):
    """FARIMA(0, d, 0) with one-sided causal coefficients."""

    kind: Literal["farima"] = "farima"
    d: float

    @field_validator("d")
    @classmethod
    def _negative_memory(cls, v: float) -> float:
        if not -1.0 < v < 0.0:
            raise ValueError(f"farima requires d in (-1, 0), got {v}")
        return v


CoefficientProfile = Annotated[
    Union[FiniteProfile, MA1Profile, AR1Profile, FarimaProfile],
    Field(discriminator="kind"),
]


def iid_profile() -> FiniteProfile:
    """The identity filter c_0 = 1."""
    return FiniteProfile(coefficients=[(0, 1.0)])


# ---------------------------------------------------------------------------
# Latent chains for random coefficient models
# ---------------------------------------------------------------------------


def _check_probability_vector(v: List[float], name: str) -> List[float]:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty vector")
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(arr.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValueError(f"{name} must sum to 1, sums to {arr.sum()!r}")
    return v


class IIDChain(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["iid"] = "iid"
    states: List[float]
    probabilities: List[float]

    @model_validator(mode="after")
    def _check(self) -> "IIDChain":
        _check_probability_vector(self.probabilities, "probabilities")
        if len(self.states) != len(self.probabilities):
            raise ValueError("states and probabilities differ in length")
        return self


class FiniteMarkovChain(BaseModel):
    """Markov chain on finitely many real states.

    Irreducibility is not required at construction (absorbing chains are
    legal to sample); it is checked wherever a unique stationary law is needed.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["finite_markov"] = "finite_markov"
    states: List[float]
    transition: List[List[float]]
    # None starts the chain from its stationary distribution.
    initial: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check(self) -> "FiniteMarkovChain":
        m = len(self.states)
        if m == 0:
            raise ValueError("finite_markov chain needs at least one state")
        if len(self.transition) != m or any(len(row) != m for row in self.transition):
            raise ValueError(f"transition matrix must be {m}x{m}")
        for i, row in enumerate(self.transition):
            _check_probability_vector(row, f"transition row {i}")
        if self.initial is not None:
            _check_probability_vector(self.initial, "initial")
            if len(self.initial) != m:
                raise ValueError("initial distribution has wrong length")
        return self

    def transition_matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)


class BoundedAR1Chain(BaseModel):
    """theta_i = phi * theta_{i-1} + xi_i with xi_i ~ Uniform[low, high]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["bounded_ar1"] = "bounded_ar1"
    phi: float
    low: float
    high: float

    @model_validator(mode="after")
    def _check(self) -> "BoundedAR1Chain":
        if not abs(self.phi) < 1.0:
            raise ValueError(f"bounded_ar1 requires |phi| < 1, got {self.phi}")
        if not self.low < self.high:
            raise ValueError("bounded_ar1 requires low < high")
        return self

    @property
    def state_bound(self) -> float:
        """sup |theta| over the stationary support."""
        return max(abs(self.low), abs(self.high)) / (1.0 - abs(self.phi))


LatentChain = Annotated[
    Union[IIDChain, FiniteMarkovChain, BoundedAR1Chain],
    Field(discriminator="kind"),
]


class RandomCoefficientModel(BaseModel):
    """Latent chain over theta plus the map theta -> coefficient profile.

    ``coeff_family`` names the profile whose parameter is theta:
    ma1(theta), ar1(phi=theta) or farima(d=theta).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    chain: LatentChain
    coeff_family: Literal["ma1", "ar1", "farima"] = "ma1"
    truncation_lag: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def _check_states(self) -> "RandomCoefficientModel":
        if isinstance(self.chain, BoundedAR1Chain):
            if self.coeff_family == "farima":
                raise ValueError("bounded_ar1 chains support ma1 and ar1 coefficient maps only")
            if self.coeff_family == "ar1" and not self.chain.state_bound < 1.0:
                raise ValueError("ar1 coefficient map needs sup|theta| < 1 for bounded_ar1 chain")
        else:
            for theta in self.chain.states:
                self.coeff_map(theta)
        return self

    def coeff_map(self, theta: float) -> "CoefficientProfile":
        """Coefficient profile of a row with latent state theta."""
        lag = self.truncation_lag
        if self.coeff_family == "ma1":
            return MA1Profile(theta=theta, truncation_lag=lag)
        if self.coeff_family == "ar1":
            return AR1Profile(phi=theta, truncation_lag=lag)
        return FarimaProfile(d=theta, truncation_lag=lag)


# ---------------------------------------------------------------------------
# Limits and spectra
# ---------------------------------------------------------------------------


class LimitLaw(BaseModel):
    """Poisson limit with intensity x^{-alpha/2} * sigma2^{alpha/2}."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float
    sigma2: float = Field(1.0, gt=0)

    @field_validator("alpha")
    @classmethod
    def _alpha_in_range(cls, v: float) -> float:
        if not 0.0 < v < 4.0:
            raise ValueError(f"alpha must lie in (0, 4), got {v}")
        return v


class SpectralSample(BaseModel):
    """Per-replication spectral summary of XX^T (raw, uncentered)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    eigen_topk: np.ndarray
    diag_topk: np.ndarray
    offdiag_inf_norm: float
    cross_max: float
    trace: float

    @property
    def weyl_gap(self) -> float:
        """max_j |lambda_(j) - S_(j)| over the tracked order statistics."""
        return float(np.max(np.abs(self.eigen_topk - self.diag_topk)))


class ScaleEstimate(BaseModel):
    """A constant with its Monte Carlo standard error (zero when exact)."""

    value: float
    std_error: float = 0.0


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _rounded_p(kind: str, n: int, value: Callable[[], float]) -> int:
    try:
        p = value()
    except OverflowError:
        p = math.inf
    if not math.isfinite(p):
        raise ValueError(f"p_rule '{kind}' overflows at n={n}")
    return max(1, round(p))


class ExplicitPRule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["explicit"] = "explicit"
    values: List[PositiveInt]

    def p_for(self, n: int, index: int) -> int:
        return self.values[index]


class PowerPRule(BaseModel):
    """p = round(c * n^beta)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["power"] = "power"
    c: float = Field(1.0, gt=0)
    beta: float = Field(..., gt=0)

    def p_for(self, n: int, index: int) -> int:
        return _rounded_p(self.kind, n, lambda: self.c * n**self.beta)


_SLOWLY_VARYING = {
    "one": lambda n: 1.0,
    "log": lambda n: math.log(n),
    "loglog": lambda n: math.log(math.log(n)) if n > math.e else 1.0,
}


class RegVarPRule(BaseModel):
    """p = round(n^kappa * l(n)) with l one of the built-in slowly varying literals."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["regvar"] = "regvar"
    kappa: float = Field(..., ge=0)
    slowly_varying: Literal["one", "log", "loglog"] = "one"

    def p_for(self, n: int, index: int) -> int:
        return _rounded_p(self.kind, n, lambda: n**self.kappa * _SLOWLY_VARYING[self.slowly_varying](n))


class ExpGrowthPRule(BaseModel):
    """p = round(C * exp(c * n^kappa))."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["expgrowth"] = "expgrowth"
    C: float = Field(..., gt=0)
    c: float = Field(..., gt=0)
    kappa: float = Field(..., gt=0)

    def p_for(self, n: int, index: int) -> int:
        return _rounded_p(self.kind, n, lambda: self.C * math.exp(self.c * n**self.kappa))


PRule = Annotated[
    Union[ExplicitPRule, PowerPRule, RegVarPRule, ExpGrowthPRule],
    Field(discriminator="kind"),
]


class Centering(str, Enum):
    AUTO = "auto"
    OFF = "off"


def beta_upper_bound(alpha: float) -> float:
    """Largest admissible growth exponent for p ~ n^beta at tail index alpha."""
    if alpha <= 1.0:
        return math.inf
    if alpha < 2.0:
        return max((2.0 - alpha) / (alpha - 1.0), 0.5)
    if alpha < 3.0:
        return max(1.0 / 3.0, (4.0 - alpha) / (4.0 * (alpha - 1.0)))
    return (4.0 - alpha) / (3.0 * alpha - 4.0)


class ExperimentConfig(BaseModel):
    """A fully seeded experiment description."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tail: TailModel
    profile: Optional[CoefficientProfile] = None
    random_coeff: Optional[RandomCoefficientModel] = None
    n_schedule: List[PositiveInt] = Field(..., min_length=1)
    p_rule: PRule
    k: PositiveInt = 1
    replications: PositiveInt = 1
    master_seed: int = Field(..., ge=0, lt=2**64)
    centering: Centering = Centering.AUTO

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.profile is not None and self.random_coeff is not None:
            raise ValueError("give either profile or random_coeff, not both")
        if isinstance(self.p_rule, ExplicitPRule) and len(self.p_rule.values) != len(self.n_schedule):
            raise ValueError("explicit p_rule needs one p per entry of n_schedule")
        for n, p in self.schedule():
            if self.k > p:
                raise ValueError(f"k={self.k} exceeds p={p} at n={n}")
        return self

    def schedule(self) -> List[Tuple[int, int]]:
        """(n, p) pairs in schedule order."""
        return [(n, self.p_rule.p_for(n, i)) for i, n in enumerate(self.n_schedule)]

    def effective_profile(self) -> "CoefficientProfile":
        return self.profile if self.profile is not None else iid_profile()

    def regime_warnings(self) -> List[str]:
        """Growth-regime violations; reported, never fatal."""
        warnings: List[str] = []
        alpha = self.tail.alpha
        is_iid = self.random_coeff is None and self.effective_profile() == iid_profile()
        rule = self.p_rule
        if isinstance(rule, PowerPRule):
            bound = beta_upper_bound(alpha)
            if rule.beta >= bound:
                warnings.append(
                    f"beta={rule.beta} violates beta < {bound:.6g} required at alpha={alpha}"
                )
        elif isinstance(rule, (RegVarPRule, ExpGrowthPRule)):
            if not (is_iid and alpha < 2.0):
                warnings.append(
                    f"p_rule '{rule.kind}' is covered only for iid entries with alpha < 2"
                )
            if isinstance(rule, RegVarPRule) and rule.kappa == 0 and rule.slowly_varying == "one":
                warnings.append("regvar with kappa=0 needs a slowly varying factor tending to infinity")
        return warnings


class RunManifest(BaseModel):
    """Provenance record written before and finalized after a run."""

    config_digest: str
    tool_version: str
    master_seed: int
    started_at: datetime
    finished_at: Optional[datetime] = None
    status: Literal["running", "succeeded", "failed"] = "running"
    outputs: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# CLI requests
# ---------------------------------------------------------------------------


class CompareRequest(BaseModel):
    """Theoretical law and evaluation grid for ``compare``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    law: LimitLaw
    ks: List[PositiveInt] = Field(default_factory=lambda: [1])
    thresholds: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    plot_points: PositiveInt = 200

    @field_validator("thresholds")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(x <= 0 for x in v):
            raise ValueError("thresholds must be positive")
        return v


class LDCheckRow(BaseModel):
    """One grid point: give x_n directly, or a target denominator to tune it."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n: PositiveInt
    x_n: Optional[float] = Field(None, gt=0)
    target: Optional[float] = Field(None, gt=0, lt=1)
    y_n: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _one_of(self) -> "LDCheckRow":
        if (self.x_n is None) == (self.target is None):
            raise ValueError("give exactly one of x_n or target")
        return self


class LDCheckRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tail: TailModel
    rows: List[LDCheckRow] = Field(..., min_length=1)
    replications: PositiveInt = 100_000
    master_seed: int = Field(0, ge=0, lt=2**64)


class LimitsRequest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    law: LimitLaw
    x_grid: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    k_max: PositiveInt = 3
    profiles: List[CoefficientProfile] = Field(default_factory=list)
    random_coeff: Optional[RandomCoefficientModel] = None
    master_seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("x_grid")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(x <= 0 for x in v):
            raise ValueError("x_grid must be positive")
        return v


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class SummabilityReport(BaseModel):
    """Outcome of the delta-summability check on a coefficient profile."""

    passed: bool
    delta: float
    tail_estimate: float


class TruncationReport(BaseModel):
    """Truncation lag actually used and the bound on the dropped mass."""

    lag: int
    tail_bound: float
    tolerance: float
    tolerance_met: bool


class LargeDeviationEstimate(BaseModel):
    """P(sum Y > b_n x_n, max Y > b_n y_n) against n P(Y > b_n max(x_n, y_n))."""

    n: int
    x_n: float
    y_n: float
    b_n: float
    numerator: float
    denominator: float
    ratio: float
    std_error: float
    hits: int
    replications: int


class JointTailEstimate(BaseModel):
    """p P(sum Z^2 > a_np^2 x, max Z^2 > a_np^2 y) against max(x, y)^{-alpha/2}."""

    x: float
    y: float
    estimate: float
    std_error: float
    limit: float
    hits: int
    replications: int


class PairPointReport(BaseModel):
    """Row-wise (sum, max) of squared noise at the largest row sum."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    ks_statistic: float
    median_ratio: float
    scaled_max_sums: np.ndarray
    ratios: np.ndarray


# ---------------------------------------------------------------------------
# Result table layout
# ---------------------------------------------------------------------------

RESULT_LEADING_COLUMNS = ["n", "p", "replication", "a_np", "mu"]
RESULT_TRAILING_COLUMNS = ["offdiag_scaled", "cross_max_scaled", "trace_scaled", "weyl_gap_scaled"]


def result_columns(k: int) -> List[str]:
    """Fixed column order of results.csv for k tracked eigenvalues."""
    return (
        RESULT_LEADING_COLUMNS
        + [f"eig_{j}" for j in range(1, k + 1)]
        + [f"diag_{j}" for j in range(1, k + 1)]
        + RESULT_TRAILING_COLUMNS
    )
