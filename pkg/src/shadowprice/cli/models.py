"""Pydantic models for experiment files and result summaries."""

import configparser
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..errors import ConfigValidationError

SCHEMA_VERSION = "1"
SECTIONS = ("experiment", "model", "grid", "monte_carlo", "cps", "bessel", "cfs", "output")


class ExperimentKind(str, Enum):
    """Enumeration of experiment kinds."""
    SIMULATE = "simulate"
    DIVERSITY = "diversity"
    CONDITIONED = "conditioned"
    CPS = "cps"
    BESSEL = "bessel"
    CFS_PROBE = "cfs-probe"


class ModelType(str, Enum):
    """Enumeration of market models."""
    FERNHOLZ = "fernholz"
    ARCTAN = "arctan"
    CONDITIONED = "conditioned"
    CUSTOM = "custom-constant-vol"


class CpsMode(str, Enum):
    TREE = "tree"
    ENSEMBLE = "ensemble"


class Crossing(str, Enum):
    INTERPOLATED = "interpolated"
    GRID = "grid"


def _split_numbers(value: Any) -> Any:
    if isinstance(value, str):
        return [float(v) for v in value.replace(",", " ").split()]
    return value


def _split_matrix(value: Any) -> Any:
    if isinstance(value, str):
        return [_split_numbers(row) for row in value.split(";") if row.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentBlock(_Section):
    """[experiment] section."""
    kind: ExperimentKind = Field(..., description="Experiment to run")
    name: str = Field(default="experiment", description="Label copied into the summary")


class ModelBlock(_Section):
    """[model] section. Which keys are needed depends on ``type``."""
    type: ModelType = Field(..., description="Market model")
    s0: Optional[List[float]] = Field(None, description="Initial prices; defaults to all ones")
    g: Optional[List[float]] = Field(None, description="Fernholz drift weights g_i > 0")
    delta: float = Field(default=0.3, description="Diversity parameter of O(delta)")
    M: Optional[float] = Field(None, description="Fernholz drift constant; defaults to the volatility upper bound")
    sigma: Optional[List[List[float]]] = Field(None, description="Constant volatility matrix, rows separated by ';'")
    drift: Optional[List[float]] = Field(None, description="Constant log drift for custom-constant-vol")
    gamma_cap: float = Field(default=1e3, gt=0, description="Cap on the singular Fernholz drift")
    delta_guard: float = Field(default=1e-6, gt=0, description="Reflection margin inside O(delta)")
    max_attempts: int = Field(default=10_000, ge=1, description="Rejection budget of the conditioned sampler")

    split_lists = field_validator("s0", "g", "drift", mode="before")(_split_numbers)
    split_matrix = field_validator("sigma", mode="before")(_split_matrix)


class GridBlock(_Section):
    """[grid] section: uniform grid with N steps on [0, T]."""
    T: float = Field(..., gt=0, description="Horizon")
    N: int = Field(..., ge=1, description="Number of steps")


class MonteCarloBlock(_Section):
    """[monte_carlo] section."""
    paths: int = Field(default=1000, ge=1, description="Number of simulated paths")
    seed: Optional[int] = Field(None, ge=0, lt=2**64, description="Root seed; the CLI --seed overrides it")


class CpsBlock(_Section):
    """[cps] section."""
    eta: float = Field(default=0.01, gt=0, description="Ratio tolerance of the price system")
    mode: CpsMode = Field(default=CpsMode.TREE, description="Certify a scenario tree or a path ensemble")
    depth: int = Field(default=3, ge=0, description="Tree depth")
    branching: int = Field(default=8, ge=1, description="Children drawn per node")
    max_branching: Optional[int] = Field(None, ge=1, description="Cap on children after top-ups")
    crossing: Crossing = Field(default=Crossing.INTERPOLATED, description="Exit detection rule")
    retirement_mass_floor: float = Field(default=0.5, gt=0, lt=1, description="Minimum tilted mass on retiring children")
    budget_n: int = Field(default=1, ge=1, description="Second-moment budget exponent")
    probe_samples: int = Field(default=0, ge=0, description="Root increment-support probe size; 0 disables it")


class BesselBlock(_Section):
    """[bessel] section: driftless martingale X = sigma W and its BESQ comparison."""
    sigma: Optional[List[List[float]]] = Field(None, description="Square volatility matrix; defaults to the 2x2 identity")
    delta_B: Optional[float] = Field(None, ge=0, description="BESQ dimension; defaults to dC/c")
    strict: bool = Field(default=True, description="Reject delta_B below dC/c")
    eps_levels: List[float] = Field(default_factory=lambda: [1.0], description="Small-ball radii")
    tolerance: Optional[float] = Field(None, gt=0, description="Domination tolerance; defaults to 1e-6 + 10 sqrt(dt)")

    split_matrix = field_validator("sigma", mode="before")(_split_matrix)
    split_lists = field_validator("eps_levels", mode="before")(_split_numbers)

    @field_validator("eps_levels")
    @classmethod
    def positive_levels(cls, value: List[float]) -> List[float]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("eps_levels must be a nonempty list of positive radii")
        return value


class CfsBlock(_Section):
    """[cfs] section."""
    t_index: Optional[int] = Field(None, ge=0, description="Conditioning grid index; defaults to N // 2")
    eta_tube: float = Field(default=0.1, gt=0, description="Tube radius around the target")
    endpoints: Optional[List[List[float]]] = Field(None, description="Ramp endpoints at T; unset freezes the path")

    split_matrix = field_validator("endpoints", mode="before")(_split_matrix)


class OutputBlock(_Section):
    """[output] section."""
    directory: Optional[str] = Field(None, description="Artifact directory; the CLI --out overrides it")
    formats: List[str] = Field(default_factory=lambda: ["csv", "json", "txt"], description="Artifacts to write")
    csv_paths: int = Field(default=10, ge=0, description="Paths written to results.csv")

    @field_validator("formats", mode="before")
    @classmethod
    def split_formats(cls, value: Any) -> Any:
        if isinstance(value, str):
            return value.replace(",", " ").split()
        return value

    @field_validator("formats")
    @classmethod
    def known_formats(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - {"csv", "json", "txt"})
        if unknown:
            raise ValueError(f"unknown formats {unknown}; use csv, json, txt")
        return value


class ExperimentConfig(BaseModel):
    """A complete experiment file."""
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentBlock
    model: Optional[ModelBlock] = None
    grid: GridBlock
    monte_carlo: MonteCarloBlock = Field(default_factory=MonteCarloBlock)
    cps: CpsBlock = Field(default_factory=CpsBlock)
    bessel: BesselBlock = Field(default_factory=BesselBlock)
    cfs: CfsBlock = Field(default_factory=CfsBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @property
    def kind(self) -> ExperimentKind:
        return self.experiment.kind

    @classmethod
    def from_string(cls, text: str) -> "ExperimentConfig":
        """Parse INI text; unknown sections or keys and bad values raise ConfigValidationError."""
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigValidationError([f"unreadable experiment file: {exc}"]) from exc
        unknown = [s for s in parser.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigValidationError([f"unknown section [{s}]" for s in unknown])
        data = {section: dict(parser[section]) for section in parser.sections()}
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigValidationError(_violations(exc)) from exc

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigValidationError([f"cannot read {path}: {exc.strerror}"]) from exc
        return cls.from_string(text)


def _violations(exc: ValidationError) -> List[str]:
    found = []
    for error in exc.errors():
        where = ".".join(str(part) for part in error["loc"])
        found.append(f"{where}: {error['msg']}")
    return found


# Summary Models
class BaseSummary(BaseModel):
    """Keys shared by every summary.json."""
    schema_version: str = Field(default=SCHEMA_VERSION, description="Summary schema version")
    kind: ExperimentKind = Field(..., description="Experiment kind")
    name: str = Field(..., description="Experiment label")
    seed: int = Field(..., description="Root seed of the run")
    model: Optional[str] = Field(None, description="Market model type")
    horizon: float = Field(..., description="Grid horizon T")
    steps: int = Field(..., description="Grid steps N")
    n_paths: int = Field(..., description="Monte Carlo paths")
    notes: List[str] = Field(default_factory=list, description="Caveats attached to the estimates")


class SimulateSummary(BaseSummary):
    terminal_mean: List[float] = Field(..., description="Mean of S_i(T) per asset")
    max_weight_sup: float = Field(..., description="Largest mu_(1) over all paths and grid points")


class DiversityResult(BaseSummary):
    diversity: Dict[str, Any] = Field(..., description="Ensemble diversity summary")
    relative_performance: Dict[str, Any] = Field(..., description="Equal-weight against market portfolio")


class ConditionedSummary(BaseSummary):
    acceptance: Dict[str, Any] = Field(..., description="Acceptance rate of the rejection sampler")
    diversity: Dict[str, Any] = Field(..., description="Diversity summary of the accepted paths")


class CpsSummary(BaseSummary):
    certificate: Dict[str, Any] = Field(..., description="Certificate summary")
    tree: Optional[Dict[str, Any]] = Field(None, description="Tree size and tilt statistics (tree mode)")
    probe: Optional[Dict[str, Any]] = Field(None, description="Root increment-support probe")


class BesselSummary(BaseSummary):
    comparison: Dict[str, Any] = Field(..., description="Pooled coupled BESQ comparison")
    support: List[Dict[str, Any]] = Field(..., description="Small-ball probabilities per eps level")
    besq_marginals: List[Dict[str, Any]] = Field(..., description="E[Z_t] against delta_B * t")


class CfsSummary(BaseSummary):
    t_index: int = Field(..., description="Conditioning grid index")
    probes: List[Dict[str, Any]] = Field(..., description="Tube-hitting estimates per target")


SUMMARY_MODELS = {
    ExperimentKind.SIMULATE: SimulateSummary,
    ExperimentKind.DIVERSITY: DiversityResult,
    ExperimentKind.CONDITIONED: ConditionedSummary,
    ExperimentKind.CPS: CpsSummary,
    ExperimentKind.BESSEL: BesselSummary,
    ExperimentKind.CFS_PROBE: CfsSummary,
}
