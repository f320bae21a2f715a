"""Run configuration: a single YAML or JSON file validated before any compute."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import L_INFINITY, AssumptionSet, Lipschitz, Metric, PartialOrder, Schema, load_distance_matrix

COMMANDS = ("bounds", "sweep", "multi", "coverage", "policy-study", "rate-study")

LValue = Union[float, Literal["inf"]]


def _L(value) -> float:
    return L_INFINITY if value == "inf" or (isinstance(value, float) and math.isinf(value)) else float(value)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchemaConfig(Strict):
    covariates: List[str]
    behavior_prob: str = "pb"
    eval_prob: str = "pe"
    action: str = "a"
    outcome: str = "y"
    mu_hat: Optional[str] = None

    def to_schema(self) -> Schema:
        return Schema.from_mapping(self.model_dump())


class DatasetConfig(Strict):
    path: str
    schema_: SchemaConfig = Field(alias="schema")
    # fit mu-hat from the data when the file has no fitted-value column
    fitter: Optional[Literal["ridge", "logistic", "knn"]] = None


class MetricConfig(Strict):
    kind: Literal["euclidean", "weighted-euclidean", "hamming", "precomputed"] = "euclidean"
    weights: Optional[List[float]] = None
    path: Optional[str] = None

    def build(self, base: Path) -> Metric:
        if self.kind == "weighted-euclidean":
            if self.weights is None:
                raise ValueError("weighted-euclidean metric needs 'weights'")
            return Metric.weighted(self.weights)
        if self.kind == "precomputed":
            if self.path is None:
                raise ValueError("precomputed metric needs 'path'")
            return load_distance_matrix(base / self.path)
        return Metric.hamming() if self.kind == "hamming" else Metric.euclidean()


class OrderConfig(Strict):
    kind: Literal["coordinatewise", "single-coordinate", "explicit"] = "coordinatewise"
    index: int = 0
    pairs: List[Tuple[int, int]] = []

    def build(self) -> PartialOrder:
        return PartialOrder(self.kind, self.index, tuple(self.pairs))


class AssumptionConfig(Strict):
    bounds: Optional[Tuple[float, float]] = None
    L: Optional[LValue] = None
    L_grid: Optional[List[LValue]] = None
    metric: MetricConfig = MetricConfig()
    order: Optional[OrderConfig] = None

    def build(self, base: Path, L: Optional[float] = None) -> AssumptionSet:
        L = self.L if L is None else L
        lip = Lipschitz(_L(L), self.metric.build(base)) if L is not None else None
        return AssumptionSet(self.bounds, lip, self.order.build() if self.order else None)

    def grid(self) -> list[float]:
        return sorted(_L(v) for v in (self.L_grid or []))


class EstimatorConfig(Strict):
    kind: Literal["ipw", "self-normalized"] = "self-normalized"
    mode: Literal["exact", "conservative"] = "exact"
    clamp_mu: bool = False
    enforce_feasibility: bool = True


class CoverageConfig(Strict):
    source: Literal["two-class", "yeast-like", "csv"] = "two-class"
    L_true: float = 10.0
    p: int = 2
    # csv source: a labelled table with feature columns and an integer label column
    path: Optional[str] = None
    features: Optional[List[str]] = None
    label: str = "label"
    n_grid: List[int] = [1000, 2000]
    L_grid: List[LValue] = [1.0, 2.0, 4.0, "inf"]
    replications: int = Field(200, ge=1)
    eps: float = Field(0.01, ge=0)
    fitter: Literal["ridge", "logistic", "knn"] = "logistic"
    threshold: float = 0.05
    bounds: Tuple[float, float] = (0.0, 1.0)

    @model_validator(mode="after")
    def _csv_fields(self):
        if self.source == "csv" and (self.path is None or not self.features):
            raise ValueError("csv source needs 'path' and 'features'")
        return self


class PolicyStudyConfig(Strict):
    T_grid: List[float] = [0.25, 0.3, 0.35, 0.4, 0.5]
    L_grid: List[LValue] = [0.5, 1.0, 2.0, 4.0]
    n: int = Field(4000, ge=10)
    behavior_T: float = 0.5
    n_articles: int = 10
    base: float = -4.5
    user_effect: float = 1.5
    article_effect: float = 1.5
    interaction: float = 0.5
    model_seed: int = 0
    fitter: Literal["ridge", "logistic", "knn"] = "logistic"


class MeanConfig(Strict):
    kind: Literal["linear", "sinusoid", "piecewise"] = "linear"
    coeffs: List[float] = [0.5]
    intercept: float = 0.2
    amp: float = 0.0
    freq: float = 1.0
    axis: int = 0
    knots: List[float] = []
    values: List[float] = []


class PolicyConfig(Strict):
    kind: Literal["constant", "logistic"] = "constant"
    value: float = 0.5
    slope: float = 0.0
    axis: int = 0


class RateStudyConfig(Strict):
    p: int = 1
    mu: MeanConfig = MeanConfig()
    noise_sd: float = 0.3
    outcome: Literal["gaussian", "bernoulli"] = "gaussian"
    eval_policy: PolicyConfig = PolicyConfig(value=1.0)
    behavior_policy: PolicyConfig = PolicyConfig(value=0.5)
    carve_axis: int = 0
    carve_threshold: float = 0.7
    L: Optional[float] = 1.0
    n_grid: List[int] = [250, 1000, 4000]
    replications: int = Field(200, ge=1)
    fitter: Literal["ridge", "logistic", "knn"] = "ridge"
    bounds: Optional[Tuple[float, float]] = None


class RunConfig(Strict):
    command: Literal["bounds", "sweep", "multi", "coverage", "policy-study", "rate-study"]
    seed: int = 0
    out: str = "out"
    dataset: Optional[DatasetConfig] = None
    datasets: Optional[List[DatasetConfig]] = None
    assumptions: Optional[AssumptionConfig] = None
    per_action_assumptions: Optional[List[AssumptionConfig]] = None
    estimator: EstimatorConfig = EstimatorConfig()
    coverage: Optional[CoverageConfig] = None
    policy_study: Optional[PolicyStudyConfig] = None
    rate_study: Optional[RateStudyConfig] = None

    @field_validator("out")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("output directory must be nonempty")
        return v

    @model_validator(mode="after")
    def _required_blocks(self):
        c = self.command
        if c in ("bounds", "sweep") and (self.dataset is None or self.assumptions is None):
            raise ValueError(f"command {c!r} needs 'dataset' and 'assumptions'")
        if c == "sweep" and not (self.assumptions and self.assumptions.L_grid):
            raise ValueError("command 'sweep' needs 'assumptions.L_grid'")
        if c == "multi":
            if not self.datasets:
                raise ValueError("command 'multi' needs a 'datasets' list")
            if self.assumptions is None and self.per_action_assumptions is None:
                raise ValueError("command 'multi' needs 'assumptions' or 'per_action_assumptions'")
            if self.per_action_assumptions is not None and len(self.per_action_assumptions) != len(self.datasets):
                raise ValueError("'per_action_assumptions' needs one entry per dataset")
        return self


class ConfigError(ValueError):
    pass


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def parse_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def load_config(path) -> tuple[RunConfig, dict]:
    """Read and validate a YAML or JSON config; returns the model and the raw mapping."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping at the top level")
    return parse_config(raw), raw
