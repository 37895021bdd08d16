"""
Pydantic models for dictionaries, records, configs and run artifacts
"""
import math
from datetime import date
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class CodeSystem(str, Enum):
    """Medical classification systems"""
    ICD = "ICD"
    ATC = "ATC"
    OPS = "OPS"


# Level of the root nodes; the OPS chapter level is not represented
ROOT_LEVEL = {CodeSystem.ICD: 1, CodeSystem.ATC: 1, CodeSystem.OPS: 2}
MAX_LEVEL = 5
OPS_CHAPTERS = ("5", "6", "8")

# Real German dictionary sizes per (system, level)
REFERENCE_LEVEL_COUNTS = {
    CodeSystem.ATC: {1: 14, 2: 99, 3: 275, 4: 1023, 5: 6787},
    CodeSystem.ICD: {1: 22, 2: 241, 3: 1697, 4: 8876, 5: 5514},
    CodeSystem.OPS: {2: 43, 3: 137, 4: 953, 5: 7681},
}

OUTCOMES = ("y1", "y2", "y3")


# Taxonomy
class CodeNode(BaseModel):
    """One node of a classification tree"""
    model_config = ConfigDict(frozen=True)

    code: str = Field(min_length=1)
    system: CodeSystem
    level: int = Field(ge=1, le=MAX_LEVEL)
    parent: Optional[str] = None
    name: Optional[str] = None

    @model_validator(mode="after")
    def check_level(self) -> "CodeNode":
        root = ROOT_LEVEL[self.system]
        if self.level < root:
            raise ValueError(f"{self.system.value} levels start at {root}, got {self.level}")
        if self.level == root and self.parent is not None:
            raise ValueError(f"root-level node {self.code} must not have a parent")
        if self.level > root and self.parent is None:
            raise ValueError(f"level-{self.level} node {self.code} needs a parent")
        return self

    @property
    def key(self) -> Tuple[CodeSystem, str]:
        return (self.system, self.code)


# Cohort
class PersonRecord(BaseModel):
    """One insured person"""
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    categorical: Dict[str, Optional[str]] = Field(default_factory=dict)
    region: Optional[str] = None
    event_date: Optional[date] = None
    incidence: Optional[float] = None
    codes: List[Tuple[CodeSystem, str]] = Field(default_factory=list)
    y1: Literal[0, 1] = 0
    y2: Literal[0, 1] = 0
    y3: Literal[0, 1] = 0

    @field_validator("incidence")
    @classmethod
    def check_incidence(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and (not math.isfinite(value) or value < 0):
            raise ValueError(f"incidence must be finite and >= 0, got {value}")
        return value

    @model_validator(mode="after")
    def check_nesting(self) -> "PersonRecord":
        if self.y3 and not self.y2:
            raise ValueError("outcome nesting violated: y3=1 requires y2=1")
        if self.y2 and not self.y1:
            raise ValueError("outcome nesting violated: y2=1 requires y1=1")
        return self

    def outcome(self, name: str) -> int:
        return getattr(self, name)


# Features
class FeatureKind(str, Enum):
    CODE_DUMMY = "code_dummy"
    CATEGORICAL_DUMMY = "categorical_dummy"
    CONTINUOUS = "continuous"


class FeatureColumn(BaseModel):
    """Metadata of one design column"""
    model_config = ConfigDict(frozen=True)

    name: str
    kind: FeatureKind
    system: Optional[CodeSystem] = None
    code: Optional[str] = None
    level: Optional[int] = None
    feature: Optional[str] = None
    category: Optional[str] = None
    penalty_factor: float = Field(ge=0)

    @model_validator(mode="after")
    def check_kind(self) -> "FeatureColumn":
        if self.kind == FeatureKind.CODE_DUMMY and (self.system is None or self.level is None):
            raise ValueError(f"code column {self.name} needs system and level")
        if self.kind == FeatureKind.CATEGORICAL_DUMMY and self.penalty_factor != 1:
            raise ValueError(f"categorical column {self.name} must have penalty factor 1")
        if self.kind == FeatureKind.CONTINUOUS and self.penalty_factor != 0:
            raise ValueError(f"continuous column {self.name} must be unpenalized")
        return self


class FeatureConfig(BaseModel):
    """Declarative description of which features enter the design"""
    name: str = "full"
    categorical: Dict[str, Optional[str]] = Field(
        default_factory=dict,
        description="Categorical feature -> reference category (null: most frequent)",
    )
    systems: List[CodeSystem] = Field(default_factory=lambda: list(CodeSystem))
    min_level: int = Field(1, ge=1, le=MAX_LEVEL)
    max_level: int = Field(MAX_LEVEL, ge=1, le=MAX_LEVEL)
    groups: Optional[List[Tuple[CodeSystem, str]]] = Field(
        None, description="Explicit code list; only these code columns are built"
    )
    defaults: Dict[str, str] = Field(
        default_factory=dict,
        description="Categorical feature -> value used when a record lacks it",
    )
    include_incidence: bool = True
    penalty_mode: Literal["level", "uniform"] = "level"
    unknown_codes: Literal["error", "skip"] = "error"

    @model_validator(mode="after")
    def check_levels(self) -> "FeatureConfig":
        if self.min_level > self.max_level:
            raise ValueError("min_level must not exceed max_level")
        return self


# Solver
class SolverOptions(BaseModel):
    """Convergence controls of the coordinate-descent solver"""
    tol: float = Field(1e-7, gt=0, description="Relative objective change")
    max_iter: int = Field(10_000, ge=1, description="Coordinate sweeps per lambda")
    kkt_tol: float = Field(1e-6, gt=0)
    inner_tol: float = Field(1e-16, gt=0, description="Max weighted squared step in a sweep")
    weight_floor: float = Field(1e-5, gt=0)
    zero_snap: float = Field(1e-12, ge=0)
    separation_bound: float = Field(30.0, gt=0, description="Max |coef| of unpenalized terms")
    debug: bool = False


class LassoFit(BaseModel):
    """Solution of one penalized logistic problem"""
    intercept: float
    coefficients: Dict[int, float] = Field(default_factory=dict)
    n_features: int = Field(ge=0)
    lam: float = Field(ge=0)
    n_nonzero: int = 0
    converged: bool = True
    iterations: int = 0
    outer_iterations: int = 0
    objective: float = float("nan")
    max_kkt: float = float("nan")

    @model_validator(mode="after")
    def check_nonzero(self) -> "LassoFit":
        if self.n_nonzero != len(self.coefficients):
            raise ValueError("n_nonzero does not match stored coefficients")
        if any(j < 0 or j >= self.n_features for j in self.coefficients):
            raise ValueError("coefficient index out of range")
        return self

    def coef_vector(self) -> np.ndarray:
        beta = np.zeros(self.n_features)
        if self.coefficients:
            idx = np.fromiter(self.coefficients.keys(), dtype=np.int64)
            beta[idx] = np.fromiter(self.coefficients.values(), dtype=float)
        return beta


class LambdaPath(BaseModel):
    """Fits along a strictly decreasing lambda sequence"""
    lambdas: List[float]
    fits: List[LassoFit]

    @model_validator(mode="after")
    def check_alignment(self) -> "LambdaPath":
        if len(self.lambdas) != len(self.fits):
            raise ValueError("lambdas and fits differ in length")
        if any(b >= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambdas must be strictly decreasing")
        if any(f.lam != lam for f, lam in zip(self.fits, self.lambdas)):
            raise ValueError("fit lambda does not match its path entry")
        return self


# Evaluation
class EvaluationReport(BaseModel):
    """Discrimination and likelihood measures of one prediction vector"""
    auc: float = Field(ge=0, le=1)
    lambda_woe: float
    log_lik: float = Field(le=0)
    n: int = Field(ge=1)
    n_pos: int = Field(ge=0)
    prior: float = Field(gt=0, lt=1)
    units: Literal["nats", "bits"] = "nats"
    clamp: float = 1e-12
    offset: float = Field(0.0, description="Logit shift applied by prevalence adjustment")

    @model_validator(mode="after")
    def check_counts(self) -> "EvaluationReport":
        if self.n_pos > self.n:
            raise ValueError("n_pos exceeds n")
        return self


# Aggregation
class CodeEffect(BaseModel):
    """Own and hierarchy-summed effect of one code"""
    system: CodeSystem
    code: str
    level: int
    own_coef: float
    total_logor: float
    total_or: float
    prevalence: int = 0


class GroupSummary(BaseModel):
    """Prevalence-weighted effect of a level-2 group"""
    system: CodeSystem
    group: str
    group_logor: float
    group_size: int
    importance: float = 0.0
    rank: int = 0


# Risk index
class SplineProfile(BaseModel):
    """Per-gender age profile on the logit scale"""
    gender: str
    knots: List[float]
    coefficients: List[float]
    intercept: float
    index_coef: float = 0.0
    index_mean: float = 0.0
    covariate_coefs: Dict[str, float] = Field(default_factory=dict)
    conditional: bool = True

    @field_validator("knots")
    @classmethod
    def check_knots(cls, knots: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("knots must be strictly ascending")
        return knots


# Synthetic data
class CategoricalSpec(BaseModel):
    categories: List[str] = Field(min_length=1)
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_weights(self) -> "CategoricalSpec":
        if self.weights is not None:
            if len(self.weights) != len(self.categories):
                raise ValueError("weights and categories differ in length")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ValueError("weights must be non-negative with positive sum")
        return self


def _default_categoricals() -> Dict[str, CategoricalSpec]:
    return {
        "nationality": CategoricalSpec(categories=["DE", "TR", "other"], weights=[0.8, 0.05, 0.15]),
        "nursing_home": CategoricalSpec(categories=["0", "1"], weights=[0.98, 0.02]),
        "status": CategoricalSpec(
            categories=["employee", "pensioner", "child", "unemployed"],
            weights=[0.5, 0.25, 0.15, 0.1],
        ),
    }


class GeneratorSpec(BaseModel):
    """Shape and planted truth of a synthetic cohort"""
    shapes: Dict[CodeSystem, List[int]] = Field(
        default_factory=lambda: {CodeSystem.ICD: [2, 2, 2, 2, 2]},
        description="Branching per level from the root level down",
    )
    n_persons: int = Field(10_000, ge=1)
    leaf_prevalence: float = Field(0.02, gt=0, lt=1)
    prevalence_spread: float = Field(0.5, ge=0, description="Log-normal sd of per-leaf prevalence")
    age_correlation: float = Field(0.0, description="Log prevalence change across the age range")
    n_age_groups: int = Field(18, ge=2)
    age_min: float = 0.0
    age_max: float = 90.0
    categorical: Dict[str, CategoricalSpec] = Field(default_factory=_default_categoricals)
    planted: Dict[str, float] = Field(default_factory=dict, description="Column name -> true coefficient")
    intercept: float = Field(default_factory=lambda: math.log(0.01 / 0.99))
    age_effect: float = Field(0.0, description="True logit change per year of age")
    n_regions: int = Field(4, ge=1)
    n_days: int = Field(120, ge=1)
    start_date: date = date(2020, 3, 1)
    shard_size: int = Field(5_000, ge=1)
    seed: int = 2020

    @model_validator(mode="after")
    def check_shapes(self) -> "GeneratorSpec":
        for system, branching in self.shapes.items():
            depth = MAX_LEVEL - ROOT_LEVEL[system] + 1
            if len(branching) != depth:
                raise ValueError(f"{system.value} shape needs {depth} levels, got {len(branching)}")
            if any(b < 1 for b in branching):
                raise ValueError("branching must be >= 1 at each level")
        return self

    @classmethod
    def full_scale(cls, **overrides) -> "GeneratorSpec":
        """Rare-event preset: a million persons at 0.04% outcome prevalence"""
        values = {"intercept": math.log(0.000393 / (1 - 0.000393)), "n_persons": 1_000_000}
        values.update(overrides)
        return cls(**values)


# Artifacts
class ModelArtifact(BaseModel):
    """Frozen full-data model: enough to score a new cohort"""
    outcome: str
    config: FeatureConfig
    columns: List[FeatureColumn]
    fit: LassoFit
    selected_index: Optional[int] = None


class RunManifest(BaseModel):
    """Everything needed to reproduce one command run"""
    command: str
    argv: List[str] = Field(default_factory=list)
    inputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    config_digest: Optional[str] = None
    seed: Optional[int] = None
    selected_lambda: Optional[float] = None
    timings: Dict[str, float] = Field(default_factory=dict)
    version: str
