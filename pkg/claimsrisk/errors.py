"""
Exception hierarchy for the claims risk pipeline
"""
from typing import Optional


class ClaimsRiskError(Exception):
    """Base class for all domain errors"""


class TaxonomyError(ClaimsRiskError):
    """Invalid taxonomy file or node"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownCodeError(ClaimsRiskError, KeyError):
    """Lookup of a (system, code) pair that is not in the taxonomy"""

    def __init__(self, system: str, code: str):
        self.system = system
        self.code = code
        super().__init__(f"unknown {system} code '{code}'")

    def __str__(self) -> str:
        return self.args[0]


class CohortError(ClaimsRiskError):
    """Invalid cohort record, file or imputation input"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class FeatureError(ClaimsRiskError):
    """Invalid feature config or design request"""


class SolverError(ClaimsRiskError):
    """Invalid solver input"""


class SeparationError(SolverError):
    """Unpenalized part of the model is (quasi-)separable"""


class PathError(SolverError):
    """Failure of one fit along a lambda path"""

    def __init__(self, position: int, lam: float, cause: Exception):
        self.position = position
        self.lam = lam
        self.cause = cause
        super().__init__(f"path position {position} (lambda={lam:.6g}): {cause}")


class CvError(ClaimsRiskError):
    """Failure inside cross-validation"""

    def __init__(self, fold: int, message: str, lam: Optional[float] = None):
        self.fold = fold
        self.lam = lam
        where = f"fold {fold}" + (f", lambda={lam:.6g}" if lam is not None else "")
        super().__init__(f"{where}: {message}")


class MetricError(ClaimsRiskError, ValueError):
    """Metric undefined for the given input"""


class GeneratorError(ClaimsRiskError):
    """Invalid synthetic generator specification"""


class ArtifactError(ClaimsRiskError):
    """Missing or inconsistent run artifact"""
