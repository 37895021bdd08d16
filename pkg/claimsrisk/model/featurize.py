"""
Hierarchical code expansion and sparse design-matrix assembly
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy import sparse

from claimsrisk.data.cohort import Cohort
from claimsrisk.data.models import (
    CodeSystem,
    FeatureColumn,
    FeatureConfig,
    FeatureKind,
)
from claimsrisk.data.taxonomy import Taxonomy
from claimsrisk.errors import FeatureError, UnknownCodeError

logger = logging.getLogger(__name__)

Key = Tuple[CodeSystem, str]

DESIGN_MAGIC = "CLAIMSRISK-DESIGN-1"
INCIDENCE = "incidence"
SYSTEM_ORDER = {s: i for i, s in enumerate(CodeSystem)}


def code_column_name(system: Union[CodeSystem, str], code: str) -> str:
    return f"{CodeSystem(system).value}:{code}"


def categorical_column_name(feature: str, category: str) -> str:
    return f"{feature}={category}"


class FeatureSpace:
    """Ordered column metadata: binary columns first, continuous columns last"""

    def __init__(self, columns: Sequence[FeatureColumn]):
        binary = [c for c in columns if c.kind != FeatureKind.CONTINUOUS]
        continuous = [c for c in columns if c.kind == FeatureKind.CONTINUOUS]
        self.columns: Tuple[FeatureColumn, ...] = tuple(binary + continuous)
        self.index: Dict[str, int] = {}
        for i, column in enumerate(self.columns):
            if column.name in self.index:
                raise FeatureError(f"duplicate column name '{column.name}'")
            self.index[column.name] = i
        self.n_binary = len(binary)

    def __len__(self) -> int:
        return len(self.columns)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def penalty_factors(self) -> np.ndarray:
        return np.array([c.penalty_factor for c in self.columns], dtype=float)

    def position(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise FeatureError(f"unknown column '{name}'") from None

    def code_position(self, system: Union[CodeSystem, str], code: str) -> Optional[int]:
        return self.index.get(code_column_name(system, code))

    def columns_for_feature(self, feature: str) -> List[str]:
        """Names of the categorical dummies of one feature"""
        return [c.name for c in self.columns if c.feature == feature]


@dataclass
class SparseDesignMatrix:
    """
    Binary part in compressed sparse column form plus dense continuous columns.

    Column j < n_binary lives in ``binary``; the rest in ``continuous``.
    """
    n_rows: int
    binary: sparse.csc_matrix
    continuous: np.ndarray
    _csc: Optional[sparse.csc_matrix] = field(default=None, repr=False, compare=False)

    @property
    def n_binary(self) -> int:
        return self.binary.shape[1]

    @property
    def n_cols(self) -> int:
        return self.binary.shape[1] + self.continuous.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def rows(self, j: int) -> np.ndarray:
        """Sorted row indices set in binary column j"""
        start, end = self.binary.indptr[j], self.binary.indptr[j + 1]
        return self.binary.indices[start:end]

    def to_csc(self) -> sparse.csc_matrix:
        """Whole design as one CSC matrix (continuous block appended)"""
        if self._csc is None:
            if self.continuous.shape[1]:
                merged = sparse.hstack(
                    [self.binary, sparse.csc_matrix(self.continuous)], format="csc"
                )
            else:
                merged = self.binary.copy()
            merged.sort_indices()
            self._csc = merged.astype(float)
        return self._csc


def expand_codes(
    taxonomy: Taxonomy,
    codes: Iterable[Tuple[Union[CodeSystem, str], str]],
    unknown: str = "error",
) -> Set[Key]:
    """
    Union of the ancestor chains of the given codes.

    Args:
        taxonomy: Code dictionaries
        codes: Observed (system, code) pairs
        unknown: 'error' raises UnknownCodeError, 'skip' ignores unknown codes
    """
    expanded: Set[Key] = set()
    for system, code in codes:
        key = (CodeSystem(system), code)
        if key in expanded:
            continue
        if key not in taxonomy:
            if unknown == "error":
                raise UnknownCodeError(key[0].value, code)
            continue
        expanded.update(node.key for node in taxonomy.ancestors(*key))
    return expanded


class _Expander:
    """Per-code cache of the filtered ancestor chain"""

    def __init__(self, taxonomy: Taxonomy, config: FeatureConfig):
        self.taxonomy = taxonomy
        self.config = config
        self.systems = set(config.systems)
        self.groups = set((CodeSystem(s), c) for s, c in config.groups) if config.groups else None
        self.cache: Dict[Key, FrozenSet[Key]] = {}
        self.unknown = Counter()

    def keep(self, key: Key) -> bool:
        node = self.taxonomy.get(*key)
        if not (self.config.min_level <= node.level <= self.config.max_level):
            return False
        return self.groups is None or key in self.groups

    def person(self, codes: Iterable[Tuple[CodeSystem, str]], policy: str) -> FrozenSet[Key]:
        found: Set[Key] = set()
        for system, code in codes:
            key = (CodeSystem(system), code)
            if key[0] not in self.systems:
                continue
            chain = self.cache.get(key)
            if chain is None:
                if key not in self.taxonomy:
                    if policy == "error":
                        raise UnknownCodeError(key[0].value, code)
                    self.unknown[key] += 1
                    continue
                chain = frozenset(k for k in expand_codes(self.taxonomy, [key]) if self.keep(k))
                self.cache[key] = chain
            found |= chain
        return frozenset(found)


def _reference_category(cohort: Cohort, feature: str, configured: Optional[str]) -> str:
    observed = cohort.categories[feature]
    if configured is not None:
        if configured not in observed:
            raise FeatureError(
                f"reference category '{configured}' of '{feature}' is not observed"
            )
        return configured
    counts = cohort.category_counts(feature)
    # Most frequent, ties to the smallest label
    return min(observed, key=lambda c: (-counts[c], c))


def build_design(
    cohort: Cohort,
    taxonomy: Taxonomy,
    config: FeatureConfig,
) -> Tuple[FeatureSpace, SparseDesignMatrix]:
    """
    Build the feature space and the design matrix for a cohort.

    One code column per expanded code seen in any record, one dummy per
    non-reference category, and the unpenalized incidence column.
    """
    if len(cohort) == 0:
        raise FeatureError("cannot build a design for an empty cohort")
    for feature in config.categorical:
        if feature not in cohort.categories:
            raise FeatureError(f"config references unknown categorical feature '{feature}'")

    columns: List[FeatureColumn] = []
    for feature, configured in config.categorical.items():
        reference = _reference_category(cohort, feature, configured)
        for category in cohort.categories[feature]:
            if category == reference:
                continue
            columns.append(FeatureColumn(
                name=categorical_column_name(feature, category),
                kind=FeatureKind.CATEGORICAL_DUMMY,
                feature=feature,
                category=category,
                penalty_factor=1.0,
            ))

    expander = _Expander(taxonomy, config)
    person_keys = [expander.person(r.codes, config.unknown_codes) for r in cohort]
    if expander.unknown:
        logger.warning(
            "Skipped %d unknown code observations (%d distinct codes)",
            sum(expander.unknown.values()), len(expander.unknown),
        )
    observed = set().union(*person_keys) if person_keys else set()
    for key in sorted(observed, key=lambda k: (SYSTEM_ORDER[k[0]], taxonomy.get(*k).level, k[1])):
        node = taxonomy.get(*key)
        columns.append(FeatureColumn(
            name=code_column_name(*key),
            kind=FeatureKind.CODE_DUMMY,
            system=node.system,
            code=node.code,
            level=node.level,
            penalty_factor=float(node.level) if config.penalty_mode == "level" else 1.0,
        ))

    if config.include_incidence:
        columns.append(FeatureColumn(
            name=INCIDENCE, kind=FeatureKind.CONTINUOUS, penalty_factor=0.0
        ))

    space = FeatureSpace(columns)
    design = _assemble(cohort, person_keys, space)
    logger.info(
        "Built design '%s': %d rows x %d columns (%d code, %d stored entries)",
        config.name, design.n_rows, len(space), len(observed), design.binary.nnz,
    )
    return space, design


def apply_space(
    cohort: Cohort,
    taxonomy: Taxonomy,
    space: FeatureSpace,
    config: FeatureConfig,
) -> SparseDesignMatrix:
    """
    Design for a new cohort aligned to a frozen feature space.

    Codes unknown to the taxonomy or absent from the space are ignored with a
    count warning; unseen categories contribute no dummy.
    """
    expander = _Expander(taxonomy, config)
    person_keys = [expander.person(r.codes, "skip") for r in cohort]
    if expander.unknown:
        logger.warning(
            "Ignored %d observations of %d codes unknown to the taxonomy",
            sum(expander.unknown.values()), len(expander.unknown),
        )
    in_space = set(c.name for c in space.columns)
    outside = Counter(
        code_column_name(*k) for keys in person_keys for k in keys
        if code_column_name(*k) not in in_space
    )
    if outside:
        logger.warning(
            "Ignored %d activations of %d codes unknown to the frozen model",
            sum(outside.values()), len(outside),
        )
    known = {(c.feature, c.category) for c in space.columns if c.kind == FeatureKind.CATEGORICAL_DUMMY}
    features = {c.feature for c in space.columns if c.kind == FeatureKind.CATEGORICAL_DUMMY}
    unseen = Counter(
        (f, r.categorical.get(f)) for r in cohort for f in features
        if (f, r.categorical.get(f)) not in known
    )
    if unseen:
        logger.debug("%d persons carry reference or unseen categories", sum(unseen.values()))
    return _assemble(cohort, person_keys, space)


def _assemble(
    cohort: Cohort,
    person_keys: Sequence[FrozenSet[Key]],
    space: FeatureSpace,
) -> SparseDesignMatrix:
    n_rows = len(cohort)
    rows_of: List[List[int]] = [[] for _ in range(space.n_binary)]
    categorical_pos: Dict[Tuple[str, str], int] = {}
    code_pos: Dict[Key, int] = {}
    for j, column in enumerate(space.columns[: space.n_binary]):
        if column.kind == FeatureKind.CATEGORICAL_DUMMY:
            categorical_pos[(column.feature, column.category)] = j
        else:
            code_pos[(column.system, column.code)] = j
    features = sorted({f for f, _ in categorical_pos})

    for i, record in enumerate(cohort):
        for feature in features:
            j = categorical_pos.get((feature, record.categorical.get(feature)))
            if j is not None:
                rows_of[j].append(i)
        for key in person_keys[i]:
            j = code_pos.get(key)
            if j is not None:
                rows_of[j].append(i)

    lengths = np.fromiter((len(r) for r in rows_of), dtype=np.int64, count=len(rows_of))
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    indices = (
        np.concatenate([np.asarray(r, dtype=np.int32) for r in rows_of])
        if rows_of and indptr[-1] else np.zeros(0, dtype=np.int32)
    )
    binary = sparse.csc_matrix(
        (np.ones(len(indices)), indices, indptr), shape=(n_rows, space.n_binary)
    )

    continuous_cols = space.columns[space.n_binary:]
    continuous = np.zeros((n_rows, len(continuous_cols)))
    for k, column in enumerate(continuous_cols):
        if column.name != INCIDENCE:
            raise FeatureError(f"unsupported continuous column '{column.name}'")
        for i, record in enumerate(cohort):
            if record.incidence is None:
                raise FeatureError(
                    f"person '{record.id}' has no incidence; impute before featurizing"
                )
            continuous[i, k] = record.incidence
    return SparseDesignMatrix(n_rows=n_rows, binary=binary, continuous=continuous)


def column_prevalence(design: SparseDesignMatrix, space: FeatureSpace) -> np.ndarray:
    """Rows with value 1 (binary) or a nonzero value (continuous) per column"""
    if design.n_cols != len(space):
        raise FeatureError(
            f"design has {design.n_cols} columns, feature space {len(space)}"
        )
    binary = np.diff(design.binary.indptr)
    continuous = np.count_nonzero(design.continuous, axis=0)
    return np.concatenate([binary, continuous]).astype(np.int64)


def save_design(target: Union[str, Path], space: FeatureSpace, design: SparseDesignMatrix) -> None:
    """Persist a design cache (.npz with magic header and column table)"""
    table = json.dumps([c.model_dump(mode="json") for c in space.columns])
    with open(target, "wb") as f:
        np.savez_compressed(
            f,
            magic=np.array(DESIGN_MAGIC),
            n_rows=np.array(design.n_rows, dtype=np.int64),
            columns=np.array(table),
            indptr=design.binary.indptr.astype(np.int64),
            indices=design.binary.indices.astype(np.int32),
            continuous=design.continuous,
        )


def load_design(source: Union[str, Path]) -> Tuple[FeatureSpace, SparseDesignMatrix]:
    """Read a design cache written by save_design"""
    with np.load(source, allow_pickle=False) as data:
        if "magic" not in data or str(data["magic"]) != DESIGN_MAGIC:
            raise FeatureError(f"{source} is not a design cache")
        n_rows = int(data["n_rows"])
        columns = [FeatureColumn.model_validate(c) for c in json.loads(str(data["columns"]))]
        space = FeatureSpace(columns)
        indptr = data["indptr"]
        indices = data["indices"]
        binary = sparse.csc_matrix(
            (np.ones(len(indices)), indices, indptr), shape=(n_rows, space.n_binary)
        )
        design = SparseDesignMatrix(n_rows=n_rows, binary=binary, continuous=data["continuous"])
    return space, design
