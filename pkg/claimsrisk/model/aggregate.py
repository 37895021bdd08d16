"""
Coefficient aggregation: hierarchy-summed code effects, group log odds ratios,
population-importance ranking and the coefficient export
"""
import logging
import math
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np
import pandas as pd

from claimsrisk.data.models import CodeEffect, CodeSystem, FeatureKind, GroupSummary, LassoFit
from claimsrisk.data.taxonomy import Taxonomy
from claimsrisk.errors import FeatureError
from claimsrisk.model.featurize import FeatureSpace, SparseDesignMatrix, column_prevalence

logger = logging.getLogger(__name__)

Key = Tuple[CodeSystem, str]

EFFECT_COLUMNS = ["system", "code", "level", "coef", "total_logor", "total_or", "prevalence", "below_min_size"]
GROUP_COLUMNS = ["system", "group", "logor", "size", "importance", "rank"]
GROUP_LEVEL = 2


def _own(beta: np.ndarray, space: FeatureSpace, system: CodeSystem, code: str) -> float:
    j = space.code_position(system, code)
    return 0.0 if j is None else float(beta[j])


def total_code_effect(
    fit: LassoFit,
    space: FeatureSpace,
    taxonomy: Taxonomy,
    system: Union[CodeSystem, str],
    code: str,
    prevalence: Optional[np.ndarray] = None,
) -> CodeEffect:
    """
    Sum of the coefficients along the code's ancestor chain, itself included.

    Columns absent from the feature space contribute 0. ``prevalence`` is the
    per-column person count from column_prevalence.
    """
    if fit.n_features != len(space):
        raise FeatureError(f"fit has {fit.n_features} features, feature space {len(space)}")
    node = taxonomy.node(system, code)
    beta = fit.coef_vector()
    total = sum(_own(beta, space, a.system, a.code) for a in taxonomy.ancestors(*node.key))
    j = space.code_position(*node.key)
    return CodeEffect(
        system=node.system,
        code=node.code,
        level=node.level,
        own_coef=_own(beta, space, *node.key),
        total_logor=total,
        total_or=math.exp(total),
        prevalence=int(prevalence[j]) if prevalence is not None and j is not None else 0,
    )


def _observed(space: FeatureSpace, prevalence: np.ndarray) -> Dict[Key, int]:
    return {
        (c.system, c.code): int(prevalence[j])
        for j, c in enumerate(space.columns)
        if c.kind == FeatureKind.CODE_DUMMY and prevalence[j] > 0
    }


def _inner(taxonomy: Taxonomy, observed: Dict[Key, int]) -> Set[Key]:
    """Nodes with at least one observed proper descendant"""
    return {a.key for key in observed for a in taxonomy.ancestors(*key)[:-1]}


def _fine_codes(
    taxonomy: Taxonomy,
    system: CodeSystem,
    group: str,
    observed: Dict[Key, int],
    inner: Optional[Set[Key]] = None,
) -> List[Key]:
    """Deepest observed codes of a group: observed, with no observed descendant"""
    if inner is None:
        inner = _inner(taxonomy, observed)
    members = [taxonomy.node(system, group)] + taxonomy.descendants(system, group)
    return [n.key for n in members if n.key in observed and n.key not in inner]


def group_logor(
    fit: LassoFit,
    space: FeatureSpace,
    taxonomy: Taxonomy,
    design: SparseDesignMatrix,
    system: Union[CodeSystem, str],
    group: str,
    prevalence: Optional[np.ndarray] = None,
) -> GroupSummary:
    """
    Prevalence-weighted mean total effect over a level-2 group's fine-grained codes.

    group_size counts persons with any code in the group. importance and rank
    are filled by population_importance.
    """
    node = taxonomy.node(system, group)
    if node.level != GROUP_LEVEL:
        raise FeatureError(f"{node.system.value} {node.code} is level {node.level}, not a level-2 group")
    if prevalence is None:
        prevalence = column_prevalence(design, space)
    observed = _observed(space, prevalence)
    fine = _fine_codes(taxonomy, node.system, node.code, observed)
    if not fine:
        raise FeatureError(f"group {node.system.value} {node.code} has no observed codes")

    weights = np.array([observed[k] for k in fine], dtype=float)
    effects = np.array([total_code_effect(fit, space, taxonomy, *k).total_logor for k in fine])
    logor = float(np.dot(weights, effects) / weights.sum())

    j = space.code_position(*node.key)
    if j is not None:
        size = int(prevalence[j])
    else:
        # Group column not built: union of the members' rows
        rows = set()
        for key in observed:
            if key[0] == node.system and any(a.code == node.code for a in taxonomy.ancestors(*key)):
                rows.update(design.rows(space.code_position(*key)).tolist())
        size = len(rows)
    return GroupSummary(system=node.system, group=node.code, group_logor=logor, group_size=size)


def population_importance(groups: Iterable[GroupSummary]) -> List[GroupSummary]:
    """
    Importance = group_logor x group_size, ranked descending.

    Ties go to the lexicographically smaller group code (then system).
    """
    scored = [
        g.model_copy(update={"importance": g.group_logor * g.group_size}) for g in groups
    ]
    scored.sort(key=lambda g: (-g.importance, g.group, g.system.value))
    return [g.model_copy(update={"rank": i}) for i, g in enumerate(scored, start=1)]


def group_summaries(
    fit: LassoFit,
    space: FeatureSpace,
    taxonomy: Taxonomy,
    design: SparseDesignMatrix,
    systems: Optional[Iterable[CodeSystem]] = None,
) -> List[GroupSummary]:
    """Ranked summaries of every level-2 group with observed codes"""
    prevalence = column_prevalence(design, space)
    observed = _observed(space, prevalence)
    inner = _inner(taxonomy, observed)
    wanted = set(systems) if systems is not None else set(CodeSystem)
    groups = []
    for node in taxonomy:
        if node.level != GROUP_LEVEL or node.system not in wanted:
            continue
        if not _fine_codes(taxonomy, node.system, node.code, observed, inner):
            continue
        groups.append(group_logor(fit, space, taxonomy, design, node.system, node.code, prevalence))
    return population_importance(groups)


def groups_frame(groups: Iterable[GroupSummary]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "system": g.system.value,
                "group": g.group,
                "logor": g.group_logor,
                "size": g.group_size,
                "importance": g.importance,
                "rank": g.rank,
            }
            for g in groups
        ],
        columns=GROUP_COLUMNS,
    )


def export_coefficients(
    fit: LassoFit,
    space: FeatureSpace,
    taxonomy: Taxonomy,
    design: SparseDesignMatrix,
    min_group_size: int = 0,
) -> pd.DataFrame:
    """
    Effects table: one row per design column plus every taxonomy code whose
    total effect is nonzero. Non-code columns carry an empty system and level.
    Rows with prevalence below min_group_size are flagged, not dropped.
    """
    if fit.n_features != len(space):
        raise FeatureError(f"fit has {fit.n_features} features, feature space {len(space)}")
    beta = fit.coef_vector()
    prevalence = column_prevalence(design, space)

    totals: Dict[Key, float] = {}

    def total(system: CodeSystem, code: str) -> float:
        key = (system, code)
        if key not in totals:
            node = taxonomy.node(system, code)
            parent = total(system, node.parent) if node.parent is not None else 0.0
            totals[key] = parent + _own(beta, space, system, code)
        return totals[key]

    rows = []
    for j, column in enumerate(space.columns):
        if column.kind != FeatureKind.CODE_DUMMY:
            rows.append({
                "system": None, "code": column.name, "level": None,
                "coef": float(beta[j]), "total_logor": float(beta[j]),
                "total_or": math.exp(beta[j]), "prevalence": int(prevalence[j]),
            })
    in_space = set()
    for j, column in enumerate(space.columns):
        if column.kind == FeatureKind.CODE_DUMMY:
            in_space.add((column.system, column.code))
            value = total(column.system, column.code)
            rows.append({
                "system": column.system.value, "code": column.code, "level": column.level,
                "coef": float(beta[j]), "total_logor": value,
                "total_or": math.exp(value), "prevalence": int(prevalence[j]),
            })
    for node in taxonomy:
        if node.key in in_space:
            continue
        value = total(*node.key)
        if value != 0.0:
            rows.append({
                "system": node.system.value, "code": node.code, "level": node.level,
                "coef": 0.0, "total_logor": value, "total_or": math.exp(value), "prevalence": 0,
            })

    frame = pd.DataFrame(rows, columns=EFFECT_COLUMNS[:-1])
    frame["level"] = frame["level"].astype("Int64")
    frame["below_min_size"] = frame["prevalence"] < min_group_size
    logger.info("Exported %d effect rows (%d below minimum size %d)",
                len(frame), int(frame["below_min_size"].sum()), min_group_size)
    return frame


def nonzero_summary(fit: LassoFit, space: FeatureSpace) -> Dict:
    """Nonzero coefficient counts per kind and per (system, level)"""
    beta = fit.coef_vector()
    by_kind: Dict[str, int] = {k.value: 0 for k in FeatureKind}
    by_level: Dict[str, Dict[str, float]] = {}
    for j, column in enumerate(space.columns):
        nonzero = beta[j] != 0
        by_kind[column.kind.value] += int(nonzero)
        if column.kind == FeatureKind.CODE_DUMMY:
            entry = by_level.setdefault(
                f"{column.system.value}:{column.level}", {"columns": 0, "nonzero": 0}
            )
            entry["columns"] += 1
            entry["nonzero"] += int(nonzero)
    for entry in by_level.values():
        entry["share"] = entry["nonzero"] / entry["columns"]
    return {
        "nonzero": int(np.count_nonzero(beta)),
        "columns": len(space),
        "by_kind": by_kind,
        "by_level": dict(sorted(by_level.items())),
    }


def top_risk_factors(effects: pd.DataFrame, min_group_size: int, k: int = 20) -> pd.DataFrame:
    """Codes with at least min_group_size persons, by descending total odds ratio"""
    codes = effects[effects["system"].notna() & (effects["prevalence"] >= min_group_size)]
    return (
        codes.sort_values(["total_or", "system", "code"], ascending=[False, True, True])
        .head(k)
        .reset_index(drop=True)
    )
