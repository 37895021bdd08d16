"""
Synthetic taxonomies, cohorts and incidence series with planted effects
"""
import logging
import math
from datetime import timedelta
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from claimsrisk.data.cohort import Cohort, age_midpoint
from claimsrisk.data.models import ROOT_LEVEL, CodeNode, CodeSystem, GeneratorSpec, PersonRecord
from claimsrisk.data.taxonomy import Taxonomy
from claimsrisk.errors import GeneratorError
from claimsrisk.model.featurize import categorical_column_name, code_column_name

logger = logging.getLogger(__name__)

PREFIX = {CodeSystem.ICD: "D", CodeSystem.ATC: "A", CodeSystem.OPS: "8-"}
AGE_FEATURE = "age_group"
GENDER_FEATURE = "gender"
GENDERS = ("F", "M")

Key = Tuple[CodeSystem, str]


def _code(system: CodeSystem, path: Sequence[int]) -> str:
    return PREFIX[system] + ".".join(str(i) for i in path)


def generate_taxonomy(spec: GeneratorSpec, seed: Optional[int] = None) -> Taxonomy:
    """
    Complete trees with the requested branching per level.

    Codes encode their path, e.g. D1.2.1 (ICD), A2.1 (ATC) or 8-1.2 (OPS
    chapter 8). Structure and names do not depend on the seed.
    """
    nodes: List[CodeNode] = []
    for system in CodeSystem:
        branching = spec.shapes.get(system)
        if not branching:
            continue
        root = ROOT_LEVEL[system]
        frontier: List[Tuple[int, ...]] = [()]
        for depth, width in enumerate(branching):
            level = root + depth
            grown = []
            for path in frontier:
                parent = _code(system, path) if path else None
                for i in range(1, width + 1):
                    child = path + (i,)
                    nodes.append(CodeNode(
                        system=system, code=_code(system, child), level=level, parent=parent,
                        name=f"{system.value} level {level} node {'.'.join(map(str, child))}",
                    ))
                    grown.append(child)
            frontier = grown
    if not nodes:
        raise GeneratorError("generator spec defines no code system")
    logger.info("Generated taxonomy with %d nodes", len(nodes))
    return Taxonomy(nodes)


def age_group_labels(spec: GeneratorSpec) -> List[str]:
    width = (spec.age_max - spec.age_min) / spec.n_age_groups
    labels = []
    for g in range(spec.n_age_groups):
        lo = spec.age_min + g * width
        labels.append(f"{lo:g}-{lo + width - 1:g}")
    return labels


def _leaves(taxonomy: Taxonomy) -> List[Key]:
    leaves = [n.key for n in taxonomy if not taxonomy.children(*n.key)]
    return sorted(leaves, key=lambda k: (k[0].value, k[1]))


def _check_planted(spec: GeneratorSpec, taxonomy: Taxonomy, labels: List[str]) -> None:
    categories = {f: set(s.categories) for f, s in spec.categorical.items()}
    categories[AGE_FEATURE] = set(labels)
    categories[GENDER_FEATURE] = set(GENDERS)
    for name in spec.planted:
        if "=" in name:
            feature, category = name.split("=", 1)
            if category not in categories.get(feature, ()):
                raise GeneratorError(f"planted column '{name}' is not a generated category")
        elif ":" in name:
            system, code = name.split(":", 1)
            if system not in CodeSystem.__members__ or (CodeSystem(system), code) not in taxonomy:
                raise GeneratorError(f"planted column '{name}' is not in the taxonomy")
        else:
            raise GeneratorError(f"planted column '{name}' is neither a code nor a category")


def leaf_prevalences(taxonomy: Taxonomy, spec: GeneratorSpec) -> Tuple[List[Key], np.ndarray]:
    """
    Per-leaf marginal prevalence, log-normal around spec.leaf_prevalence.

    Drawn from spec.seed alone, so waves simulated with other seeds share
    the same code frequencies.
    """
    leaves = _leaves(taxonomy)
    rng = np.random.default_rng(spec.seed)
    s = spec.prevalence_spread
    base = spec.leaf_prevalence * np.exp(s * rng.standard_normal(len(leaves)) - s * s / 2)
    # Prevalence scaled by exp(age_correlation * (a - 1/2)) with a in [0, 1]
    peak = base * math.exp(abs(spec.age_correlation) / 2)
    if np.any(peak >= 1) or np.any(base <= 0):
        raise GeneratorError("leaf prevalence leaves (0, 1) after the age adjustment")
    return leaves, base


def _draw_shard(
    rng_seed: np.random.SeedSequence,
    start: int,
    size: int,
    spec: GeneratorSpec,
    leaves: List[Key],
    base: np.ndarray,
    closure: List[List[str]],
    labels: List[str],
    midpoints: np.ndarray,
) -> Tuple[List[PersonRecord], np.ndarray]:
    rng = np.random.default_rng(rng_seed)
    features = sorted(spec.categorical)
    center = (spec.age_min + spec.age_max) / 2
    span = spec.age_max - spec.age_min

    age_idx = rng.integers(0, len(labels), size=size)
    gender = rng.integers(0, len(GENDERS), size=size)
    drawn = {}
    for feature in features:
        cat = spec.categorical[feature]
        weights = np.asarray(cat.weights if cat.weights is not None else [1.0] * len(cat.categories))
        drawn[feature] = rng.choice(len(cat.categories), size=size, p=weights / weights.sum())
    ages = midpoints[age_idx]
    relative = (ages - spec.age_min) / span - 0.5
    probs = base[None, :] * np.exp(spec.age_correlation * relative)[:, None]
    has = rng.random((size, len(leaves))) < probs

    logit = np.full(size, spec.intercept) + spec.age_effect * (ages - center)
    records = []
    categoricals = []
    for i in range(size):
        categorical = {
            AGE_FEATURE: labels[age_idx[i]],
            GENDER_FEATURE: GENDERS[gender[i]],
        }
        for feature in features:
            categorical[feature] = spec.categorical[feature].categories[drawn[feature][i]]
        categoricals.append(categorical)
        active = {categorical_column_name(f, c) for f, c in categorical.items()}
        for j in np.flatnonzero(has[i]):
            active.update(closure[j])
        # Sorted for a reproducible float sum
        logit[i] += sum(spec.planted.get(name, 0.0) for name in sorted(active))

    y2 = rng.random(size) < expit(logit)
    y1 = y2 | (rng.random(size) < expit(logit))
    y3 = y2 & (rng.random(size) < 0.5)
    regions = rng.integers(0, spec.n_regions, size=size)
    days = rng.integers(0, spec.n_days, size=size)

    for i in range(size):
        records.append(PersonRecord(
            id=f"P{start + i:07d}",
            categorical=categoricals[i],
            region=f"R{regions[i] + 1}",
            event_date=spec.start_date + timedelta(days=int(days[i])) if y1[i] else None,
            codes=[leaves[j] for j in np.flatnonzero(has[i])],
            y1=int(y1[i]),
            y2=int(y2[i]),
            y3=int(y3[i]),
        ))
    return records, logit


def generate_cohort(
    taxonomy: Taxonomy,
    spec: GeneratorSpec,
    seed: Optional[int] = None,
    n_jobs: int = 1,
) -> Tuple[Cohort, pd.DataFrame]:
    """
    Draw persons, leaf codes and outcomes from the planted truth.

    Only leaf codes are stored; their ancestors are implied. The true logit is
    intercept + age_effect (age - centre) + the planted coefficients of every
    column the featurizer would activate, and y2 ~ Bernoulli(sigmoid(logit)).
    y1 adds an independent draw of the same probability, y3 keeps half of y2.

    Returns:
        (cohort, sidecar with columns id, true_logit)
    """
    seed = spec.seed if seed is None else seed
    labels = age_group_labels(spec)
    _check_planted(spec, taxonomy, labels)
    leaves, base = leaf_prevalences(taxonomy, spec)
    midpoints = np.array([age_midpoint(label) for label in labels])
    closure = [
        [code_column_name(n.system, n.code) for n in taxonomy.ancestors(*key)] for key in leaves
    ]

    n_shards = max(1, math.ceil(spec.n_persons / spec.shard_size))
    seeds = np.random.SeedSequence(seed).spawn(n_shards)
    shards = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_draw_shard)(
            seeds[s], s * spec.shard_size,
            min(spec.shard_size, spec.n_persons - s * spec.shard_size),
            spec, leaves, base, closure, labels, midpoints,
        )
        for s in range(n_shards)
    )
    records = [r for shard, _ in shards for r in shard]
    logits = np.concatenate([logit for _, logit in shards])
    cohort = Cohort(records)
    truth = pd.DataFrame({"id": cohort.ids, "true_logit": logits})
    logger.info(
        "Generated cohort of %d persons (%d y2 outcomes) from seed %d",
        len(cohort), int(cohort.outcome("y2").sum()), seed,
    )
    return cohort, truth


def generate_incidence_series(spec: GeneratorSpec, seed: Optional[int] = None) -> pd.DataFrame:
    """
    Daily per-region incidence: one Gaussian-shaped wave per region plus a floor.

    Columns region, date (ISO), incidence.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    days = np.arange(spec.n_days)
    frames = []
    for r in range(spec.n_regions):
        peak = rng.uniform(0.25, 0.6) * spec.n_days
        width = rng.uniform(0.1, 0.25) * spec.n_days
        height = rng.lognormal(mean=math.log(50.0), sigma=0.5)
        values = 1.0 + height * np.exp(-(((days - peak) / width) ** 2))
        frames.append(pd.DataFrame({
            "region": f"R{r + 1}",
            "date": [(spec.start_date + timedelta(days=int(d))).isoformat() for d in days],
            "incidence": np.round(values, 6),
        }))
    return pd.concat(frames, ignore_index=True)
