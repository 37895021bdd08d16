"""
Person-level cohort: loading, missing-value defaults, regional incidence imputation
"""
import logging
import re
from collections import Counter
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from claimsrisk.data.models import OUTCOMES, CodeSystem, PersonRecord
from claimsrisk.data.taxonomy import Taxonomy
from claimsrisk.errors import CohortError

logger = logging.getLogger(__name__)

IncidenceSeries = Dict[Tuple[str, date], float]


class Cohort:
    """Ordered, immutable collection of person records"""

    def __init__(self, records: Sequence[PersonRecord]):
        self._records: Tuple[PersonRecord, ...] = tuple(records)
        self._index: Dict[str, int] = {}
        for i, record in enumerate(self._records):
            if record.id in self._index:
                raise CohortError(f"duplicate id '{record.id}'")
            self._index[record.id] = i
        categories: Dict[str, set] = {}
        for record in self._records:
            for feature, value in record.categorical.items():
                bucket = categories.setdefault(feature, set())
                if value is not None:
                    bucket.add(value)
        self._categories = {f: sorted(v) for f, v in sorted(categories.items())}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[PersonRecord]:
        return iter(self._records)

    def __getitem__(self, i: int) -> PersonRecord:
        return self._records[i]

    @property
    def records(self) -> Tuple[PersonRecord, ...]:
        return self._records

    @property
    def categories(self) -> Dict[str, List[str]]:
        """Observed categories per categorical feature"""
        return self._categories

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self._records]

    def position(self, person_id: str) -> int:
        return self._index[person_id]

    def outcome(self, name: str) -> np.ndarray:
        """Binary outcome vector in cohort order"""
        if name not in OUTCOMES:
            raise CohortError(f"unknown outcome '{name}', expected one of {OUTCOMES}")
        return np.fromiter((r.outcome(name) for r in self._records), dtype=float, count=len(self))

    def category_counts(self, feature: str) -> Counter:
        return Counter(r.categorical.get(feature) for r in self._records)

    def without(self, ids: Iterable[str]) -> "Cohort":
        """Cohort minus the given person ids"""
        drop = set(ids)
        return Cohort([r for r in self._records if r.id not in drop])


def load_cohort(
    source: Union[str, Path],
    defaults: Optional[Mapping[str, str]] = None,
) -> Cohort:
    """
    Load a cohort JSONL file.

    Missing categorical values (key absent or null) are replaced by the
    configured default of that feature; a missing value without default fails
    the load with the offending line number.
    """
    defaults = dict(defaults or {})
    parsed: List[Tuple[int, PersonRecord]] = []
    seen: Dict[str, int] = {}

    with open(source, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                record = PersonRecord.model_validate_json(raw)
            except ValidationError as e:
                first = e.errors()[0]
                where = ".".join(str(p) for p in first["loc"]) or "record"
                raise CohortError(f"{where}: {first['msg']}", line=lineno) from e
            if record.id in seen:
                raise CohortError(
                    f"duplicate id '{record.id}' (first seen at line {seen[record.id]})",
                    line=lineno,
                )
            seen[record.id] = lineno
            parsed.append((lineno, record))

    features = sorted({k for _, r in parsed for k in r.categorical})
    records: List[PersonRecord] = []
    filled = Counter()
    for lineno, record in parsed:
        missing = [k for k in features if record.categorical.get(k) is None]
        if missing:
            values = dict(record.categorical)
            for feature in missing:
                if feature not in defaults:
                    raise CohortError(
                        f"missing value for '{feature}' and no default configured",
                        line=lineno,
                    )
                values[feature] = defaults[feature]
                filled[feature] += 1
            record = record.model_copy(update={"categorical": values})
        records.append(record)

    for feature, count in sorted(filled.items()):
        logger.info("Filled %d missing '%s' values with '%s'", count, feature, defaults[feature])
    logger.info("Loaded cohort from %s: %d persons", source, len(records))
    return Cohort(records)


def write_cohort(cohort: Cohort, target: Union[str, Path]) -> None:
    """Write a cohort as JSONL, one record per line"""
    with open(target, "w", encoding="utf-8") as f:
        for record in cohort:
            f.write(record.model_dump_json() + "\n")


def load_incidence_series(source: Union[str, Path]) -> IncidenceSeries:
    """Read a region,date,incidence CSV into a lookup table"""
    frame = pd.read_csv(source, dtype={"region": str, "date": str})
    expected = {"region", "date", "incidence"}
    if not expected.issubset(frame.columns):
        raise CohortError(f"incidence series needs columns {sorted(expected)}")
    values = frame["incidence"].astype(float)
    if not np.all(np.isfinite(values)) or (values < 0).any():
        raise CohortError("incidence series contains negative or non-finite values")
    series: IncidenceSeries = {}
    for region, day, value in zip(frame["region"], frame["date"], values):
        key = (region, date.fromisoformat(day))
        if key in series:
            raise CohortError(f"duplicate incidence entry for region {region} on {day}")
        series[key] = float(value)
    return series


def impute_reference_incidence(
    cohort: Cohort,
    incidence_series: Mapping[Tuple[str, date], float],
    seed: int,
    outcome: str = "y2",
) -> Cohort:
    """
    Fill the regional incidence predictor.

    Outcome persons get the incidence at (region, event_date). Everyone else
    gets the incidence at a reference date drawn from the empirical
    distribution of the outcome persons' event dates. Records that already
    carry an incidence are left as they are.
    """
    outcome_dates = [
        r.event_date for r in cohort if r.outcome(outcome) == 1 and r.event_date is not None
    ]
    pending = [
        i for i, r in enumerate(cohort) if r.incidence is None and r.outcome(outcome) == 0
    ]
    if pending and not outcome_dates:
        raise CohortError(
            f"no {outcome} event dates available to define the reference-date distribution"
        )

    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(outcome_dates), size=len(pending)) if pending else []
    reference = dict(zip(pending, draws))

    records: List[PersonRecord] = []
    for i, record in enumerate(cohort):
        if record.incidence is not None:
            records.append(record)
            continue
        if record.outcome(outcome) == 1:
            if record.event_date is None:
                raise CohortError(f"{outcome} person '{record.id}' has no event_date")
            day = record.event_date
        else:
            day = outcome_dates[reference[i]]
        if record.region is None:
            raise CohortError(f"person '{record.id}' has no region")
        key = (record.region, day)
        if key not in incidence_series:
            raise CohortError(
                f"no incidence for region '{record.region}' on {day.isoformat()} "
                f"(person '{record.id}')"
            )
        records.append(record.model_copy(update={"incidence": incidence_series[key]}))

    logger.info(
        "Imputed incidence for %d persons (%d via reference dates)",
        sum(1 for r in cohort if r.incidence is None),
        len(pending),
    )
    return Cohort(records)


_RANGE = re.compile(r"(\d+(?:\.\d+)?)\s*-\s*(\d+(?:\.\d+)?)")
_OPEN = re.compile(r"(\d+(?:\.\d+)?)\s*\+")


def age_midpoint(label: str) -> float:
    """
    Numeric age for an age-group label.

    Understands ranges ("40-44" -> 42.0), open upper groups ("90+" -> 92.5)
    and plain numbers; a prefix such as "M_" is ignored.
    """
    text = label.split("_")[-1]
    match = _RANGE.search(text)
    if match:
        lo, hi = float(match.group(1)), float(match.group(2))
        return (lo + hi) / 2
    match = _OPEN.search(text)
    if match:
        return float(match.group(1)) + 2.5
    try:
        return float(text)
    except ValueError as e:
        raise CohortError(f"cannot read an age from category '{label}'") from e


def describe_by_outcome(
    cohort: Cohort,
    taxonomy: Taxonomy,
    age_feature: str = "age_group",
    gender_feature: str = "gender",
    male: str = "M",
) -> pd.DataFrame:
    """
    Descriptive statistics per outcome group (no outcome, y1, y2, y3).

    Multimorbidity counts distinct ICD level-2 groups per person and
    polymedication distinct ATC level-3 subgroups; unknown codes are skipped.
    """
    def distinct_at(record: PersonRecord, system: CodeSystem, level: int) -> int:
        found = set()
        for sys_, code in record.codes:
            if sys_ != system or (sys_, code) not in taxonomy:
                continue
            chain = taxonomy.ancestors(sys_, code)
            if len(chain) >= level - chain[0].level + 1:
                found.add(chain[level - chain[0].level].code)
        return len(found)

    groups = {
        "no_outcome": [r for r in cohort if r.y1 == 0],
        "y1": [r for r in cohort if r.y1 == 1],
        "y2": [r for r in cohort if r.y2 == 1],
        "y3": [r for r in cohort if r.y3 == 1],
    }
    features = sorted(cohort.categories)
    table: Dict[str, Dict[str, float]] = {}
    for group, members in groups.items():
        column: Dict[str, float] = {"N": float(len(members))}
        if members:
            if age_feature in cohort.categories:
                column["age"] = float(np.mean([age_midpoint(r.categorical[age_feature]) for r in members]))
            if gender_feature in cohort.categories:
                column["gender_male"] = float(np.mean([r.categorical[gender_feature] == male for r in members]))
            column["multimorbidity"] = float(np.mean([distinct_at(r, CodeSystem.ICD, 2) for r in members]))
            column["polymedication"] = float(np.mean([distinct_at(r, CodeSystem.ATC, 3) for r in members]))
            incidence = [r.incidence for r in members if r.incidence is not None]
            if incidence:
                column["incidence"] = float(np.mean(incidence))
            for feature in features:
                if feature in (age_feature,):
                    continue
                counts = Counter(r.categorical.get(feature) for r in members)
                for category in cohort.categories[feature]:
                    column[f"{feature}: {category}"] = counts[category] / len(members)
        table[group] = column
    return pd.DataFrame(table)
