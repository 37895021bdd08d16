import json
from datetime import date

import numpy as np
import pandas as pd
import pytest

from claimsrisk.data.cohort import (
    Cohort,
    age_midpoint,
    describe_by_outcome,
    impute_reference_incidence,
    load_cohort,
    load_incidence_series,
    write_cohort,
)
from claimsrisk.data.models import PersonRecord
from claimsrisk.errors import CohortError


def write_jsonl(tmp_path, records):
    path = tmp_path / "cohort.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


def test_load_fills_defaults(tmp_path):
    path = write_jsonl(tmp_path, [
        {"id": "a", "categorical": {"nationality": "DE", "status": "employee"}},
        {"id": "b", "categorical": {"nationality": None, "status": "child"}},
        {"id": "c", "categorical": {"status": "pensioner"}},
    ])
    cohort = load_cohort(path, {"nationality": "other"})
    assert len(cohort) == 3
    assert [r.categorical["nationality"] for r in cohort] == ["DE", "other", "other"]
    assert cohort.categories["nationality"] == ["DE", "other"]


def test_missing_value_without_default(tmp_path):
    path = write_jsonl(tmp_path, [
        {"id": "a", "categorical": {"nationality": "DE"}},
        {"id": "b", "categorical": {}},
    ])
    with pytest.raises(CohortError) as info:
        load_cohort(path)
    assert info.value.line == 2
    assert "nationality" in str(info.value)


def test_invalid_records(tmp_path):
    cases = [
        {"id": "a", "y1": 0, "y2": 1},
        {"id": "a", "incidence": -1.0},
        {"id": "a", "codes": [["XYZ", "I25"]]},
        {"id": "a", "y2": 2},
    ]
    for bad in cases:
        path = write_jsonl(tmp_path, [{"id": "ok"}, bad])
        with pytest.raises(CohortError) as info:
            load_cohort(path)
        assert info.value.line == 2


def test_duplicate_id(tmp_path):
    path = write_jsonl(tmp_path, [{"id": "a"}, {"id": "b"}, {"id": "a"}])
    with pytest.raises(CohortError) as info:
        load_cohort(path)
    assert info.value.line == 3


def test_write_round_trip(tmp_path, small_cohort):
    target = tmp_path / "out.jsonl"
    write_cohort(small_cohort, target)
    again = load_cohort(target)
    assert again.records == small_cohort.records


def test_outcome_and_without(small_cohort):
    y = small_cohort.outcome("y2")
    assert y.dtype == float
    assert y.sum() == 4
    rest = small_cohort.without(["p01", "p02"])
    assert len(rest) == 10
    assert "p01" not in rest.ids
    with pytest.raises(CohortError):
        small_cohort.outcome("y4")


def make_series():
    days = [date(2020, 3, d) for d in range(1, 6)]
    return {(region, day): float(10 * r + day.day) for r, region in enumerate(["R1", "R2"]) for day in days}


def test_impute_reference_incidence():
    series = make_series()
    records = [
        PersonRecord(id="case1", region="R1", event_date=date(2020, 3, 2), y1=1, y2=1),
        PersonRecord(id="case2", region="R2", event_date=date(2020, 3, 4), y1=1, y2=1),
        PersonRecord(id="ctrl1", region="R1"),
        PersonRecord(id="ctrl2", region="R2"),
        PersonRecord(id="fixed", region="R2", incidence=99.0),
    ]
    cohort = impute_reference_incidence(Cohort(records), series, seed=1)
    values = {r.id: r.incidence for r in cohort}
    assert values["case1"] == series[("R1", date(2020, 3, 2))]
    assert values["case2"] == series[("R2", date(2020, 3, 4))]
    assert values["fixed"] == 99.0
    # Controls use an outcome person's date in their own region
    assert values["ctrl1"] in {series[("R1", date(2020, 3, 2))], series[("R1", date(2020, 3, 4))]}
    assert values["ctrl2"] in {series[("R2", date(2020, 3, 2))], series[("R2", date(2020, 3, 4))]}

    again = impute_reference_incidence(Cohort(records), series, seed=1)
    assert [r.incidence for r in again] == [r.incidence for r in cohort]


def test_reference_dates_follow_the_outcome_date_distribution():
    series = make_series()
    cases = [
        PersonRecord(id=f"case{i}", region="R1", event_date=date(2020, 3, 2 if i < 3 else 4), y1=1, y2=1)
        for i in range(10)
    ]
    controls = [PersonRecord(id=f"ctrl{i:05d}", region="R1") for i in range(10_000)]
    cohort = impute_reference_incidence(Cohort(cases + controls), series, seed=11)
    drawn = np.array([r.incidence for r in cohort if r.id.startswith("ctrl")])
    # R1 incidence equals the day of month
    assert np.isin(drawn, [2.0, 4.0]).all()
    assert np.mean(drawn == 2.0) == pytest.approx(0.3, abs=0.02)
    assert np.mean(drawn == 4.0) == pytest.approx(0.7, abs=0.02)


def test_impute_missing_series_entry():
    records = [
        PersonRecord(id="case", region="R9", event_date=date(2020, 3, 2), y1=1, y2=1),
        PersonRecord(id="ctrl", region="R1"),
    ]
    with pytest.raises(CohortError):
        impute_reference_incidence(Cohort(records), make_series(), seed=1)


def test_impute_without_outcome_dates():
    with pytest.raises(CohortError):
        impute_reference_incidence(Cohort([PersonRecord(id="ctrl", region="R1")]), make_series(), seed=1)


def test_load_incidence_series(tmp_path):
    path = tmp_path / "incidence.csv"
    pd.DataFrame({
        "region": ["R1", "R1", "R2"],
        "date": ["2020-03-01", "2020-03-02", "2020-03-01"],
        "incidence": [1.5, 2.0, 0.0],
    }).to_csv(path, index=False)
    series = load_incidence_series(path)
    assert series[("R1", date(2020, 3, 2))] == 2.0
    assert len(series) == 3

    pd.DataFrame({"region": ["R1"], "date": ["2020-03-01"], "incidence": [-1.0]}).to_csv(path, index=False)
    with pytest.raises(CohortError):
        load_incidence_series(path)


def test_age_midpoint():
    assert age_midpoint("40-44") == 42.0
    assert age_midpoint("90+") == 92.5
    assert age_midpoint("M_40-44") == 42.0
    assert age_midpoint("37") == 37.0
    with pytest.raises(CohortError):
        age_midpoint("adult")


def test_describe_by_outcome(small_cohort, mini_taxonomy):
    table = describe_by_outcome(small_cohort, mini_taxonomy)
    assert list(table.columns) == ["no_outcome", "y1", "y2", "y3"]
    assert table.loc["N", "y2"] == 4
    assert table.loc["N", "no_outcome"] == 8
    # Outcome persons: p01 {I20-I25}, p03 {I10-I15}, p05 {}, p09 {I20-I25}
    assert table.loc["multimorbidity", "y2"] == pytest.approx(3 / 4)
    # p01 C09A, p03 A10B
    assert table.loc["polymedication", "y2"] == pytest.approx(2 / 4)
    assert table.loc["gender_male", "y2"] == pytest.approx(0.5)
    assert table.loc["status: pensioner", "y2"] == pytest.approx(3 / 4)
    assert np.isclose(table.loc["status: employee", "no_outcome"], 6 / 8)
