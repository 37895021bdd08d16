import math

import pandas as pd
import pytest

from conftest import person
from claimsrisk.data.cohort import Cohort
from claimsrisk.data.models import CodeSystem, FeatureConfig, GroupSummary, LassoFit
from claimsrisk.errors import FeatureError
from claimsrisk.model.aggregate import (
    EFFECT_COLUMNS,
    GROUP_COLUMNS,
    export_coefficients,
    group_logor,
    group_summaries,
    groups_frame,
    nonzero_summary,
    population_importance,
    top_risk_factors,
    total_code_effect,
)
from claimsrisk.model.featurize import build_design

COEFFICIENTS = {
    "gender=M": 0.25,
    "ICD:IX": 0.1,
    "ICD:I10-I15": 0.3,
    "ICD:I10": 0.2,
    "ICD:I10.00": 0.4,
    "ICD:I20-I25": 0.05,
    "ICD:I25.2": 0.2,
    "ICD:I25.22": 0.15,
}


def hand_fit(space, coefficients):
    positions = {space.position(name): value for name, value in coefficients.items()}
    return LassoFit(
        intercept=-2.0, coefficients=positions, n_features=len(space), lam=0.01, n_nonzero=len(positions)
    )


def make_cohort():
    codes = [[("ICD", "I10.00")]] * 100 + [[("ICD", "I10.01")]] * 300 + [[("ICD", "I25.22")]] * 50 + [[]] * 50
    return Cohort([
        person(f"q{i:03d}", c, gender="M" if i % 2 else "F") for i, c in enumerate(codes)
    ])


@pytest.fixture
def weighted(mini_taxonomy):
    config = FeatureConfig(categorical={"gender": None}, include_incidence=False)
    space, design = build_design(make_cohort(), mini_taxonomy, config)
    return space, design, hand_fit(space, COEFFICIENTS)


def test_total_effect_sums_the_chain(weighted, mini_taxonomy):
    space, _, fit = weighted
    effect = total_code_effect(fit, space, mini_taxonomy, "ICD", "I25.22")
    assert effect.total_logor == pytest.approx(0.1 + 0.05 + 0.0 + 0.2 + 0.15)
    assert effect.total_logor == pytest.approx(0.5)
    assert effect.own_coef == 0.15
    assert effect.total_or == pytest.approx(math.exp(0.5))
    assert effect.level == 5
    # Not in the space: inherits its ancestors' coefficients
    unseen = total_code_effect(fit, space, mini_taxonomy, "ICD", "I21.0")
    assert unseen.own_coef == 0.0
    assert unseen.total_logor == pytest.approx(0.15)
    assert unseen.prevalence == 0


def test_group_logor_is_prevalence_weighted(weighted, mini_taxonomy):
    space, design, fit = weighted
    summary = group_logor(fit, space, mini_taxonomy, design, "ICD", "I10-I15")
    # I10.00: 0.1 + 0.3 + 0.2 + 0 + 0.4 = 1.0 on 100 persons; I10.01: 0.6 on 300
    assert summary.group_logor == pytest.approx(0.7)
    assert summary.group_size == 400


def test_group_size_without_group_column(mini_taxonomy):
    config = FeatureConfig(min_level=3, include_incidence=False)
    space, design = build_design(make_cohort(), mini_taxonomy, config)
    fit = hand_fit(space, {"ICD:I10.00": 0.5})
    summary = group_logor(fit, space, mini_taxonomy, design, "ICD", "I10-I15")
    assert summary.group_size == 400
    assert summary.group_logor == pytest.approx(0.5 * 100 / 400)


def test_group_logor_errors(weighted, mini_taxonomy):
    space, design, fit = weighted
    with pytest.raises(FeatureError):
        group_logor(fit, space, mini_taxonomy, design, "ICD", "I10")
    with pytest.raises(FeatureError):
        group_logor(fit, space, mini_taxonomy, design, "ICD", "E10-E14")


def test_population_importance_orders_by_burden():
    groups = [
        GroupSummary(system=CodeSystem.ICD, group="A", group_logor=1.0, group_size=50),
        GroupSummary(system=CodeSystem.ICD, group="B", group_logor=0.2, group_size=1000),
    ]
    ranked = population_importance(groups)
    assert [g.group for g in ranked] == ["B", "A"]
    assert [g.importance for g in ranked] == pytest.approx([200.0, 50.0])
    assert [g.rank for g in ranked] == [1, 2]


def test_population_importance_ties():
    groups = [
        GroupSummary(system=CodeSystem.OPS, group="Z", group_logor=0.5, group_size=10),
        GroupSummary(system=CodeSystem.ICD, group="M", group_logor=0.5, group_size=10),
        GroupSummary(system=CodeSystem.ATC, group="M", group_logor=1.0, group_size=5),
    ]
    ranked = population_importance(groups)
    assert [(g.system.value, g.group) for g in ranked] == [("ATC", "M"), ("ICD", "M"), ("OPS", "Z")]
    assert population_importance([]) == []


def test_group_summaries_and_csv_ranking(tmp_path, weighted, mini_taxonomy):
    space, design, fit = weighted
    groups = group_summaries(fit, space, mini_taxonomy, design)
    assert [(g.group, g.rank) for g in groups] == [("I10-I15", 1), ("I20-I25", 2)]
    assert groups[1].group_logor == pytest.approx(0.5)
    assert groups[1].group_size == 50
    assert group_summaries(fit, space, mini_taxonomy, design, systems=[CodeSystem.ATC]) == []

    target = tmp_path / "groups.csv"
    groups_frame(groups).to_csv(target, index=False)
    table = pd.read_csv(target)
    assert list(table.columns) == GROUP_COLUMNS
    recomputed = (table["logor"] * table["size"]).rank(ascending=False, method="first").astype(int)
    assert recomputed.tolist() == table["rank"].tolist()
    assert table["importance"].tolist() == pytest.approx((table["logor"] * table["size"]).tolist())


def test_export_coefficients(weighted, mini_taxonomy):
    space, design, fit = weighted
    effects = export_coefficients(fit, space, mini_taxonomy, design, min_group_size=60)
    assert list(effects.columns) == EFFECT_COLUMNS

    first = effects.iloc[0]
    assert first["code"] == "gender=M"
    assert first["system"] is None
    assert pd.isna(first["level"])
    assert first["total_or"] == pytest.approx(math.exp(0.25))
    assert first["prevalence"] == 250

    by_code = effects.set_index("code")
    assert by_code.loc["I25.22", "total_logor"] == pytest.approx(0.5)
    assert by_code.loc["I10.01", "total_logor"] == pytest.approx(0.6)
    assert by_code.loc["I10.00", "prevalence"] == 100
    assert bool(by_code.loc["I25.22", "below_min_size"])
    assert not bool(by_code.loc["I10.01", "below_min_size"])

    # Codes outside the space appear only with a nonzero total
    assert by_code.loc["I21.0", "coef"] == 0.0
    assert by_code.loc["I21.0", "total_logor"] == pytest.approx(0.15)
    assert "E11.90" not in by_code.index
    assert "C09AA05" not in by_code.index
    assert len(effects) == len(space) + 2


def test_export_rejects_mismatched_fit(weighted, mini_taxonomy):
    space, design, _ = weighted
    wrong = LassoFit(intercept=0.0, n_features=len(space) + 1, lam=0.1)
    with pytest.raises(FeatureError):
        export_coefficients(wrong, space, mini_taxonomy, design)


def test_nonzero_summary(weighted):
    space, _, fit = weighted
    summary = nonzero_summary(fit, space)
    assert summary["nonzero"] == len(COEFFICIENTS)
    assert summary["columns"] == len(space)
    assert summary["by_kind"] == {"code_dummy": 7, "categorical_dummy": 1, "continuous": 0}
    # ICD level 1: only IX is observed
    assert summary["by_level"]["ICD:1"] == {"columns": 1, "nonzero": 1, "share": 1.0}
    # Level 5: I10.00, I10.01, I25.22
    assert summary["by_level"]["ICD:5"]["columns"] == 3
    assert summary["by_level"]["ICD:5"]["nonzero"] == 2


def test_top_risk_factors(weighted, mini_taxonomy):
    space, design, fit = weighted
    effects = export_coefficients(fit, space, mini_taxonomy, design)
    top = top_risk_factors(effects, min_group_size=60, k=3)
    # Ties at 0.6 resolve by code
    assert top["code"].tolist() == ["I10.00", "I10", "I10.0"]
    assert (top["prevalence"] >= 60).all()
    assert top_risk_factors(effects, min_group_size=10_000).empty
