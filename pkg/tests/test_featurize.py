import numpy as np
import pytest

from conftest import person
from claimsrisk.data.cohort import Cohort
from claimsrisk.data.models import CodeSystem, FeatureConfig, FeatureKind, GeneratorSpec
from claimsrisk.errors import FeatureError, UnknownCodeError
from claimsrisk.model.featurize import (
    INCIDENCE,
    apply_space,
    build_design,
    column_prevalence,
    expand_codes,
    load_design,
    save_design,
)
from claimsrisk.synth.generator import generate_taxonomy

CONFIG = FeatureConfig(categorical={"gender": None, "status": None}, include_incidence=False)


def active(space, design, i):
    """Column names set in row i"""
    return {space.columns[j].name for j in design.to_csc().getrow(i).nonzero()[1]}


def with_incidence(cohort, value=1.0):
    return Cohort([r.model_copy(update={"incidence": value + i}) for i, r in enumerate(cohort)])


def test_expansion_activates_ancestors(small_cohort, mini_taxonomy):
    space, design = build_design(small_cohort, mini_taxonomy, CONFIG)
    names = active(space, design, 0)
    assert {"ICD:IX", "ICD:I20-I25", "ICD:I25", "ICD:I25.2", "ICD:I25.22"} <= names
    assert {"ATC:C", "ATC:C09", "ATC:C09A", "ATC:C09AA", "ATC:C09AA05"} <= names
    assert not any(name.startswith("OPS:") for name in names)


def test_column_order_and_penalties(small_cohort, mini_taxonomy):
    config = CONFIG.model_copy(update={"include_incidence": True})
    space, design = build_design(with_incidence(small_cohort), mini_taxonomy, config)
    kinds = [c.kind for c in space.columns]
    n_cat = kinds.count(FeatureKind.CATEGORICAL_DUMMY)
    assert kinds[:n_cat] == [FeatureKind.CATEGORICAL_DUMMY] * n_cat
    assert kinds[-1] == FeatureKind.CONTINUOUS
    assert space.names[-1] == INCIDENCE

    codes = [c for c in space.columns if c.kind == FeatureKind.CODE_DUMMY]
    order = {s: i for i, s in enumerate(CodeSystem)}
    keys = [(order[c.system], c.level, c.code) for c in codes]
    assert keys == sorted(keys)
    assert all(c.penalty_factor == c.level for c in codes)

    pf = space.penalty_factors
    assert pf[-1] == 0.0
    assert np.all(pf[:n_cat] == 1.0)
    assert design.continuous[:, 0].tolist() == [1.0 + i for i in range(len(small_cohort))]


def test_reference_category_is_most_frequent(small_cohort, mini_taxonomy):
    space, _ = build_design(small_cohort, mini_taxonomy, CONFIG)
    # 6 M vs 6 F: tie goes to the smaller label; employee is most frequent status
    assert space.columns_for_feature("gender") == ["gender=M"]
    assert set(space.columns_for_feature("status")) == {"status=child", "status=pensioner"}

    configured = CONFIG.model_copy(update={"categorical": {"gender": "M", "status": "child"}})
    space, _ = build_design(small_cohort, mini_taxonomy, configured)
    assert space.columns_for_feature("gender") == ["gender=F"]
    assert set(space.columns_for_feature("status")) == {"status=employee", "status=pensioner"}

    with pytest.raises(FeatureError):
        build_design(small_cohort, mini_taxonomy, CONFIG.model_copy(update={"categorical": {"gender": "X"}}))
    with pytest.raises(FeatureError):
        build_design(small_cohort, mini_taxonomy, CONFIG.model_copy(update={"categorical": {"smoker": None}}))


def test_level_and_group_filters(small_cohort, mini_taxonomy):
    groups_only = CONFIG.model_copy(update={"min_level": 2, "max_level": 2})
    space, design = build_design(small_cohort, mini_taxonomy, groups_only)
    codes = [c for c in space.columns if c.kind == FeatureKind.CODE_DUMMY]
    assert {c.level for c in codes} == {2}
    j = space.position("ICD:I20-I25")
    assert design.rows(j).tolist() == [0, 6, 8]

    explicit = CONFIG.model_copy(update={"groups": [(CodeSystem.ICD, "I25"), (CodeSystem.OPS, "8-98")]})
    space, _ = build_design(small_cohort, mini_taxonomy, explicit)
    assert {c.name for c in space.columns if c.kind == FeatureKind.CODE_DUMMY} == {"ICD:I25", "OPS:8-98"}

    icd_only = CONFIG.model_copy(update={"systems": [CodeSystem.ICD]})
    space, _ = build_design(small_cohort, mini_taxonomy, icd_only)
    assert all(c.system == CodeSystem.ICD for c in space.columns if c.kind == FeatureKind.CODE_DUMMY)


def test_unknown_codes(small_cohort, mini_taxonomy):
    cohort = Cohort(list(small_cohort) + [person("p13", [("ICD", "Z99.9")], gender="F", status="child")])
    with pytest.raises(UnknownCodeError):
        build_design(cohort, mini_taxonomy, CONFIG)
    space, design = build_design(cohort, mini_taxonomy, CONFIG.model_copy(update={"unknown_codes": "skip"}))
    assert design.n_rows == 13
    assert "ICD:Z99.9" not in space


def test_missing_incidence_fails(small_cohort, mini_taxonomy):
    with pytest.raises(FeatureError):
        build_design(small_cohort, mini_taxonomy, CONFIG.model_copy(update={"include_incidence": True}))


def test_expand_codes_idempotent(mini_taxonomy):
    once = expand_codes(mini_taxonomy, [("ICD", "I25.22"), ("ATC", "A10BA02")])
    twice = expand_codes(mini_taxonomy, once)
    assert once == twice
    assert len(once) == 10
    assert expand_codes(mini_taxonomy, [("ICD", "nope")], unknown="skip") == set()


@pytest.mark.parametrize("branching", [[2, 2, 2, 2, 2], [3, 1, 2, 1, 2], [1, 4, 1, 3, 1]])
def test_child_rows_within_parent_rows(branching):
    spec = GeneratorSpec(shapes={CodeSystem.ICD: branching, CodeSystem.OPS: [2, 2, 1, 2]})
    taxonomy = generate_taxonomy(spec, 0)
    leaves = [n.key for n in taxonomy if not taxonomy.children(*n.key)]
    rng = np.random.default_rng(len(leaves))
    records = []
    for i in range(60):
        picks = rng.choice(len(leaves), size=rng.integers(0, 4), replace=False)
        records.append(person(f"r{i}", [(leaves[k][0].value, leaves[k][1]) for k in picks], gender="F"))
    cohort = Cohort(records)
    space, design = build_design(cohort, taxonomy, FeatureConfig(include_incidence=False))
    for column in space.columns:
        node = taxonomy.get(column.system, column.code)
        if node.parent is None:
            continue
        child_rows = set(design.rows(space.position(column.name)).tolist())
        parent_rows = set(design.rows(space.code_position(node.system, node.parent)).tolist())
        assert child_rows <= parent_rows
    for i, record in enumerate(cohort):
        expanded = expand_codes(taxonomy, record.codes)
        assert active(space, design, i) == {f"{s.value}:{c}" for s, c in expanded}


def test_apply_space_frozen(small_cohort, mini_taxonomy):
    space, design = build_design(small_cohort, mini_taxonomy, CONFIG)
    same = apply_space(small_cohort, mini_taxonomy, space, CONFIG)
    assert (same.to_csc() != design.to_csc()).nnz == 0

    new = Cohort([
        person("n1", [("ICD", "I25.22"), ("ICD", "Z99.9")], gender="D", status="pensioner"),
        person("n2", [("ICD", "E11.9")], gender="M", status="student"),
    ])
    frozen = apply_space(new, mini_taxonomy, space, CONFIG)
    assert frozen.shape == (2, len(space))
    n1 = {space.columns[j].name for j in frozen.to_csc().getrow(0).nonzero()[1]}
    assert "ICD:I25.22" in n1 and "status=pensioner" in n1
    assert not any(name.startswith("gender=") for name in n1)
    n2 = {space.columns[j].name for j in frozen.to_csc().getrow(1).nonzero()[1]}
    # E11.9 columns exist from p06/p11; no status dummy for an unseen category
    assert "ICD:E11.9" in n2 and "gender=M" in n2
    assert not any(name.startswith("status=") for name in n2)


def test_column_prevalence(small_cohort, mini_taxonomy):
    space, design = build_design(small_cohort, mini_taxonomy, CONFIG)
    prevalence = column_prevalence(design, space)
    assert prevalence[space.position("ICD:IX")] == 5
    assert prevalence[space.position("ATC:A10BA02")] == 2
    assert prevalence[space.position("gender=M")] == 6


def test_design_cache(tmp_path, small_cohort, mini_taxonomy):
    config = CONFIG.model_copy(update={"include_incidence": True})
    space, design = build_design(with_incidence(small_cohort, 0.5), mini_taxonomy, config)
    target = tmp_path / "design.npz"
    save_design(target, space, design)
    loaded_space, loaded = load_design(target)
    assert loaded_space.columns == space.columns
    assert (loaded.binary != design.binary).nnz == 0
    assert np.array_equal(loaded.continuous, design.continuous)

    bogus = tmp_path / "bogus.npz"
    np.savez(bogus, magic=np.array("SOMETHING-ELSE"))
    with pytest.raises(FeatureError):
        load_design(bogus)
