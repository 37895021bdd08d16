"""
Shared fixtures: fixture taxonomy, record builders, toy solver instances, small synthetic cohorts
"""
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from claimsrisk.data.cohort import Cohort
from claimsrisk.data.models import CodeSystem, FeatureConfig, GeneratorSpec, PersonRecord
from claimsrisk.data.taxonomy import load_taxonomy
from claimsrisk.model.cv import cv_select_lambda, make_folds
from claimsrisk.model.featurize import build_design
from claimsrisk.model.solver import lambda_grid, lambda_max
from claimsrisk.synth.generator import generate_cohort, generate_taxonomy

FIXTURES = Path(__file__).parent.parent / "fixtures"


def person(pid, codes=(), y=0, **categorical):
    """Person with outcome y on all three levels and the given codes"""
    return PersonRecord(
        id=pid,
        categorical=categorical,
        region="R1",
        codes=[(CodeSystem(s), c) for s, c in codes],
        y1=y,
        y2=y,
        y3=y,
    )


def toy_problem(rng, n=None, p=None, n_free=0):
    """
    Random logistic problem: binary penalized columns plus n_free Gaussian
    unpenalized columns at the end.
    """
    n = n if n is not None else int(rng.integers(30, 51))
    p = p if p is not None else int(rng.integers(2, 11))
    n_free = min(n_free, p - 1)
    binary = (rng.random((n, p - n_free)) < rng.uniform(0.2, 0.6)).astype(float)
    free = rng.standard_normal((n, n_free))
    X = np.hstack([binary, free])
    eta = X @ rng.normal(0, 1, size=p)
    y = (rng.random(n) < expit(eta - eta.mean())).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    pf = np.concatenate([rng.integers(1, 6, size=p - n_free), np.zeros(n_free)]).astype(float)
    return X, y, pf


@pytest.fixture(scope="session")
def mini_taxonomy_path():
    return FIXTURES / "mini_taxonomy.tsv"


@pytest.fixture(scope="session")
def mini_taxonomy(mini_taxonomy_path):
    return load_taxonomy(mini_taxonomy_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cohort():
    """Twelve persons over the mini taxonomy, four with the outcome"""
    return Cohort([
        person("p01", [("ICD", "I25.22"), ("ATC", "C09AA05")], 1, gender="M", status="pensioner"),
        person("p02", [("ICD", "I10.00")], 0, gender="F", status="employee"),
        person("p03", [("ICD", "I10.01"), ("ATC", "A10BA02")], 1, gender="M", status="pensioner"),
        person("p04", [], 0, gender="F", status="employee"),
        person("p05", [("OPS", "8-98f.1")], 1, gender="F", status="pensioner"),
        person("p06", [("ICD", "E11.90")], 0, gender="M", status="employee"),
        person("p07", [("ICD", "I21.0")], 0, gender="F", status="child"),
        person("p08", [("ATC", "C09AA05")], 0, gender="M", status="employee"),
        person("p09", [("ICD", "I25.22"), ("ICD", "I25.2")], 1, gender="F", status="employee"),
        person("p10", [("OPS", "5-010.0")], 0, gender="M", status="child"),
        person("p11", [("ICD", "E11.91"), ("ATC", "A10BA02")], 0, gender="F", status="employee"),
        person("p12", [], 0, gender="M", status="employee"),
    ])


@pytest.fixture(scope="session")
def synth_spec():
    return GeneratorSpec(
        shapes={CodeSystem.ICD: [2, 2, 2, 2, 2], CodeSystem.ATC: [2, 2, 1, 1, 2]},
        n_persons=4000,
        leaf_prevalence=0.06,
        intercept=math.log(0.05 / 0.95),
        age_effect=0.02,
        planted={
            "ICD:D1.1": 0.9,
            "ICD:D2.1.1.1.2": 1.2,
            "ATC:A1.2": 0.7,
            "nursing_home=1": 1.0,
        },
        shard_size=1500,
        seed=7,
    )


@pytest.fixture(scope="session")
def synth_data(synth_spec):
    taxonomy = generate_taxonomy(synth_spec, synth_spec.seed)
    cohort, truth = generate_cohort(taxonomy, synth_spec, synth_spec.seed)
    return taxonomy, cohort, truth


@pytest.fixture(scope="session")
def synth_config():
    return FeatureConfig(
        name="synth",
        categorical={"age_group": None, "gender": None, "nursing_home": "0", "status": None},
        include_incidence=False,
    )


@pytest.fixture(scope="session")
def synth_design(synth_data, synth_config):
    taxonomy, cohort, _ = synth_data
    space, design = build_design(cohort, taxonomy, synth_config)
    return space, design, cohort.outcome("y2")


@pytest.fixture(scope="session")
def synth_cv(synth_design):
    """Three-fold selection over a short grid on the synthetic cohort"""
    space, design, y = synth_design
    pf = space.penalty_factors
    lambdas = lambda_grid(lambda_max(design, y, pf), n=6, ratio=0.02)
    folds = make_folds(y, 3, seed=11)
    return cv_select_lambda(design, y, pf, lambdas, folds)
