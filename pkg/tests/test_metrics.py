import math

import numpy as np
import pytest
from scipy.special import expit

from claimsrisk.errors import MetricError
from claimsrisk.model.metrics import (
    CLAMP,
    auc,
    evaluate,
    expected_weight_of_evidence,
    log_likelihood,
    prevalence_adjust,
    roc_area,
    roc_curve,
)


def brute_force_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_auc_matches_pair_count(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = (rng.random(n) < 0.4).astype(float)
        labels[0], labels[1] = 1.0, 0.0
        # Coarse scores so that ties occur
        scores = rng.integers(0, 6, size=n).astype(float)
        assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def test_auc_edges():
    assert auc([0.1, 0.9], [0, 1]) == 1.0
    assert auc([0.9, 0.1], [0, 1]) == 0.0
    assert auc([0.5, 0.5, 0.5], [0, 1, 0]) == 0.5
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 0, 1])
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [2, 0])


def test_roc_area_equals_auc(rng):
    for _ in range(200):
        n = int(rng.integers(4, 60))
        labels = (rng.random(n) < 0.5).astype(float)
        labels[:2] = [1.0, 0.0]
        scores = np.round(rng.standard_normal(n), 1)
        points = roc_curve(scores, labels)
        assert points[0] == (math.inf, 0.0, 0.0)
        assert points[-1][1:] == (1.0, 1.0)
        assert roc_area(points) == pytest.approx(auc(scores, labels), abs=1e-12)


def test_weight_of_evidence_at_prior_is_zero():
    labels = np.array([1, 0, 0, 1, 0])
    assert expected_weight_of_evidence(np.full(5, 0.3), labels, 0.3) == pytest.approx(0.0, abs=1e-15)


def test_weight_of_evidence_example():
    # Prior 0.1, each person assigned 0.5 if positive: ln 9 per positive
    labels = np.array([1, 1])
    value = expected_weight_of_evidence([0.5, 0.5], labels, prior=0.1)
    assert value == pytest.approx(math.log(9))
    assert expected_weight_of_evidence([0.5, 0.5], labels, 0.1, bits=True) == pytest.approx(math.log2(9))
    # A negative at 0.5 loses the same amount
    assert expected_weight_of_evidence([0.5], [0], 0.1) == pytest.approx(-math.log(9))
    with pytest.raises(MetricError):
        expected_weight_of_evidence([0.5], [1], 0.0)


def test_log_likelihood_clamps():
    assert log_likelihood([0.5, 0.5], [1, 0]) == pytest.approx(2 * math.log(0.5))
    assert log_likelihood([1.0, 0.0], [1, 0]) == pytest.approx(0.0, abs=1e-10)
    clamped = log_likelihood([0.0], [1])
    assert np.isfinite(clamped)
    assert clamped == pytest.approx(math.log(CLAMP))


def test_prevalence_adjust(rng):
    for target in (0.001, 0.05, 0.3, 0.9):
        logits = rng.normal(-2.0, 1.5, size=500)
        adjusted, delta = prevalence_adjust(logits, target)
        assert np.mean(expit(adjusted)) == pytest.approx(target, abs=1e-8)
        np.testing.assert_allclose(adjusted - logits, delta)
        labels = (rng.random(500) < 0.2).astype(float)
        labels[:2] = [1, 0]
        assert auc(adjusted, labels) == auc(logits, labels)


def test_prevalence_adjust_shortcut_and_errors():
    logits = np.zeros(4)
    adjusted, delta = prevalence_adjust(logits, 0.5)
    assert delta == 0.0
    assert np.array_equal(adjusted, logits)
    with pytest.raises(MetricError):
        prevalence_adjust(np.full(3, 60.0), 1e-30)
    with pytest.raises(MetricError):
        prevalence_adjust(logits, 1.0)
    with pytest.raises(MetricError):
        prevalence_adjust([np.nan], 0.5)


def test_evaluate_report(rng):
    logits = rng.normal(-1, 1, size=300)
    labels = (rng.random(300) < expit(logits)).astype(float)
    report = evaluate(logits, labels)
    assert report.n == 300
    assert report.n_pos == int(labels.sum())
    assert report.prior == pytest.approx(labels.mean())
    adjusted, delta = prevalence_adjust(logits, labels.mean())
    assert report.offset == pytest.approx(delta)
    assert report.log_lik == pytest.approx(log_likelihood(expit(adjusted), labels))
    assert report.auc == pytest.approx(auc(logits, labels), abs=1e-12)
    assert report.units == "nats"

    in_bits = evaluate(logits, labels, bits=True)
    assert in_bits.lambda_woe == pytest.approx(report.lambda_woe / math.log(2))
    assert in_bits.units == "bits"

    raw = evaluate(logits, labels, prior=0.2, adjust=False)
    assert raw.offset == 0.0
    assert raw.lambda_woe == pytest.approx(expected_weight_of_evidence(expit(logits), labels, 0.2))
