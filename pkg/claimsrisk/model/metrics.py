"""
Evaluation metrics: AUC, expected weight of evidence, log-likelihood, ROC, prevalence offset
"""
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.special import expit, logit
from scipy.stats import rankdata

from claimsrisk.data.models import EvaluationReport
from claimsrisk.errors import MetricError

CLAMP = 1e-12
OFFSET_BRACKET = 40.0
OFFSET_TOL = 1e-10


def _labels(labels, n: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=float)
    if labels.ndim != 1 or labels.size == 0:
        raise MetricError("labels must be a non-empty vector")
    if n is not None and labels.size != n:
        raise MetricError(f"{n} scores but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0/1")
    return labels


def _clamp(probs) -> np.ndarray:
    return np.clip(np.asarray(probs, dtype=float), CLAMP, 1.0 - CLAMP)


def auc(scores, labels) -> float:
    """
    Mann-Whitney AUC: share of concordant positive-negative pairs, ties 1/2.

    Computed from average ranks in O(n log n).
    """
    scores = np.asarray(scores, dtype=float)
    labels = _labels(labels, scores.size)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def expected_weight_of_evidence(probs, labels, prior: float, bits: bool = False) -> float:
    """
    Mean of w_i = (2 y_i - 1) [logit(p_i) - logit(prior)].

    Natural log by default; bits=True divides by ln 2.
    """
    if not 0.0 < prior < 1.0:
        raise MetricError(f"prior must lie in (0, 1), got {prior}")
    probs = _clamp(probs)
    labels = _labels(labels, probs.size)
    w = (2.0 * labels - 1.0) * (logit(probs) - logit(prior))
    value = float(w.mean())
    return value / math.log(2.0) if bits else value


def log_likelihood(probs, labels) -> float:
    """Binomial log-likelihood sum_i [y_i ln p_i + (1 - y_i) ln(1 - p_i)]"""
    probs = _clamp(probs)
    labels = _labels(labels, probs.size)
    return float(np.sum(labels * np.log(probs) + (1.0 - labels) * np.log1p(-probs)))


def prevalence_adjust(logits, target: float) -> Tuple[np.ndarray, float]:
    """
    Shift logits by the constant delta that makes the mean predicted
    probability equal the target prevalence.

    delta is searched in [-40, 40]; the mean is matched to 1e-10.
    """
    if not 0.0 < target < 1.0:
        raise MetricError(f"target prevalence must lie in (0, 1), got {target}")
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0 or not np.all(np.isfinite(logits)):
        raise MetricError("logits must be a non-empty finite vector")

    def gap(delta: float) -> float:
        return float(np.mean(expit(logits + delta))) - target

    if abs(gap(0.0)) <= OFFSET_TOL:
        return logits.copy(), 0.0
    lo, hi = gap(-OFFSET_BRACKET), gap(OFFSET_BRACKET)
    if lo > 0 or hi < 0:
        raise MetricError(
            f"target prevalence {target} unreachable within +/-{OFFSET_BRACKET} on the logit scale"
        )
    delta = brentq(gap, -OFFSET_BRACKET, OFFSET_BRACKET, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(gap(delta)) > OFFSET_TOL:
        raise MetricError(f"prevalence offset did not reach tolerance (gap {gap(delta):.3g})")
    return logits + delta, float(delta)


def roc_curve(scores, labels) -> List[Tuple[float, float, float]]:
    """
    ROC points (threshold, fpr, tpr) at every distinct score, descending,
    starting at (inf, 0, 0) and ending at (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    labels = _labels(labels, scores.size)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC curve needs both positive and negative labels")

    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1.0 - sorted_labels)
    # Last position of each distinct threshold
    last = np.r_[np.flatnonzero(np.diff(sorted_scores) != 0), sorted_scores.size - 1]
    points = [(math.inf, 0.0, 0.0)]
    points.extend(
        (float(sorted_scores[i]), float(fp[i] / n_neg), float(tp[i] / n_pos)) for i in last
    )
    return points


def roc_area(points: List[Tuple[float, float, float]]) -> float:
    """Trapezoid area under ROC points"""
    fpr = np.array([p[1] for p in points])
    tpr = np.array([p[2] for p in points])
    return float(trapezoid(tpr, fpr))


def evaluate(
    logits,
    labels,
    prior: Optional[float] = None,
    adjust: bool = True,
    bits: bool = False,
) -> EvaluationReport:
    """
    All three measures for one logit vector.

    prior defaults to the observed prevalence; with adjust=True the logits are
    first shifted to reproduce that prevalence on average.
    """
    logits = np.asarray(logits, dtype=float)
    labels = _labels(labels, logits.size)
    if prior is None:
        prior = float(labels.mean())
    offset = 0.0
    if adjust:
        logits, offset = prevalence_adjust(logits, prior)
    probs = expit(logits)
    return EvaluationReport(
        auc=auc(logits, labels),
        lambda_woe=expected_weight_of_evidence(probs, labels, prior, bits=bits),
        log_lik=log_likelihood(probs, labels),
        n=int(labels.size),
        n_pos=int(labels.sum()),
        prior=prior,
        units="bits" if bits else "nats",
        clamp=CLAMP,
        offset=offset,
    )
