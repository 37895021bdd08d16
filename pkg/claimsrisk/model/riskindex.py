"""
Cross-fitted risk indices with coefficient cancellation, and age profiles
conditional on the index (natural cubic splines per gender)
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from claimsrisk.data.cohort import Cohort, age_midpoint
from claimsrisk.data.models import FeatureKind, SplineProfile
from claimsrisk.errors import FeatureError, SeparationError, SolverError
from claimsrisk.model.cv import CvResult, FoldAssignment
from claimsrisk.model.featurize import FeatureSpace, categorical_column_name
from claimsrisk.model.solver import Design, as_csc, predict_logit

logger = logging.getLogger(__name__)

KNOT_QUANTILES = (0.05, 0.275, 0.5, 0.725, 0.95)


@dataclass(frozen=True)
class RiskIndex:
    """Out-of-fold logit scores with some coefficients cancelled"""
    scores: np.ndarray
    folds: FoldAssignment
    cancelled: FrozenSet[str]
    lam: float
    # Categorical features that still contribute to the scores
    active_features: FrozenSet[str] = frozenset()


def build_risk_index(
    cvresult: CvResult,
    design: Design,
    space: FeatureSpace,
    cancel: Iterable[str] = (),
) -> RiskIndex:
    """
    Score every row with its fold model after zeroing the cancelled columns.

    Intercepts are kept, so cancelling every column leaves the per-fold
    intercept as each row's score.
    """
    cancel = frozenset(cancel)
    unknown = sorted(c for c in cancel if c not in space)
    if unknown:
        raise FeatureError(f"cannot cancel unknown column(s): {', '.join(unknown)}")
    positions = {space.position(name) for name in cancel}

    X = as_csc(design)
    if X.shape[0] != cvresult.folds.fold_of.shape[0]:
        raise FeatureError(f"design has {X.shape[0]} rows, folds cover {cvresult.folds.fold_of.shape[0]}")
    scores = np.empty(X.shape[0])
    for fold in range(cvresult.folds.k):
        model = cvresult.fold_model(fold)
        if positions:
            kept = {j: b for j, b in model.coefficients.items() if j not in positions}
            model = model.model_copy(update={"coefficients": kept, "n_nonzero": len(kept)})
        rows = cvresult.folds.rows(fold)
        scores[rows] = predict_logit(model, X[rows])

    active = frozenset(
        c.feature for c in space.columns
        if c.kind == FeatureKind.CATEGORICAL_DUMMY and c.name not in cancel
    )
    logger.info("Built risk index over %d rows with %d cancelled columns", len(scores), len(cancel))
    return RiskIndex(
        scores=scores,
        folds=cvresult.folds,
        cancelled=cancel,
        lam=cvresult.selected_lambda,
        active_features=active,
    )


def cancel_feature_columns(space: FeatureSpace, features: Iterable[str]) -> List[str]:
    """Names of all dummies of the given categorical features"""
    return [name for feature in features for name in space.columns_for_feature(feature)]


def _check_knots(knots) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 4:
        raise FeatureError(f"natural cubic spline needs at least 4 knots, got {knots.size}")
    if np.any(np.diff(knots) <= 0):
        raise FeatureError("knots must be strictly ascending")
    return knots


def natural_cubic_basis(ages, knots, include_intercept: bool = False) -> np.ndarray:
    """
    Natural cubic spline basis, linear beyond the boundary knots.

    Truncated-power form on ages rescaled to [0, 1] over the knot range:
    columns x and d_k - d_{K-1} for k = 1..K-2, where
    d_k = ((x - t_k)_+^3 - (x - t_K)_+^3) / (t_K - t_k).
    With include_intercept a leading column of ones is added (K columns in total).
    """
    knots = _check_knots(knots)
    lo, span = knots[0], knots[-1] - knots[0]
    x = (np.asarray(ages, dtype=float) - lo) / span
    t = (knots - lo) / span

    def d(k: int) -> np.ndarray:
        return (np.maximum(x - t[k], 0.0) ** 3 - np.maximum(x - t[-1], 0.0) ** 3) / (t[-1] - t[k])

    last = d(t.size - 2)
    columns = [x] + [d(k) - last for k in range(t.size - 2)]
    if include_intercept:
        columns.insert(0, np.ones_like(x))
    return np.column_stack(columns)


def default_knots(ages) -> np.ndarray:
    """Age quantiles at 5/27.5/50/72.5/95%, or 5 evenly spaced knots when they collide"""
    ages = np.asarray(ages, dtype=float)
    if ages.size == 0 or ages.min() == ages.max():
        raise FeatureError("ages need at least two distinct values to place knots")
    knots = np.unique(np.quantile(ages, KNOT_QUANTILES))
    if knots.size < len(KNOT_QUANTILES):
        knots = np.linspace(ages.min(), ages.max(), len(KNOT_QUANTILES))
    return knots


def _newton_logistic(Z: np.ndarray, y: np.ndarray, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Unpenalized logistic regression by Newton steps with step halving"""
    beta = np.zeros(Z.shape[1])
    mean = y.mean()
    beta[0] = math.log(mean / (1 - mean))

    def deviance(b: np.ndarray) -> float:
        eta = Z @ b
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))

    current = deviance(beta)
    for _ in range(max_iter):
        p = expit(Z @ beta)
        w = p * (1 - p)
        hessian = Z.T @ (Z * w[:, None])
        gradient = Z.T @ (y - p)
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as e:
            raise SeparationError("profile design is singular or separable") from e
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            value = deviance(candidate)
            if value <= current + 1e-12 * max(1.0, current):
                break
            scale /= 2
        else:
            raise SolverError("profile fit found no descent step")
        beta = candidate
        improvement = current - value
        current = value
        if np.max(np.abs(scale * step)) < tol or improvement <= tol * max(1.0, current):
            break
    else:
        raise SolverError(f"profile fit did not converge in {max_iter} Newton steps")
    if np.max(np.abs(beta)) > 1e3:
        raise SeparationError("profile coefficients diverge; the outcome is separable")
    return beta


class ProfilePair(NamedTuple):
    conditional: SplineProfile
    unconditional: SplineProfile


def _fit_gender(
    gender: str,
    ages: np.ndarray,
    y: np.ndarray,
    index: np.ndarray,
    covariates: Dict[str, np.ndarray],
    knots: np.ndarray,
) -> ProfilePair:
    basis = natural_cubic_basis(ages, knots, include_intercept=True)
    names = sorted(name for name, values in covariates.items() if values.any() and not values.all())
    extra = np.column_stack([covariates[n] for n in names]) if names else np.empty((len(y), 0))
    n_spline = basis.shape[1]

    def profile(beta: np.ndarray, conditional: bool, index_coef: float, index_mean: float) -> SplineProfile:
        return SplineProfile(
            gender=gender,
            knots=knots.tolist(),
            intercept=float(beta[0]),
            coefficients=beta[1:n_spline].tolist(),
            index_coef=index_coef,
            index_mean=index_mean,
            covariate_coefs={n: float(b) for n, b in zip(names, beta[n_spline:n_spline + len(names)])},
            conditional=conditional,
        )

    unconditional = _newton_logistic(np.hstack([basis, extra]), y)
    index_mean = float(index.mean())
    centred = index - index_mean
    if np.ptp(centred) == 0:
        conditional_beta, index_coef = unconditional, 0.0
    else:
        conditional_beta = _newton_logistic(np.hstack([basis, extra, centred[:, None]]), y)
        index_coef = float(conditional_beta[-1])
    return ProfilePair(
        conditional=profile(conditional_beta, True, index_coef, index_mean),
        unconditional=profile(unconditional, False, 0.0, 0.0),
    )


def fit_conditional_profile(
    cohort: Cohort,
    index: RiskIndex,
    outcome: str = "y2",
    age_feature: str = "age_group",
    gender_feature: str = "gender",
    knots: Optional[Sequence[float]] = None,
    covariates: Optional[Dict[str, Sequence[str]]] = None,
    n_jobs: int = 1,
) -> Dict[str, ProfilePair]:
    """
    Per-gender age profiles with and without the risk index.

    Both variants regress the outcome on an intercept, a natural cubic spline
    of age and optional dummy covariates (feature -> categories, e.g. status
    pensioner/child); the conditional variant adds the centred index with a
    single linear coefficient. Ages are the midpoints of the age-group labels.
    """
    if len(cohort) != index.scores.shape[0]:
        raise FeatureError(f"cohort has {len(cohort)} persons, index {index.scores.shape[0]} scores")
    leaking = {age_feature, gender_feature} & index.active_features
    if leaking:
        logger.warning(
            "Risk index still contains %s; cancel these columns for a conditional profile",
            ", ".join(sorted(leaking)),
        )

    labels = {}
    ages = np.empty(len(cohort))
    genders = []
    for i, record in enumerate(cohort):
        label = record.categorical.get(age_feature)
        if label is None:
            raise FeatureError(f"person '{record.id}' has no '{age_feature}'")
        if label not in labels:
            labels[label] = age_midpoint(label)
        ages[i] = labels[label]
        genders.append(record.categorical.get(gender_feature))
    genders = np.array(genders, dtype=object)
    y = cohort.outcome(outcome)

    dummies = {
        categorical_column_name(feature, category): np.array(
            [r.categorical.get(feature) == category for r in cohort], dtype=float
        )
        for feature, categories in (covariates or {}).items()
        for category in categories
    }

    groups = sorted(g for g in set(genders) if g is not None)
    jobs = []
    for gender in groups:
        rows = genders == gender
        gender_knots = _check_knots(knots) if knots is not None else default_knots(ages[rows])
        jobs.append(delayed(_fit_gender)(
            gender, ages[rows], y[rows], index.scores[rows],
            {n: v[rows] for n, v in dummies.items()}, gender_knots,
        ))
    pairs = Parallel(n_jobs=n_jobs, prefer="threads")(jobs)
    for gender, pair in zip(groups, pairs):
        logger.info(
            "Profile %s: index coefficient %.4f", gender, pair.conditional.index_coef
        )
    return dict(zip(groups, pairs))


def evaluate_profile(profile: SplineProfile, ages) -> np.ndarray:
    """Profile logit at the given ages, index at its mean and covariates at reference"""
    basis = natural_cubic_basis(ages, profile.knots)
    return profile.intercept + basis @ np.asarray(profile.coefficients)


def profile_table(profiles: Dict[str, ProfilePair], n_points: int = 50) -> pd.DataFrame:
    """gender, age, logit_conditional, logit_unconditional over each gender's knot range"""
    frames = []
    for gender, pair in sorted(profiles.items()):
        grid = np.linspace(pair.conditional.knots[0], pair.conditional.knots[-1], n_points)
        frames.append(pd.DataFrame({
            "gender": gender,
            "age": grid,
            "logit_conditional": evaluate_profile(pair.conditional, grid),
            "logit_unconditional": evaluate_profile(pair.unconditional, grid),
        }))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["gender", "age", "logit_conditional", "logit_unconditional"]
    )


def score_distribution(scores, group_labels, bins=20) -> pd.DataFrame:
    """
    Histogram of logit scores per group on shared bin edges.

    Args:
        scores: Logit scores
        group_labels: One label per score
        bins: Number of bins or explicit edges
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(group_labels, dtype=object)
    if labels.shape[0] != scores.shape[0]:
        raise FeatureError(f"{scores.shape[0]} scores but {labels.shape[0]} group labels")
    edges = np.histogram_bin_edges(scores, bins=bins)
    rows = []
    for group in sorted(set(labels.tolist()), key=str):
        counts, _ = np.histogram(scores[labels == group], bins=edges)
        rows.extend(
            {"group": group, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        )
    return pd.DataFrame(rows, columns=["group", "bin_lo", "bin_hi", "count"])


def top_scorer_share(scores, condition=None, fraction: float = 0.05) -> Dict[str, float]:
    """
    Threshold of the top fraction of scores and the share of top scorers
    meeting a boolean condition.
    """
    scores = np.asarray(scores, dtype=float)
    if not 0 < fraction <= 1:
        raise FeatureError(f"fraction must lie in (0, 1], got {fraction}")
    n_top = max(1, int(math.ceil(fraction * scores.size)))
    order = np.argsort(-scores, kind="mergesort")[:n_top]
    threshold = float(scores[order[-1]])
    result = {
        "fraction": fraction,
        "n_top": n_top,
        "threshold_logit": threshold,
        "threshold_prob": float(expit(threshold)),
    }
    if condition is not None:
        condition = np.asarray(condition, dtype=bool)
        result["share"] = float(condition[order].mean())
    return result
