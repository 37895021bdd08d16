"""
Stratified K-fold cross-validation: shrinkage selection by AUC and out-of-fold scores
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from claimsrisk.data.models import LambdaPath, LassoFit, SolverOptions
from claimsrisk.errors import ClaimsRiskError, CvError, SolverError
from claimsrisk.model.metrics import auc
from claimsrisk.model.solver import Design, Trace, as_csc, fit_path, predict_logit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldAssignment:
    """Fold id per row"""
    k: int
    fold_of: np.ndarray
    seed: int

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


@dataclass
class CvResult:
    lambdas: np.ndarray
    per_fold_auc: np.ndarray          # folds x lambdas
    mean_auc: np.ndarray
    selected_index: int
    fold_fits: List[LambdaPath]
    folds: FoldAssignment
    oof_logit: np.ndarray             # at the selected lambda
    oof_path_logit: np.ndarray        # rows x lambdas, every row scored by its fold model

    @property
    def selected_lambda(self) -> float:
        return float(self.lambdas[self.selected_index])

    def fold_model(self, fold: int) -> LassoFit:
        """Model of one fold at the selected lambda"""
        return self.fold_fits[fold].fits[self.selected_index]


def make_folds(y, k: int, seed: int) -> FoldAssignment:
    """
    Stratified fold assignment.

    Positives and negatives are shuffled separately and dealt round-robin,
    so per-fold class counts differ by at most one.
    """
    y = np.asarray(y)
    if k < 2:
        raise CvError(-1, f"need at least 2 folds, got {k}")
    positives = np.flatnonzero(y == 1)
    negatives = np.flatnonzero(y == 0)
    if positives.size < k:
        raise CvError(-1, f"{positives.size} positives cannot fill {k} folds")
    if negatives.size < k:
        raise CvError(-1, f"{negatives.size} negatives cannot fill {k} folds")

    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.shape[0], dtype=np.int64)
    for members in (positives, negatives):
        shuffled = rng.permutation(members)
        fold_of[shuffled] = np.arange(shuffled.size) % k
    return FoldAssignment(k=k, fold_of=fold_of, seed=seed)


def _fit_fold(X, y, penalty_factors, lambdas, folds: FoldAssignment, fold: int,
              options: Optional[SolverOptions]):
    train = folds.train_rows(fold)
    test = folds.rows(fold)
    y_train = y[train]
    if y_train.min() == y_train.max():
        raise CvError(fold, "training set contains a single class")
    try:
        path = fit_path(X[train], y_train, penalty_factors, lambdas, options)
    except SolverError as e:
        lam = getattr(e, "lam", None)
        raise CvError(fold, str(e), lam) from e
    X_test = X[test]
    scores = np.column_stack([predict_logit(fit, X_test) for fit in path.fits])
    logger.info("Fold %d: fitted %d lambdas on %d rows", fold, len(lambdas), train.size)
    return path, scores


def cv_select_lambda(
    design: Design,
    y,
    penalty_factors,
    lambdas: Sequence[float],
    folds: FoldAssignment,
    options: Optional[SolverOptions] = None,
    n_jobs: int = 1,
) -> CvResult:
    """
    Fit a lambda path per fold and select the lambda with the largest mean
    held-out AUC; ties go to the larger lambda.
    """
    X = as_csc(design)
    y = np.asarray(y, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if folds.fold_of.shape[0] != X.shape[0]:
        raise CvError(-1, "fold assignment does not match the design rows")

    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_fit_fold)(X, y, penalty_factors, lambdas, folds, fold, options)
        for fold in range(folds.k)
    )

    per_fold_auc = np.empty((folds.k, lambdas.size))
    oof_path = np.empty((X.shape[0], lambdas.size))
    paths = []
    for fold, (path, scores) in enumerate(results):
        test = folds.rows(fold)
        oof_path[test] = scores
        y_test = y[test]
        for i in range(lambdas.size):
            try:
                per_fold_auc[fold, i] = auc(scores[:, i], y_test)
            except ClaimsRiskError as e:
                raise CvError(fold, str(e), float(lambdas[i])) from e
        paths.append(path)

    mean_auc = per_fold_auc.mean(axis=0)
    # argmax returns the first maximum, i.e. the largest lambda among ties
    selected = int(np.argmax(mean_auc))
    logger.info(
        "Selected lambda=%.6g (index %d) with mean AUC %.4f",
        lambdas[selected], selected, mean_auc[selected],
    )
    return CvResult(
        lambdas=lambdas,
        per_fold_auc=per_fold_auc,
        mean_auc=mean_auc,
        selected_index=selected,
        fold_fits=paths,
        folds=folds,
        oof_logit=oof_path[:, selected].copy(),
        oof_path_logit=oof_path,
    )


def cross_fitted_predictions(cvresult: CvResult, design: Design) -> np.ndarray:
    """Score every row with the fold model that never saw its fold"""
    X = as_csc(design)
    if X.shape[0] != cvresult.folds.fold_of.shape[0]:
        raise CvError(-1, f"design has {X.shape[0]} rows, folds cover {cvresult.folds.fold_of.shape[0]}")
    scores = np.empty(X.shape[0])
    for fold in range(cvresult.folds.k):
        rows = cvresult.folds.rows(fold)
        scores[rows] = predict_logit(cvresult.fold_model(fold), X[rows])
    return scores


def refit_selected(
    design: Design,
    y,
    penalty_factors,
    cvresult: CvResult,
    options: Optional[SolverOptions] = None,
    trace: Optional[Trace] = None,
) -> LassoFit:
    """Full-data fit at the selected lambda, warm-started down the grid"""
    lambdas = cvresult.lambdas[: cvresult.selected_index + 1]
    path = fit_path(design, y, penalty_factors, lambdas, options, trace)
    return path.fits[-1]
