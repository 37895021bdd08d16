import numpy as np
import pytest

from conftest import toy_problem
from claimsrisk.errors import CvError
from claimsrisk.model.cv import (
    FoldAssignment,
    cross_fitted_predictions,
    cv_select_lambda,
    make_folds,
    refit_selected,
)
from claimsrisk.model.solver import fit_path, lambda_grid, lambda_max


def test_folds_are_stratified(rng):
    y = (rng.random(1003) < 0.1).astype(float)
    folds = make_folds(y, 5, seed=3)
    pos = [int(y[folds.rows(f)].sum()) for f in range(5)]
    neg = [int((1 - y[folds.rows(f)]).sum()) for f in range(5)]
    assert max(pos) - min(pos) <= 1
    assert max(neg) - min(neg) <= 1
    assert sorted(np.concatenate([folds.rows(f) for f in range(5)]).tolist()) == list(range(1003))
    assert np.array_equal(make_folds(y, 5, seed=3).fold_of, folds.fold_of)
    assert not np.array_equal(make_folds(y, 5, seed=4).fold_of, folds.fold_of)


def test_fold_errors():
    with pytest.raises(CvError):
        make_folds([0, 1, 0, 1], 1, seed=0)
    with pytest.raises(CvError):
        make_folds([1, 1, 0, 0, 0, 0], 3, seed=0)


def test_null_grid_selects_largest_lambda(rng):
    X, y, pf = toy_problem(rng, n=60, p=5)
    # Gradients are bounded by 1 and penalty factors are >= 1: every fold fits the null model
    lambdas = [8.0, 4.0, 2.0]
    result = cv_select_lambda(X, y, pf, lambdas, make_folds(y, 3, seed=1))
    assert np.allclose(result.mean_auc, 0.5)
    assert result.selected_index == 0
    assert result.selected_lambda == lambdas[0]


def test_selection_and_shapes(synth_cv, synth_design):
    _, design, y = synth_design
    k, m = synth_cv.per_fold_auc.shape
    assert (k, m) == (3, 6)
    assert synth_cv.oof_path_logit.shape == (len(y), 6)
    np.testing.assert_allclose(synth_cv.mean_auc, synth_cv.per_fold_auc.mean(axis=0))
    best = synth_cv.mean_auc.max()
    assert synth_cv.selected_index == int(np.flatnonzero(synth_cv.mean_auc == best)[0])
    assert synth_cv.mean_auc[synth_cv.selected_index] > 0.6
    assert np.array_equal(synth_cv.oof_logit, synth_cv.oof_path_logit[:, synth_cv.selected_index])


def test_cross_fitted_matches_out_of_fold(synth_cv, synth_design):
    _, design, _ = synth_design
    scores = cross_fitted_predictions(synth_cv, design)
    np.testing.assert_allclose(scores, synth_cv.oof_logit, atol=1e-12)


def test_held_out_fold_does_not_leak(rng):
    X, y, pf = toy_problem(rng, n=90, p=6)
    lambdas = lambda_grid(lambda_max(X, y, pf), n=4, ratio=0.05)
    folds = make_folds(y, 3, seed=5)
    result = cv_select_lambda(X, y, pf, lambdas, folds)

    # Scramble the held-out rows of fold 0; the fold-0 model must not change
    test = folds.rows(0)
    X2, y2 = X.copy(), y.copy()
    X2[test] = rng.permutation(X2[test], axis=1)
    y2[test] = 1 - y2[test]
    other = cv_select_lambda(X2, y2, pf, lambdas, folds)
    for a, b in zip(result.fold_fits[0].fits, other.fold_fits[0].fits):
        assert a.intercept == b.intercept
        assert a.coefficients == b.coefficients


def test_parallel_folds_are_deterministic(rng):
    X, y, pf = toy_problem(rng, n=80, p=6)
    lambdas = lambda_grid(lambda_max(X, y, pf), n=5, ratio=0.05)
    folds = make_folds(y, 4, seed=9)
    serial = cv_select_lambda(X, y, pf, lambdas, folds, n_jobs=1)
    threaded = cv_select_lambda(X, y, pf, lambdas, folds, n_jobs=4)
    assert np.array_equal(serial.per_fold_auc, threaded.per_fold_auc)
    assert np.array_equal(serial.oof_path_logit, threaded.oof_path_logit)


def test_refit_selected(synth_cv, synth_design):
    space, design, y = synth_design
    fit = refit_selected(design, y, space.penalty_factors, synth_cv)
    assert fit.lam == synth_cv.selected_lambda
    path = fit_path(design, y, space.penalty_factors, synth_cv.lambdas[: synth_cv.selected_index + 1])
    assert fit.coefficients == path.fits[-1].coefficients


def test_fold_with_single_training_class():
    X = np.eye(6)
    y = np.array([1.0, 0, 0, 0, 0, 0])
    folds = FoldAssignment(k=2, fold_of=np.array([0, 1, 1, 1, 1, 1]), seed=0)
    with pytest.raises(CvError) as info:
        cv_select_lambda(X, y, np.ones(6), [0.1], folds)
    assert info.value.fold == 0
    with pytest.raises(CvError):
        cv_select_lambda(X, y, np.ones(6), [0.1], FoldAssignment(k=2, fold_of=np.zeros(3, int), seed=0))
