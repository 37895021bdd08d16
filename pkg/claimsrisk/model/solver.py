"""
L1-penalized logistic regression with per-feature penalty factors.

Outer loop: quadratic (IRLS) approximation of the log-likelihood at the
current linear predictor. Inner loop: cyclic coordinate descent with
soft-thresholding over an active set, re-checked against all columns
before the quadratic subproblem is declared solved.

Objective:
    f(b0, b) = -(1/N) sum_i [y_i eta_i - log(1 + exp(eta_i))] + lam * sum_j v_j |b_j|
"""
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit
from scipy import sparse
from scipy.special import expit, logit

from claimsrisk.data.models import LambdaPath, LassoFit, SolverOptions
from claimsrisk.errors import PathError, SeparationError, SolverError
from claimsrisk.model.featurize import SparseDesignMatrix

logger = logging.getLogger(__name__)

Design = Union[SparseDesignMatrix, sparse.spmatrix, np.ndarray]
Trace = Callable[[dict], None]


def as_csc(design: Design) -> sparse.csc_matrix:
    """Design as a float CSC matrix with sorted indices"""
    if isinstance(design, SparseDesignMatrix):
        X = design.to_csc()
    elif sparse.issparse(design):
        X = sparse.csc_matrix(design).astype(float, copy=False)
    else:
        X = sparse.csc_matrix(np.asarray(design, dtype=float))
    if not X.has_sorted_indices:
        X = X.sorted_indices()
    if not np.all(np.isfinite(X.data)):
        raise SolverError("design contains non-finite values")
    return X


def _check_problem(X: sparse.csc_matrix, y, penalty_factors) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    v = np.asarray(penalty_factors, dtype=float)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise SolverError(f"outcome has shape {y.shape}, design has {X.shape[0]} rows")
    if v.ndim != 1 or v.shape[0] != X.shape[1]:
        raise SolverError(f"{v.shape[0]} penalty factors for {X.shape[1]} columns")
    if not np.all(np.isfinite(y)) or not np.all((y == 0) | (y == 1)):
        raise SolverError("outcome must be a finite 0/1 vector")
    if not np.all(np.isfinite(v)) or (v < 0).any():
        raise SolverError("penalty factors must be finite and non-negative")
    if y.min() == y.max():
        raise SolverError("degenerate outcome: all values equal")
    return y, v


def objective(design: Design, y, penalty_factors, lam: float, intercept: float, beta) -> float:
    """Penalized mean negative log-likelihood"""
    X = as_csc(design)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    eta = intercept + X @ beta
    return _objective(eta, y, lam * np.asarray(penalty_factors, dtype=float), beta)


def _objective(eta: np.ndarray, y: np.ndarray, thresholds: np.ndarray, beta: np.ndarray) -> float:
    # logaddexp(0, eta) is the stable log(1 + e^eta)
    loss = np.mean(np.logaddexp(0.0, eta) - y * eta)
    return float(loss + np.dot(thresholds, np.abs(beta)))


def kkt_residuals(
    design: Design, y, penalty_factors, lam: float, intercept: float, beta
) -> Tuple[float, np.ndarray]:
    """
    Stationarity residuals on the gradient scale.

    Returns the intercept residual and one residual per column: for a zero
    coefficient the excess of |g_j| over lam v_j, otherwise |g_j - lam v_j sign(b_j)|,
    with g = X^T (y - p) / N.
    """
    X = as_csc(design)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    thresholds = lam * np.asarray(penalty_factors, dtype=float)
    return _kkt(X, y, thresholds, intercept, beta, intercept + X @ beta)


def _kkt(X, y, thresholds, b0, beta, eta) -> Tuple[float, np.ndarray]:
    n = X.shape[0]
    resid = y - expit(eta)
    g = (X.T @ resid) / n
    per_column = np.where(
        beta != 0,
        np.abs(g - thresholds * np.sign(beta)),
        np.maximum(np.abs(g) - thresholds, 0.0),
    )
    return abs(float(resid.mean())), per_column


def _max_kkt(X, y, thresholds, b0, beta, eta) -> float:
    r0, per_column = _kkt(X, y, thresholds, b0, beta, eta)
    return max(r0, float(per_column.max())) if per_column.size else r0


@njit(cache=True, nogil=True)
def _coordinate_sweeps(
    indptr, indices, data, w, r, beta, b0, active_idx, xwx, thresholds,
    wsum, n, zero_snap, inner_tol, max_sweeps,
):
    """
    Cyclic coordinate descent on the weighted quadratic over the active columns.

    Updates r (working residual) and beta in place; returns the new intercept
    and the number of sweeps used.
    """
    n_rows = r.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        acc = 0.0
        for i in range(n_rows):
            acc += w[i] * r[i]
        d0 = acc / n / wsum
        b0 += d0
        for i in range(n_rows):
            r[i] -= d0
        max_change = wsum * d0 * d0
        for k in range(active_idx.shape[0]):
            j = active_idx[k]
            xx = xwx[j]
            if xx <= 0.0:
                continue
            start = indptr[j]
            end = indptr[j + 1]
            z = 0.0
            for q in range(start, end):
                i = indices[q]
                z += w[i] * data[q] * r[i]
            bj = beta[j]
            z = z / n + xx * bj
            t = thresholds[j]
            if z > t:
                new = (z - t) / xx
            elif z < -t:
                new = (z + t) / xx
            else:
                new = 0.0
            if abs(new) < zero_snap:
                new = 0.0
            if new != bj:
                d = new - bj
                for q in range(start, end):
                    r[indices[q]] -= data[q] * d
                beta[j] = new
                change = xx * d * d
                if change > max_change:
                    max_change = change
        if max_change < inner_tol:
            break
    return b0, sweeps


def fit_logistic_lasso(
    design: Design,
    y,
    penalty_factors,
    lam: float,
    options: Optional[SolverOptions] = None,
    warm_start: Optional[LassoFit] = None,
    trace: Optional[Trace] = None,
) -> LassoFit:
    """
    Minimize the penalized logistic objective at one lambda.

    Args:
        design: n x p design (SparseDesignMatrix, scipy sparse or dense)
        y: 0/1 outcome vector
        penalty_factors: per-column factors v_j (0 = unpenalized)
        lam: global shrinkage, >= 0
        options: convergence controls
        warm_start: previous solution to start from
        trace: called with one dict per outer iteration

    Returns:
        LassoFit; converged=False if the sweep budget ran out
    """
    opts = options or SolverOptions()
    X = as_csc(design)
    y, v = _check_problem(X, y, penalty_factors)
    if not np.isfinite(lam) or lam < 0:
        raise SolverError(f"lambda must be finite and >= 0, got {lam}")

    n, p = X.shape
    thresholds = lam * v
    free = thresholds == 0
    indptr = np.ascontiguousarray(X.indptr, dtype=np.int64)
    indices = np.ascontiguousarray(X.indices, dtype=np.int64)
    data = np.ascontiguousarray(X.data, dtype=np.float64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    X2 = X.copy()
    X2.data = X2.data ** 2

    if warm_start is not None:
        if warm_start.n_features != p:
            raise SolverError(f"warm start has {warm_start.n_features} features, design {p}")
        b0 = warm_start.intercept
        beta = warm_start.coef_vector()
    else:
        b0 = float(logit(y.mean()))
        beta = np.zeros(p)

    eta = b0 + X @ beta
    obj = _objective(eta, y, thresholds, beta)
    max_kkt = _max_kkt(X, y, thresholds, b0, beta, eta)
    converged = max_kkt <= opts.kkt_tol
    sweeps = 0
    outer = 0
    stalled = 0

    while not converged and sweeps < opts.max_iter:
        outer += 1
        prob = expit(eta)
        w = np.maximum(prob * (1.0 - prob), opts.weight_floor)
        # Working residual z - eta of the quadratic approximation
        r = (y - prob) / w
        xwx = (X2.T @ w) / n
        wsum = w.sum() / n

        b0_new = b0
        beta_new = beta.copy()
        active = (beta_new != 0) | free

        while sweeps < opts.max_iter:
            active_idx = np.flatnonzero(active).astype(np.int64)
            b0_new, used = _coordinate_sweeps(
                indptr, indices, data, w, r, beta_new, float(b0_new), active_idx, xwx,
                thresholds, float(wsum), float(n), float(opts.zero_snap),
                float(opts.inner_tol), int(opts.max_iter - sweeps),
            )
            sweeps += used
            # Verify the quadratic's optimality over all columns
            g = (X.T @ (w * r)) / n
            violators = (~active) & (np.abs(g) > thresholds)
            if not violators.any():
                break
            active |= violators

        # Step halving keeps the objective monotone
        step = 1.0
        delta0 = b0_new - b0
        delta = beta_new - beta
        accepted = False
        for _ in range(40):
            b0_c = b0 + step * delta0
            beta_c = beta + step * delta if step < 1.0 else beta_new
            eta_c = b0_c + X @ beta_c
            obj_c = _objective(eta_c, y, thresholds, beta_c)
            if obj_c <= obj + 1e-15 * max(1.0, abs(obj)):
                accepted = True
                break
            step /= 2.0
        if not accepted:
            logger.debug("No descent step found at lambda=%g after %d outer iterations", lam, outer)
            break

        if opts.debug:
            assert obj_c <= obj + 1e-15 * max(1.0, abs(obj)), "objective increased"
        rel_change = (obj - obj_c) / max(abs(obj_c), 1e-300)
        b0, beta, eta, obj = b0_c, beta_c, eta_c, obj_c

        bound = opts.separation_bound
        if abs(b0) > bound or (free.any() and np.abs(beta[free]).max() > bound):
            raise SeparationError(
                "unpenalized coefficients diverge; the outcome is (quasi-)separable "
                f"by the unpenalized columns {np.flatnonzero(free).tolist()}"
            )

        max_kkt = _max_kkt(X, y, thresholds, b0, beta, eta)
        if trace is not None:
            trace({
                "lambda": lam,
                "iteration": outer,
                "objective": obj,
                "n_nonzero": int(np.count_nonzero(beta)),
                "max_kkt": max_kkt,
            })
        if max_kkt <= opts.kkt_tol and rel_change <= opts.tol:
            converged = True
        elif rel_change <= opts.tol:
            stalled += 1
            if stalled >= 25:
                break
        else:
            stalled = 0

    # A KKT certificate is sufficient even when the sweep budget ran out
    converged = converged or max_kkt <= opts.kkt_tol
    if not converged:
        logger.warning(
            "Fit at lambda=%g did not converge after %d sweeps (max KKT residual %.3g)",
            lam, sweeps, max_kkt,
        )

    nonzero = np.flatnonzero(beta)
    return LassoFit(
        intercept=float(b0),
        coefficients={int(j): float(beta[j]) for j in nonzero},
        n_features=p,
        lam=float(lam),
        n_nonzero=len(nonzero),
        converged=converged,
        iterations=sweeps,
        outer_iterations=outer,
        objective=obj,
        max_kkt=max_kkt,
    )


def lambda_max(
    design: Design,
    y,
    penalty_factors,
    options: Optional[SolverOptions] = None,
) -> float:
    """
    Smallest lambda at which every penalized coefficient is zero.

    The gradient is taken at the base model: intercept plus all unpenalized
    columns, fitted without penalty.
    """
    X = as_csc(design)
    y, v = _check_problem(X, y, penalty_factors)
    penalized = v > 0
    if not penalized.any():
        raise SolverError("lambda_max needs at least one penalized column")

    n = X.shape[0]
    free = np.flatnonzero(~penalized)
    if free.size:
        X_free = X[:, free]
        try:
            base = fit_logistic_lasso(X_free, y, np.zeros(free.size), 0.0, options)
        except SeparationError as e:
            raise SeparationError(
                f"base model does not converge: remove unpenalized column(s) {free.tolist()} "
                f"that separate the outcome ({e})"
            ) from e
        if not base.converged:
            raise SeparationError(
                f"base model does not converge: remove unpenalized column(s) {free.tolist()}"
            )
        prob = expit(base.intercept + X_free @ base.coef_vector())
    else:
        prob = np.full(n, y.mean())

    g = np.abs(X.T @ (y - prob)) / n
    return float(np.max(g[penalized] / v[penalized]))


def lambda_grid(lam_max: float, n: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced decreasing grid from lam_max down to lam_max * ratio"""
    if n < 1:
        raise SolverError("grid needs at least one value")
    if n == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * ratio, n)


def fit_path(
    design: Design,
    y,
    penalty_factors,
    lambdas: Sequence[float],
    options: Optional[SolverOptions] = None,
    trace: Optional[Trace] = None,
) -> LambdaPath:
    """Warm-started fits along a strictly decreasing lambda sequence"""
    lambdas = [float(lam) for lam in lambdas]
    if not lambdas:
        raise SolverError("empty lambda sequence")
    if any(lam < 0 for lam in lambdas):
        raise SolverError("lambdas must be non-negative")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise SolverError("lambdas must be strictly decreasing")

    X = as_csc(design)
    fits = []
    previous = None
    for position, lam in enumerate(lambdas):
        try:
            previous = fit_logistic_lasso(X, y, penalty_factors, lam, options, previous, trace)
        except SolverError as e:
            raise PathError(position, lam, e) from e
        logger.debug("lambda[%d]=%g: %d nonzero", position, lam, previous.n_nonzero)
        fits.append(previous)
    return LambdaPath(lambdas=lambdas, fits=fits)


def predict_logit(fit: LassoFit, design: Design) -> np.ndarray:
    """Linear predictor b0 + x_i . b for every row"""
    if isinstance(design, SparseDesignMatrix):
        if design.n_cols != fit.n_features:
            raise SolverError(f"design has {design.n_cols} columns, fit {fit.n_features}")
        beta = fit.coef_vector()
        nb = design.n_binary
        return fit.intercept + design.binary @ beta[:nb] + design.continuous @ beta[nb:]
    X = design if sparse.issparse(design) else np.asarray(design, dtype=float)
    if X.shape[1] != fit.n_features:
        raise SolverError(f"design has {X.shape[1]} columns, fit {fit.n_features}")
    return fit.intercept + np.asarray(X @ fit.coef_vector()).ravel()
