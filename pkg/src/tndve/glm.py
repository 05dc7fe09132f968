"""Binomial regression with log or logit link.

Fitting is Fisher scoring with step-halving. Under the log link every accepted
iterate keeps the linear predictor strictly negative on the training rows, so
fitted probabilities never exceed one. When the maximum-likelihood solution
lies on that boundary, scoring stalls; the fit then switches to a log-barrier
Newton method on the constraints ``eta_j <= 0`` of the infected rows (rows
with I=0 carry their own barrier through ``log(1 - exp(eta))``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import backend
from .errors import (
    NonConvergenceError,
    RankDeficientError,
    SeparationError,
    SingularInformationError,
)

LOG = "log"
LOGIT = "logit"
_LINK_CODE = {LOGIT: 0, LOG: 1}

SCORE_TOL = 1e-8
COEF_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 50
# consecutive iterations whose full scoring step leaves the feasible region
_STALL_LIMIT = 4


@dataclass(frozen=True, eq=False)
class GlmFit:
    link: str
    coefficients: np.ndarray
    covariance_model: np.ndarray
    covariance_sandwich: np.ndarray
    converged: bool
    iterations: int
    n_obs: int
    names: tuple = ()
    loglik: float = float("nan")
    boundary: bool = False
    score: np.ndarray = field(default=None, repr=False)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def se(self, robust: bool = True) -> np.ndarray:
        cov = self.covariance_sandwich if robust else self.covariance_model
        return np.sqrt(np.diag(cov))

    def contrast(self, vec, robust: bool = True):
        """Estimate and variance of ``vec @ coefficients``."""
        vec = np.asarray(vec, dtype=float)
        cov = self.covariance_sandwich if robust else self.covariance_model
        return float(vec @ self.coefficients), float(vec @ cov @ vec)


def _prepare(X, y):
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    # sums run in a canonical row order so results do not depend on input order
    order = np.lexsort(np.column_stack([y, X]).T[::-1])
    return np.ascontiguousarray(X[order]), np.ascontiguousarray(y[order])


def _check_design(X, y):
    n, p = X.shape
    if n < p:
        raise RankDeficientError(f"design matrix of shape {X.shape} is not full column rank")
    gram = X.T @ X
    scale = np.sqrt(np.diag(gram))
    if np.any(scale == 0) or np.linalg.cond(gram / np.outer(scale, scale)) > 1e12:
        raise RankDeficientError(f"design matrix of shape {X.shape} is not full column rank")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == n:
        raise SeparationError("outcome has a single class")
    binary = np.all((X == 0) | (X == 1), axis=0)
    for j in np.flatnonzero(binary):
        on = X[:, j] == 1
        for mask, level in ((on, 1), (~on, 0)):
            k = int(mask.sum())
            if 0 < k < n:
                k_pos = int(y[mask].sum())
                if k_pos == 0 or k_pos == k:
                    raise SeparationError(f"column {j} = {level} perfectly predicts the outcome")


def score_at(beta, X, y, link: str = LOG) -> np.ndarray:
    """Analytic gradient of the binomial log-likelihood at ``beta``."""
    X, y = _prepare(X, y)
    _, _, score, _ = backend.glm_pass(X, y, np.ascontiguousarray(beta, dtype=float), _LINK_CODE[link])
    return score


def loglik_at(beta, X, y, link: str = LOG) -> float:
    X, y = _prepare(X, y)
    _, ll, _, _ = backend.glm_pass(X, y, np.ascontiguousarray(beta, dtype=float), _LINK_CODE[link])
    return ll


def _solve_pd(A, b):
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularInformationError("information matrix is not positive definite") from None
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def _inverse_pd(A):
    return _solve_pd(A, np.eye(A.shape[0]))


def sandwich_covariance(fit_or_beta, X, y, link: Optional[str] = None) -> np.ndarray:
    """Robust covariance ``A^-1 B A^-1`` of the coefficients.

    ``A`` is the observed negative Hessian and ``B`` the sum of outer
    products of per-row scores, so the result already carries the 1/n scale.
    """
    if isinstance(fit_or_beta, GlmFit):
        beta, link = fit_or_beta.coefficients, fit_or_beta.link
    else:
        beta = fit_or_beta
    X, y = _prepare(X, y)
    return _sandwich(beta, X, y, link)


def _sandwich(beta, X, y, link):
    bread, meat = backend.glm_sandwich_parts(X, y, np.ascontiguousarray(beta, dtype=float), _LINK_CODE[link])
    if not np.all(np.isfinite(bread)) or not np.all(np.isfinite(meat)):
        raise SingularInformationError("score contributions are not finite")
    bread_inv = _inverse_pd(bread)
    cov = bread_inv @ meat @ bread_inv
    return 0.5 * (cov + cov.T)


def _start(X, y, link):
    if link == LOGIT:
        return np.zeros(X.shape[1])
    # intercept-only closed form, slopes 0, when an intercept column exists
    target = np.full(X.shape[0], np.log(y.mean()))
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    return beta


def _interior_start(X, y, beta, margin=1e-3):
    """Move ``beta`` toward the intercept-only start until every linear
    predictor is at most ``-margin``; a start on the boundary makes the first
    barrier Hessian numerically singular."""
    centre = _start(X, y, LOG)
    if np.max(X @ centre) >= -margin:
        return beta
    theta = 1.0
    cand = beta
    while np.max(X @ cand) > -margin and theta > 1e-6:
        theta *= 0.9
        cand = centre + theta * (beta - centre)
    return cand


def _barrier_fit(X, y, beta, max_outer=40, tol=1e-8):
    """Constrained log-link MLE from a strictly feasible start.

    The barrier weight ``t`` shrinks tenfold per outer round until the
    duality gap ``t * m`` or the change in coefficients is negligible. Very
    small ``t`` makes the Hessian ill-conditioned near active constraints; a
    failed factorization there ends the path at the last good iterate.
    """
    pos = y > 0.5
    m = int(pos.sum())
    beta = _interior_start(X, y, beta)

    def objective(b, t):
        eta = X @ b
        if np.any(eta >= 0):
            return -np.inf
        return np.sum(eta[pos]) + np.sum(np.log(-np.expm1(eta[~pos]))) + t * np.sum(np.log(-eta[pos]))

    t = 1.0
    n_iter = 0
    for _ in range(max_outer):
        previous = beta
        for _ in range(50):
            n_iter += 1
            eta = X @ beta
            mu = np.exp(eta)
            g_rows = np.where(pos, 1.0 + t / eta, -mu / (1.0 - mu))
            grad = X.T @ g_rows
            w = np.where(pos, t / eta ** 2, mu / (1.0 - mu) ** 2)
            hess = (X * w[:, None]).T @ X
            try:
                step = _solve_pd(hess, grad)
            except SingularInformationError:
                if t < 1.0:
                    return beta, n_iter
                raise
            decrement = float(grad @ step)
            if not decrement >= 1e-14:
                break
            f0 = objective(beta, t)
            s = 1.0
            for _ in range(MAX_HALVINGS):
                cand = beta + s * step
                if objective(cand, t) >= f0 + 0.25 * s * decrement:
                    break
                s *= 0.5
            else:
                break
            beta = cand
        change = np.max(np.abs(beta - previous)) / max(np.max(np.abs(beta)), 1e-300)
        if t * m < tol or (t < 1.0 and change < COEF_TOL):
            break
        t *= 0.1
    return beta, n_iter


def fit_glm(X, y, link: str = LOG, names: Sequence[str] = (), max_iter: int = MAX_ITER,
            score_tol: float = SCORE_TOL, coef_tol: float = COEF_TOL) -> GlmFit:
    """Maximum-likelihood binomial regression of ``y`` on the columns of ``X``.

    Raises
    ------
    RankDeficientError, SeparationError, NonConvergenceError,
    SingularInformationError
    """
    if link not in _LINK_CODE:
        raise ValueError(f"link must be 'log' or 'logit', got {link!r}")
    X, y = _prepare(X, y)
    _check_design(X, y)
    code = _LINK_CODE[link]
    beta, it, status, ll, score, info = backend.irls(
        X, y, _start(X, y, link), code, max_iter, score_tol, coef_tol, MAX_HALVINGS, _STALL_LIMIT)
    # scoring that reaches the log-link boundary sees unbounded information; the barrier handles it
    at_edge = code == 1 and float(np.max(X @ beta)) > -1e-6
    if status == backend.SINGULAR and not at_edge:
        raise SingularInformationError("information matrix is not positive definite")
    if status == backend.SEPARATED:
        raise SeparationError("fitted probabilities converge to 0 or 1")
    if code == 1 and status != backend.CONVERGED:
        beta, extra = _barrier_fit(X, y, beta)
        it += extra
        _, ll, score, info = backend.glm_pass(X, y, beta, code)
    elif status != backend.CONVERGED:
        if np.max(np.abs(X @ beta)) > 25:
            raise SeparationError("fitted probabilities converge to 0 or 1")
        raise NonConvergenceError(f"no convergence after {max_iter} iterations")
    # scoring can also settle on the boundary when it is approached smoothly
    boundary = code == 1 and float(np.max(X @ beta)) > -1e-6
    if not np.all(np.isfinite(info)):
        # boundary rows have unbounded expected information; cap them
        eta = np.minimum(X @ beta, -1e-12)
        mu = np.exp(eta)
        info = (X * (mu / (1 - mu))[:, None]).T @ X
    cov_model = _inverse_pd(info)
    cov_sand = _sandwich(beta, X, y, link)
    return GlmFit(
        link=link, coefficients=beta, covariance_model=0.5 * (cov_model + cov_model.T),
        covariance_sandwich=cov_sand, converged=True, iterations=it, n_obs=X.shape[0],
        names=tuple(names), loglik=float(ll), boundary=bool(boundary), score=score,
    )


def predict_prob(fit: GlmFit, covariates) -> np.ndarray:
    """Fitted probability at one covariate vector or at each row of a matrix."""
    eta = np.asarray(covariates, dtype=float) @ fit.coefficients
    if fit.link == LOG:
        return np.exp(eta)
    return 1.0 / (1.0 + np.exp(-eta))
