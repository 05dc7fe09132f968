"""Pure-numpy implementations of the compiled inner loops in ``_speedups``."""
import numpy as np

BACKEND = "python"

CONVERGED = 0
MAX_ITER_REACHED = 1
HALVING_FAILED = 2
BOUNDARY_STALL = 3
SEPARATED = 4
SINGULAR = 5

_INV_SQRT_2PI = 0.3989422804014327
_KERNEL_CUTOFF = 12.0


def _row_terms(X, y, beta, link):
    eta = X @ beta
    if link == 0:
        mu = 1.0 / (1.0 + np.exp(-eta))
        ll = np.sum(y * eta - np.logaddexp(0.0, eta))
        s = y - mu
        w = mu * (1.0 - mu)
        return eta, ll, s, w, w
    mu = np.exp(eta)
    pos = y > 0.5
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if np.any(~pos & (eta >= 0)):
            ll = -np.inf
        else:
            ll = np.sum(eta[pos]) + np.sum(np.log(-np.expm1(eta[~pos])))
        s = np.where(pos, 1.0, -mu / (1.0 - mu))
        w_fisher = np.where(mu < 1.0, mu / (1.0 - mu), np.inf)
        w_obs = np.where(pos, 0.0, mu / (1.0 - mu) ** 2)
    return eta, ll, s, w_fisher, w_obs


def glm_pass(X, y, beta, link):
    """Max linear predictor, log-likelihood, score and Fisher information."""
    eta, ll, s, w, _ = _row_terms(X, y, beta, link)
    score = X.T @ s
    with np.errstate(invalid="ignore"):
        info = (X * w[:, None]).T @ X
    return (float(eta.max()) if eta.size else -np.inf), float(ll), score, info


def irls(X, y, beta0, link, max_iter, score_tol, coef_tol, max_halvings, stall_limit):
    """Fisher scoring with step-halving.

    A candidate step is accepted once it is feasible (log link: every linear
    predictor strictly negative) and does not decrease the log-likelihood;
    otherwise the step is halved, at most ``max_halvings`` times. Returns
    ``(beta, iterations, status, loglik, score, info)`` with ``status`` one of
    the module-level codes.
    """
    beta = np.array(beta0, dtype=float)
    eta_max, ll, score, info = glm_pass(X, y, beta, link)
    status = MAX_ITER_REACHED
    stalls = 0
    it = 0
    while it < max_iter:
        it += 1
        if np.max(np.abs(score)) < score_tol:
            status = CONVERGED
            break
        try:
            L = np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            status = SINGULAR
            break
        if not np.all(np.isfinite(L)):
            status = SINGULAR
            break
        step = np.linalg.solve(L.T, np.linalg.solve(L, score))
        t = 1.0
        accepted = False
        full_infeasible = False
        for k in range(max_halvings + 1):
            cand = beta + t * step
            c_eta_max, c_ll, c_score, c_info = glm_pass(X, y, cand, link)
            feasible = link == 0 or c_eta_max < 0
            if k == 0 and not feasible:
                full_infeasible = True
            if feasible and np.isfinite(c_ll) and c_ll >= ll - 1e-12 * abs(ll):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = HALVING_FAILED
            break
        stalls = stalls + 1 if full_infeasible else 0
        change = np.max(np.abs(cand - beta)) / max(np.max(np.abs(cand)), 1e-300)
        beta, ll, score, info = cand, c_ll, c_score, c_info
        if change < coef_tol and t == 1.0:
            status = CONVERGED
            break
        if link == 1 and stalls >= stall_limit:
            status = BOUNDARY_STALL
            break
        if link == 0 and np.max(np.abs(X @ beta)) > 40.0:
            status = SEPARATED
            break
    return beta, it, status, ll, score, info


def glm_sandwich_parts(X, y, beta, link):
    """Observed negative Hessian and outer-product of per-row scores."""
    _, _, s, _, w_obs = _row_terms(X, y, beta, link)
    bread = (X * w_obs[:, None]).T @ X
    Xs = X * s[:, None]
    return bread, Xs.T @ Xs


def kernel_sums(x, i, v, grid, h, chunk=64):
    """Gaussian-kernel sums: columns sum w, sum w*I*V, sum w*V, sum w*I*(1-V)."""
    out = np.empty((len(grid), 4))
    cols = np.stack([np.ones_like(x), i * v, v, i * (1.0 - v)], axis=1)
    for start in range(0, len(grid), chunk):
        g = grid[start:start + chunk]
        u = (x[None, :] - g[:, None]) / h
        w = np.where(np.abs(u) > _KERNEL_CUTOFF, 0.0, _INV_SQRT_2PI * np.exp(-0.5 * u * u))
        out[start:start + chunk] = w @ cols
    return out
