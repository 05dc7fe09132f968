# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: the Fisher-scoring loop for binomial GLMs and
Gaussian kernel sums. ``_pyimpl`` holds the reference numpy versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, sqrt, fabs, INFINITY, isfinite

cnp.import_array()

BACKEND = "cython"

cdef enum:
    MAX_P = 12
    MAX_TRI = 78  # MAX_P * (MAX_P + 1) / 2

# status codes shared with _pyimpl.irls
cdef enum:
    ST_CONVERGED = 0
    ST_MAX_ITER = 1
    ST_HALVING_FAILED = 2
    ST_BOUNDARY_STALL = 3
    ST_SEPARATED = 4
    ST_SINGULAR = 5

CONVERGED = ST_CONVERGED
MAX_ITER_REACHED = ST_MAX_ITER
HALVING_FAILED = ST_HALVING_FAILED
BOUNDARY_STALL = ST_BOUNDARY_STALL
SEPARATED = ST_SEPARATED
SINGULAR = ST_SINGULAR

cdef double INV_SQRT_2PI = 0.3989422804014327
# weights beyond 12 bandwidths are below exp(-72) and are dropped
cdef double KERNEL_CUTOFF = 12.0


cdef inline double log1mexp(double eta) nogil:
    # log(1 - exp(eta)) for eta < 0, accurate on both sides of -log 2
    if eta > -0.6931471805599453:
        return log(-expm1(eta))
    return log1p(-exp(eta))


cdef inline void accumulate(double* acc, const double* xr, double w, Py_ssize_t p) noexcept nogil:
    # lower triangle of w * xr xr^T, packed row-wise
    cdef Py_ssize_t a, b, k = 0
    cdef double wa
    for a in range(p):
        wa = w * xr[a]
        for b in range(a + 1):
            acc[k] += wa * xr[b]
            k += 1


cdef object unpack(const double* acc, Py_ssize_t p):
    out = np.empty((p, p))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t a, b, k = 0
    for a in range(p):
        for b in range(a + 1):
            o[a, b] = acc[k]
            o[b, a] = acc[k]
            k += 1
    return out


cdef struct PassResult:
    double eta_max
    double eta_absmax
    double ll


cdef PassResult _pass(const double[:, ::1] X, const double[::1] y, const double* beta, int link,
                      double* score, double* info) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], r, a
    cdef double eta, mu, e, w, s
    cdef PassResult res
    cdef const double* xr
    res.eta_max = -INFINITY
    res.eta_absmax = 0.0
    res.ll = 0.0
    for a in range(p):
        score[a] = 0.0
    for a in range(p * (p + 1) // 2):
        info[a] = 0.0
    for r in range(n):
        xr = &X[r, 0]
        eta = 0.0
        for a in range(p):
            eta += xr[a] * beta[a]
        if eta > res.eta_max:
            res.eta_max = eta
        if fabs(eta) > res.eta_absmax:
            res.eta_absmax = fabs(eta)
        if link == 0:
            e = exp(-fabs(eta))
            if eta >= 0:
                mu = 1.0 / (1.0 + e)
                res.ll += (y[r] - 1.0) * eta - log1p(e)
            else:
                mu = e / (1.0 + e)
                res.ll += y[r] * eta - log1p(e)
            s = y[r] - mu
            w = mu * (1.0 - mu)
        else:
            mu = exp(eta)
            if y[r] > 0.5:
                res.ll += eta
                s = 1.0
            elif eta >= 0:
                res.ll = -INFINITY
                s = -INFINITY
            else:
                res.ll += log1mexp(eta)
                s = -mu / (1.0 - mu)
            w = mu / (1.0 - mu) if mu < 1.0 else INFINITY
        for a in range(p):
            score[a] += xr[a] * s
        accumulate(info, xr, w, p)
    return res


cdef bint _chol_solve(const double* tri, const double* b, double* out, Py_ssize_t p) noexcept nogil:
    """Solve A x = b for packed lower-triangular storage of SPD A."""
    cdef double L[MAX_P][MAX_P]
    cdef double z[MAX_P]
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(p):
        for j in range(i + 1):
            s = tri[i * (i + 1) // 2 + j]
            for k in range(j):
                s -= L[i][k] * L[j][k]
            if i == j:
                if not (s > 0.0) or not isfinite(s):
                    return False
                L[i][i] = sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= L[i][k] * z[k]
        z[i] = s / L[i][i]
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s -= L[k][i] * out[k]
        out[i] = s / L[i][i]
    return True


def glm_pass(const double[:, ::1] X, const double[::1] y, const double[::1] beta, int link):
    """Max linear predictor, log-likelihood, score and Fisher information at ``beta``.

    link 0 = logit, 1 = log.
    """
    cdef Py_ssize_t p = X.shape[1], a
    if p > MAX_P:
        raise ValueError(f"at most {MAX_P} columns supported")
    cdef double score[MAX_P]
    cdef double info[MAX_TRI]
    cdef PassResult res = _pass(X, y, &beta[0], link, score, info)
    score_arr = np.empty(p)
    for a in range(p):
        score_arr[a] = score[a]
    return res.eta_max, res.ll, score_arr, unpack(info, p)


def irls(const double[:, ::1] X, const double[::1] y, const double[::1] beta0, int link,
         int max_iter, double score_tol, double coef_tol, int max_halvings, int stall_limit):
    """Fisher scoring with step-halving; see ``_pyimpl.irls`` for the contract."""
    cdef Py_ssize_t p = X.shape[1], a
    if p > MAX_P:
        raise ValueError(f"at most {MAX_P} columns supported")
    cdef double beta[MAX_P]
    cdef double cand[MAX_P]
    cdef double step[MAX_P]
    cdef double score[MAX_P]
    cdef double c_score[MAX_P]
    cdef double info[MAX_TRI]
    cdef double c_info[MAX_TRI]
    cdef PassResult cur, nxt
    cdef int it = 0, k, stalls = 0, status = ST_MAX_ITER
    cdef double t, change, big, smax
    cdef bint feasible, accepted, full_infeasible
    for a in range(p):
        beta[a] = beta0[a]
    with nogil:
        cur = _pass(X, y, beta, link, score, info)
        while it < max_iter:
            it += 1
            smax = 0.0
            for a in range(p):
                if fabs(score[a]) > smax:
                    smax = fabs(score[a])
            if smax < score_tol:
                status = ST_CONVERGED
                break
            if not _chol_solve(info, score, step, p):
                status = ST_SINGULAR
                break
            t = 1.0
            accepted = False
            full_infeasible = False
            for k in range(max_halvings + 1):
                for a in range(p):
                    cand[a] = beta[a] + t * step[a]
                nxt = _pass(X, y, cand, link, c_score, c_info)
                feasible = link == 0 or nxt.eta_max < 0
                if k == 0 and not feasible:
                    full_infeasible = True
                if feasible and isfinite(nxt.ll) and nxt.ll >= cur.ll - 1e-12 * fabs(cur.ll):
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                status = ST_HALVING_FAILED
                break
            stalls = stalls + 1 if full_infeasible else 0
            change = 0.0
            big = 1e-300
            for a in range(p):
                if fabs(cand[a] - beta[a]) > change:
                    change = fabs(cand[a] - beta[a])
                if fabs(cand[a]) > big:
                    big = fabs(cand[a])
                beta[a] = cand[a]
                score[a] = c_score[a]
            for a in range(p * (p + 1) // 2):
                info[a] = c_info[a]
            cur = nxt
            if change / big < coef_tol and t == 1.0:
                status = ST_CONVERGED
                break
            if link == 1 and stalls >= stall_limit:
                status = ST_BOUNDARY_STALL
                break
            if link == 0 and cur.eta_absmax > 40.0:
                status = ST_SEPARATED
                break
    beta_arr = np.empty(p)
    score_arr = np.empty(p)
    for a in range(p):
        beta_arr[a] = beta[a]
        score_arr[a] = score[a]
    return beta_arr, it, status, cur.ll, score_arr, unpack(info, p)


def glm_sandwich_parts(const double[:, ::1] X, const double[::1] y, const double[::1] beta, int link):
    """Observed negative Hessian and outer-product of per-row scores."""
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], r, a
    if p > MAX_P:
        raise ValueError(f"at most {MAX_P} columns supported")
    cdef double eta, mu, w, s
    cdef double bread[MAX_TRI]
    cdef double meat[MAX_TRI]
    cdef const double* xr
    for a in range(p * (p + 1) // 2):
        bread[a] = 0.0
        meat[a] = 0.0
    for r in range(n):
        xr = &X[r, 0]
        eta = 0.0
        for a in range(p):
            eta += xr[a] * beta[a]
        if link == 0:
            mu = 1.0 / (1.0 + exp(-eta))
            s = y[r] - mu
            w = mu * (1.0 - mu)
        else:
            mu = exp(eta)
            if y[r] > 0.5:
                s = 1.0
                w = 0.0
            else:
                s = -mu / (1.0 - mu)
                w = mu / ((1.0 - mu) * (1.0 - mu))
        accumulate(bread, xr, w, p)
        accumulate(meat, xr, s * s, p)
    return unpack(bread, p), unpack(meat, p)


def kernel_sums(const double[::1] x, const double[::1] i, const double[::1] v,
                const double[::1] grid, double h):
    """Gaussian-kernel sums at each grid point.

    Columns: sum w, sum w*I*V, sum w*V, sum w*I*(1-V), with w = K((x - g)/h).
    """
    cdef Py_ssize_t n = x.shape[0], g = grid.shape[0], k, r
    cdef double u, w, s0, s1, s2, s3
    out_arr = np.zeros((g, 4))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for k in range(g):
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            for r in range(n):
                u = (x[r] - grid[k]) / h
                if fabs(u) > KERNEL_CUTOFF:
                    continue
                w = INV_SQRT_2PI * exp(-0.5 * u * u)
                s0 += w
                if v[r] > 0.5:
                    s2 += w
                    if i[r] > 0.5:
                        s1 += w
                elif i[r] > 0.5:
                    s3 += w
            out[k, 0] = s0
            out[k, 1] = s1
            out[k, 2] = s2
            out[k, 3] = s3
    return out_arr
