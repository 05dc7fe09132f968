"""Kernel estimates of the conditional relative risk within one reason stratum.

At an age ``x`` the estimator is a ratio of kernel-weighted infection rates,

    RR(x) = [sum w I V / sum w V] * [sum w (1-V) / sum w I (1-V)],

with ``w = K((X1 - x) / h)``. Its plug-in variance on the log scale is
``c' S c * R(K) / (n h f(x))`` where ``c`` is the gradient of the log ratio with
respect to the kernel-weighted cell means, ``S`` their covariance, ``R(K)`` the
roughness of the kernel and ``f`` the density of X1 in the stratum. Because the
four cells (I, V) are mutually exclusive, every quantity follows from the
kernel-weighted cell frequencies.

The same machinery yields the odds ratio (``measure="or"``), which is the
identified contrast in the symptoms stratum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import backend
from .errors import EmptyCellError, EmptyStratumError, TooFewObservationsError
from .simulate import Dataset, Reason

MEASURES = ("rr", "or")
MIN_BANDWIDTH_N = 50

_INV_SQRT_2PI = 0.3989422804014327
# integral of K(u)^2 for the Gaussian kernels of order 2 and 4
_ROUGHNESS = {2: 1.0 / (2.0 * np.sqrt(np.pi)), 4: 27.0 / (32.0 * np.sqrt(np.pi))}


def gaussian_kernel(u, order: int = 2):
    """Gaussian kernel of order 2, or its fourth-order extension ``(3 - u^2)/2 * phi(u)``."""
    u = np.asarray(u, dtype=float)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if order == 2:
        return phi
    if order == 4:
        return 0.5 * (3.0 - u * u) * phi
    raise ValueError(f"kernel order must be 2 or 4, got {order}")


def kernel_roughness(order: int = 2) -> float:
    """Integral of the squared kernel."""
    try:
        return _ROUGHNESS[order]
    except KeyError:
        raise ValueError(f"kernel order must be 2 or 4, got {order}") from None


def select_bandwidth(n_stratum: int, d: int = 1, s: int = 2, scale: float = 1.0, sigma: float = 1.0) -> float:
    """Undersmoothed bandwidth ``scale * sigma * n^(-1/(2s+d)) / sqrt(log n)``.

    The extra ``1/sqrt(log n)`` makes ``h`` shrink faster than the
    MSE-optimal rate so that smoothing bias is negligible next to the
    standard error.
    """
    if n_stratum < MIN_BANDWIDTH_N:
        raise TooFewObservationsError(f"bandwidth needs at least {MIN_BANDWIDTH_N} observations, got {n_stratum}")
    if scale <= 0 or sigma <= 0:
        raise ValueError("scale and sigma must be positive")
    n = float(n_stratum)
    return scale * sigma * n ** (-1.0 / (2 * s + d)) / np.sqrt(np.log(n))


def _cell_sums(x1, i, v, grid, h, order):
    """Kernel sums (sum w, sum w I V, sum w V, sum w I (1-V)) per grid point."""
    x1 = np.ascontiguousarray(x1, dtype=float)
    i = np.ascontiguousarray(i, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    grid = np.ascontiguousarray(np.atleast_1d(grid), dtype=float)
    if order == 2:
        return backend.kernel_sums(x1, i, v, grid, float(h))
    w = gaussian_kernel((x1[None, :] - grid[:, None]) / h, order)
    cols = np.stack([np.ones_like(x1), i * v, v, i * (1.0 - v)], axis=1)
    return w @ cols


def _log_ratio_terms(sums, measure):
    """Log ratio and ``c' S c`` from cell sums; NaN where a cell is empty."""
    s0, s_iv, s_v, s_iu = sums[..., 0], sums[..., 1], sums[..., 2], sums[..., 3]
    # cell probabilities a = IV, b = (1-I)V, c = I(1-V), d = (1-I)(1-V)
    with np.errstate(divide="ignore", invalid="ignore"):
        pa = s_iv / s0
        pv = s_v / s0
        pc = s_iu / s0
        pu = (s0 - s_v) / s0
        if measure == "rr":
            ok = (s0 > 0) & (s_iv > 0) & (s_iu > 0) & (s_v > 0) & (s0 - s_v > 0)
            log_ratio = np.log(pa) - np.log(pv) + np.log(pu) - np.log(pc)
            # multinomial delta method; the gradient has zero mean under p
            quad = 1.0 / pa - 1.0 / pv + 1.0 / pc - 1.0 / pu
        elif measure == "or":
            pb = pv - pa
            pd = pu - pc
            ok = (s0 > 0) & (s_iv > 0) & (s_iu > 0) & (pb > 0) & (pd > 0)
            log_ratio = np.log(pa) - np.log(pb) + np.log(pd) - np.log(pc)
            quad = 1.0 / pa + 1.0 / pb + 1.0 / pc + 1.0 / pd
        else:
            raise ValueError(f"measure must be one of {MEASURES}, got {measure!r}")
    log_ratio = np.where(ok, log_ratio, np.nan)
    quad = np.where(ok, quad, np.nan)
    return log_ratio, quad, s0


def density_at(x, x1, h: float, order: int = 2):
    """Kernel density estimate of X1 at ``x``."""
    x1 = np.asarray(x1, dtype=float)
    if x1.size == 0:
        raise EmptyStratumError("no observations for the density estimate")
    x = np.asarray(x, dtype=float)
    w = gaussian_kernel((x1[None, :] - np.atleast_1d(x)[:, None]) / h, order)
    out = w.sum(axis=1) / (x1.size * h)
    return out[0] if x.ndim == 0 else out


def estimate_log_rr_at(x: float, i, v, x1, h: float, s: int = 2, measure: str = "rr") -> float:
    """Kernel log relative risk (or log odds ratio) at ``x``.

    Raises
    ------
    EmptyCellError
        If a kernel-weighted sum the ratio needs is zero.
    """
    log_ratio, _, _ = _log_ratio_terms(_cell_sums(x1, i, v, [x], h, s)[0], measure)
    if np.isnan(log_ratio):
        raise EmptyCellError(f"a kernel-weighted cell is empty at x={x:g}")
    return float(log_ratio)


def variance_log_rr_at(x: float, i, v, x1, h: float, s: int = 2, measure: str = "rr") -> float:
    """Plug-in asymptotic variance of :func:`estimate_log_rr_at`."""
    x1 = np.asarray(x1, dtype=float)
    _, quad, _ = _log_ratio_terms(_cell_sums(x1, i, v, [x], h, s)[0], measure)
    if np.isnan(quad):
        raise EmptyCellError(f"a kernel-weighted cell is empty at x={x:g}")
    n = x1.size
    f_hat = density_at(x, x1, h, s)
    return float(quad * kernel_roughness(s) / (n * h * f_hat))


@dataclass(frozen=True, eq=False)
class KernelFit:
    """Kernel log-ratio curve over a grid; NaN marks grid points with an empty cell."""

    reason: Reason
    bandwidth: float
    kernel_order: int
    grid: np.ndarray
    log_rr: np.ndarray
    se_log_rr: np.ndarray
    n_stratum: int
    measure: str = "rr"

    @property
    def available(self) -> np.ndarray:
        return ~np.isnan(self.log_rr)


def pool_log_ratios(log_ratios, ses):
    """Inverse-variance pooling of independent log ratios, elementwise.

    Entries that are NaN or have a non-positive SE are skipped; a position
    with no usable entry is NaN.
    """
    lr = np.asarray(log_ratios, dtype=float)
    se = np.asarray(ses, dtype=float)
    good = np.isfinite(lr) & np.isfinite(se) & (se > 0)
    prec = np.where(good, 1.0 / np.where(good, se, 1.0) ** 2, 0.0)
    total = prec.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pooled = np.where(total > 0, (prec * np.where(good, lr, 0.0)).sum(axis=0) / total, np.nan)
        pooled_se = np.where(total > 0, 1.0 / np.sqrt(total), np.nan)
    return pooled, pooled_se


def default_measure(reason: Reason) -> str:
    """Odds ratio for the symptoms stratum, relative risk elsewhere."""
    return "or" if Reason(reason) == Reason.SYMPTOMS else "rr"


def kernel_curve(dataset: Dataset, reason: Reason, grid, s: int = 2, scale: float = 1.0,
                 measure: Optional[str] = None) -> KernelFit:
    """Kernel log-ratio curve for one reason stratum.

    Smoothing is over X1 only. X2 is binary and handled by exact
    stratification: the curve is estimated within each X2 level and the levels
    are pooled by inverse variance on the log scale. The bandwidth comes from
    :func:`select_bandwidth` with the stratum's X1 standard deviation.
    """
    reason = Reason(reason)
    measure = measure or default_measure(reason)
    grid = np.asarray(grid, dtype=float)
    rows = dataset.stratum(reason)
    n = len(rows)
    if n == 0:
        raise EmptyStratumError(f"no tested subjects with reason {reason.token!r}")
    # canonical row order makes the floating-point sums independent of input order
    order = np.lexsort((rows.v, rows.i, rows.x2, rows.x1))
    x1, x2 = rows.x1[order], rows.x2[order]
    i, v = rows.i[order].astype(float), rows.v[order].astype(float)
    sigma = float(np.std(x1, ddof=1)) if n > 1 else 0.0
    h = select_bandwidth(n, 1, s, scale, sigma if sigma > 0 else 1.0)

    log_parts, se_parts = [], []
    for level in (0, 1):
        m = x2 == level
        if not m.any():
            continue
        log_ratio, quad, s0 = _log_ratio_terms(_cell_sums(x1[m], i[m], v[m], grid, h, s), measure)
        # quad * R(K) / (n h f) with f = s0 / (n h)
        with np.errstate(divide="ignore", invalid="ignore"):
            var = quad * kernel_roughness(s) / s0
        log_parts.append(log_ratio)
        se_parts.append(np.sqrt(var))
    log_rr, se = pool_log_ratios(log_parts, se_parts)
    return KernelFit(reason=reason, bandwidth=h, kernel_order=s, grid=grid, log_rr=log_rr,
                     se_log_rr=se, n_stratum=n, measure=measure)
