"""Vaccine-effectiveness estimators for test-negative data with several
reasons for testing.

Each reason stratum identifies a different contrast:

* symptoms: the odds ratio of infection on vaccination among tested
  symptomatic subjects, i.e. VE among healthcare seekers (``VE_s_seeker``);
* disease-unrelated testing: the relative risk, i.e. population VE
  (``VE_marginal``);
* case-contact tracing: the relative risk among contacts (``VE_cct``).

Single-stratum intervals are computed on the log scale and mapped to the VE
scale, so they are asymmetric. Combined estimates average VE-scale points; their
interval maps a Wald interval for log(1 - VE) back, with the delta-method SE
``se / (1 - VE)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import (
    DomainError,
    EmptyStratumError,
    NonPositiveWeightError,
    OneArmOnlyError,
    WeightMismatchError,
    ZeroSeError,
)
from .glm import LOG, LOGIT, GlmFit, fit_glm
from .kernel import kernel_curve, pool_log_ratios
from .simulate import Dataset, Reason

Z95 = 1.959963984540054
X1_RANGE = (0.5, 1.0)


class Estimand(str, enum.Enum):
    VE_S_SEEKER = "VE_s_seeker"
    VE_MARGINAL = "VE_marginal"
    VE_CCT = "VE_cct"
    VE_POOLED_NAIVE = "VE_pooled_naive"


class Method(str, enum.Enum):
    PARAMETRIC = "parametric"
    KERNEL = "kernel"


POOLED = "pooled"
COMBINED = "combined"

ESTIMAND_OF = {
    Reason.SYMPTOMS: Estimand.VE_S_SEEKER,
    Reason.UNRELATED: Estimand.VE_MARGINAL,
    Reason.CCT: Estimand.VE_CCT,
}
LINK_OF = {Reason.SYMPTOMS: LOGIT, Reason.UNRELATED: LOG, Reason.CCT: LOG}


@dataclass(frozen=True)
class VeEstimate:
    """A VE point estimate with its standard error and 95% interval.

    ``log_ratio`` and ``se_log`` hold the log relative risk (or log odds
    ratio) behind single-stratum estimates and are NaN for combinations.
    """

    estimand: Estimand
    point: float
    se: float
    ci_low: float
    ci_high: float
    stratum: Union[Reason, str]
    method: Method
    n_used: int
    log_ratio: float = float("nan")
    se_log: float = float("nan")

    def covers(self, truth: float) -> bool:
        return self.ci_low <= truth <= self.ci_high


def ve_from_log_ratio(log_ratio, se_log):
    """VE point, delta-method SE and log-scale 95% interval.

    Returns ``(point, se, ci_low, ci_high)``; the interval is
    ``1 - exp(log_ratio +/- z * se_log)``.
    """
    log_ratio = np.asarray(log_ratio, dtype=float)
    se_log = np.asarray(se_log, dtype=float)
    ratio = np.exp(log_ratio)
    point = 1.0 - ratio
    se = ratio * se_log
    ci_low = 1.0 - np.exp(log_ratio + Z95 * se_log)
    ci_high = 1.0 - np.exp(log_ratio - Z95 * se_log)
    return point, se, ci_low, ci_high


def _from_log(estimand, log_ratio, se_log, stratum, method, n_used) -> VeEstimate:
    point, se, lo, hi = ve_from_log_ratio(log_ratio, se_log)
    return VeEstimate(estimand=estimand, point=float(point), se=float(se), ci_low=float(lo),
                      ci_high=float(hi), stratum=stratum, method=method, n_used=int(n_used),
                      log_ratio=float(log_ratio), se_log=float(se_log))


def design_matrix(rows: Dataset, interaction: bool = False):
    """Columns (1, v, x1, x2), plus v*x1 when ``interaction`` is set."""
    cols = [np.ones(len(rows)), rows.v, rows.x1, rows.x2]
    names = ["intercept", "v", "x1", "x2"]
    if interaction:
        cols.append(rows.v * rows.x1)
        names.append("v:x1")
    return np.column_stack(cols).astype(float), tuple(names)


def vaccine_contrast(names: Sequence[str], x1: Optional[float] = None) -> np.ndarray:
    """Gradient of the vaccinated-vs-unvaccinated log ratio at ``x1``."""
    vec = np.zeros(len(names))
    vec[names.index("v")] = 1.0
    if "v:x1" in names:
        if x1 is None:
            raise ValueError("an evaluation point x1 is required with a v:x1 interaction")
        vec[names.index("v:x1")] = x1
    return vec


def _check_arms(rows: Dataset, what: str):
    if len(rows) == 0:
        raise EmptyStratumError(f"no tested subjects in {what}")
    n_vacc = int(rows.v.sum())
    if n_vacc == 0 or n_vacc == len(rows):
        raise OneArmOnlyError(f"{what} contains only {'vaccinated' if n_vacc else 'unvaccinated'} subjects")


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < X1_RANGE[0]) or np.any(x > X1_RANGE[1]):
        raise DomainError(f"evaluation points must lie in [{X1_RANGE[0]}, {X1_RANGE[1]}]")
    return x


def fit_stratum(dataset: Dataset, reason: Reason, interaction: bool = False) -> GlmFit:
    """GLM for one reason stratum: logit for symptoms, log link otherwise."""
    reason = Reason(reason)
    if reason not in LINK_OF:
        raise ValueError(f"no estimator for reason {reason.token!r}")
    rows = dataset.stratum(reason)
    _check_arms(rows, f"stratum {reason.token!r}")
    X, names = design_matrix(rows, interaction)
    return fit_glm(X, rows.i, LINK_OF[reason], names=names)


def estimate_stratum_ve(dataset: Dataset, reason: Reason, method: Method = Method.PARAMETRIC,
                        x: Optional[float] = None, interaction: bool = False, s: int = 2) -> VeEstimate:
    """VE from one reason stratum.

    With the parametric method and ``x=None`` (the average), the estimate is
    ``1 - exp(beta_v)``, exact under the no-interaction model. With
    ``interaction=True`` the fit adds a v*x1 term and ``x`` is required. The
    kernel method needs ``x``.
    """
    reason = Reason(reason)
    method = Method(method)
    if reason not in ESTIMAND_OF:
        raise ValueError(f"no estimator for reason {reason.token!r}")
    if x is not None:
        _check_x(x)
    if method is Method.KERNEL:
        if x is None:
            raise ValueError("the kernel method needs an evaluation point x")
        rows = dataset.stratum(reason)
        _check_arms(rows, f"stratum {reason.token!r}")
        fit = kernel_curve(dataset, reason, [x], s=s)
        return _from_log(ESTIMAND_OF[reason], fit.log_rr[0], fit.se_log_rr[0], reason, method, fit.n_stratum)
    fit = fit_stratum(dataset, reason, interaction)
    est, var = fit.contrast(vaccine_contrast(fit.names, x))
    return _from_log(ESTIMAND_OF[reason], est, np.sqrt(var), reason, method, fit.n_obs)


def estimate_pooled_naive(dataset: Dataset, method: Method = Method.PARAMETRIC) -> VeEstimate:
    """One minus the odds ratio among all tested subjects, ignoring the reason.

    Adjusts for (x1, x2) by logistic regression. Biased by design: testing is
    a collider between vaccination and infection.
    """
    method = Method(method)
    if method is not Method.PARAMETRIC:
        raise ValueError("the pooled estimator is parametric only")
    rows = dataset.stratum(None)
    _check_arms(rows, "the tested population")
    X, names = design_matrix(rows)
    fit = fit_glm(X, rows.i, LOGIT, names=names)
    est, var = fit.contrast(vaccine_contrast(names))
    return _from_log(Estimand.VE_POOLED_NAIVE, est, np.sqrt(var), POOLED, method, fit.n_obs)


def inverse_variance_weights(ses) -> np.ndarray:
    """Weights proportional to ``se^-2``, summing to one."""
    ses = np.asarray(ses, dtype=float)
    if ses.size == 0:
        raise WeightMismatchError("no standard errors given")
    if np.any(~(ses > 0)) or np.any(~np.isfinite(ses)):
        raise ZeroSeError("standard errors must be positive and finite")
    prec = ses ** -2.0
    return prec / prec.sum()


def combine_estimates(estimates: Sequence[VeEstimate], weights=None,
                      estimand: Optional[Estimand] = None) -> VeEstimate:
    """Weighted average of independent stratum estimates.

    ``point = sum w_i point_i`` and ``se = sqrt(sum w_i^2 se_i^2)``. The
    interval is built for log(1 - VE), which is closer to normal than the
    right-skewed 1 - VE, and falls back to Wald when ``point >= 1``. ``weights=None`` uses inverse-variance
    weights. Zero weights drop an estimate.
    """
    estimates = list(estimates)
    if weights is None:
        weights = inverse_variance_weights([e.se for e in estimates])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(estimates),) or not estimates:
        raise WeightMismatchError(f"{len(weights)} weights for {len(estimates)} estimates")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise NonPositiveWeightError("weights must be nonnegative with a positive entry")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise WeightMismatchError(f"weights sum to {weights.sum()!r}, not 1")
    used = [(w, e) for w, e in zip(weights, estimates) if w > 0]
    if len(used) == 1:
        return used[0][1]
    point = float(sum(w * e.point for w, e in used))
    se = float(np.sqrt(sum((w * e.se) ** 2 for w, e in used)))
    tags = {e.estimand for _, e in used}
    if estimand is None:
        estimand = Estimand.VE_MARGINAL if len(tags) > 1 else tags.pop()
    methods = {e.method for _, e in used}
    if point < 1.0:
        half = Z95 * se / (1.0 - point)
        lo, hi = 1.0 - (1.0 - point) * np.exp(half), 1.0 - (1.0 - point) * np.exp(-half)
    else:
        lo, hi = point - Z95 * se, point + Z95 * se
    return VeEstimate(estimand=Estimand(estimand), point=point, se=se, ci_low=float(lo),
                      ci_high=float(hi), stratum=COMBINED,
                      method=methods.pop() if len(methods) == 1 else Method.PARAMETRIC,
                      n_used=sum(e.n_used for _, e in used))


def rrp_convert(ve_s: float, rr_p: float) -> float:
    """VE against infection from VE against symptomatic infection and RR_P.

    ``RR_P`` is the vaccinated-vs-unvaccinated relative risk of progressing to
    symptoms once infected, so ``1 - ve_s = (1 - ve) * rr_p``.
    """
    if not ve_s < 1:
        raise DomainError("ve_s must be below 1")
    if not rr_p > 0:
        raise DomainError("rr_p must be positive")
    return 1.0 - (1.0 - ve_s) / rr_p


def rrp_infer(ve_s: float, ve: float) -> float:
    """RR_P implied by VE against symptomatic infection and VE against infection."""
    if not ve_s < 1 or not ve < 1:
        raise DomainError("VE values must be below 1")
    return (1.0 - ve_s) / (1.0 - ve)


class VeCurve(NamedTuple):
    grid: np.ndarray
    point: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    se: np.ndarray


_CURVE_REASONS = {
    Estimand.VE_MARGINAL: (Reason.UNRELATED, Reason.CCT),
    Estimand.VE_S_SEEKER: (Reason.SYMPTOMS,),
}


def _stratum_log_curve(dataset, reason, grid, method, s):
    """Log ratio and its SE over the grid for one stratum."""
    if method is Method.KERNEL:
        rows = dataset.stratum(reason)
        _check_arms(rows, f"stratum {reason.token!r}")
        fit = kernel_curve(dataset, reason, grid, s=s)
        return fit.log_rr, fit.se_log_rr
    fit = fit_stratum(dataset, reason, interaction=True)
    contrasts = np.array([vaccine_contrast(fit.names, x) for x in grid])
    cov = fit.covariance_sandwich
    est = contrasts @ fit.coefficients
    var = np.einsum("ij,jk,ik->i", contrasts, cov, contrasts)
    return est, np.sqrt(var)


def estimate_ve_curve(dataset: Dataset, estimand: Estimand, grid, method: Method = Method.PARAMETRIC,
                      s: int = 2) -> VeCurve:
    """Pointwise VE(x1) with 95% intervals.

    ``VE_marginal`` pools the disease-unrelated and case-contact log relative
    risks by inverse variance at each grid point; ``VE_s_seeker`` uses the symptoms
    stratum. The parametric method fits a v*x1 interaction. Grid points where
    an estimate is unavailable are NaN.
    """
    estimand = Estimand(estimand)
    method = Method(method)
    if estimand not in _CURVE_REASONS:
        raise ValueError(f"no curve estimator for {estimand.value}")
    grid = _check_x(np.atleast_1d(np.asarray(grid, dtype=float)))
    parts = [_stratum_log_curve(dataset, r, grid, method, s) for r in _CURVE_REASONS[estimand]]
    if len(parts) == 1:
        log_ratio, se_log = parts[0]
    else:
        log_ratio, se_log = pool_log_ratios([p[0] for p in parts], [p[1] for p in parts])
    point, se, lo, hi = ve_from_log_ratio(log_ratio, se_log)
    return VeCurve(grid, point, lo, hi, se)

