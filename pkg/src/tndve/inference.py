"""Equality tests between VE estimands and the asymptotic variance of a
weighted combination of stratum relative risks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import WeightMismatchError, ZeroSeError
from .estimators import VeEstimate, vaccine_contrast
from .glm import GlmFit


@dataclass(frozen=True)
class TestResult:
    """Two-sided z-test of equal VE; ``reject`` iff ``p_value < alpha``."""

    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    alpha: float
    reject: bool
    estimands: Tuple[str, str]


def equality_test(e1: VeEstimate, e2: VeEstimate, alpha: float = 0.05) -> TestResult:
    """Test ``VE_1 = VE_2`` for estimates from disjoint, hence independent, strata."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if not (e1.se > 0 and e2.se > 0):
        raise ZeroSeError("both estimates need a positive standard error")
    z = (e1.point - e2.point) / np.sqrt(e1.se ** 2 + e2.se ** 2)
    p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return TestResult(statistic=float(z), p_value=p, alpha=alpha, reject=p < alpha,
                      estimands=(_tag(e1), _tag(e2)))


def _tag(e: VeEstimate) -> str:
    return getattr(e.estimand, "value", str(e.estimand))


def combined_variance(fits: Sequence[GlmFit], weights, reason_probs, x1: Optional[float] = None,
                      n_total: Optional[int] = None, robust: bool = True) -> float:
    """Asymptotic variance of ``sum_r w_r exp(v_r' beta_r)``, divided by ``n_total``.

    Each stratum contributes ``w_r^2 * (P_K / p_r) * v_r' S_r v_r * RR_r^2``
    where ``S_r = n_r * Cov(beta_r)`` is the per-observation covariance,
    ``p_r`` the share of tested subjects with reason r and ``P_K`` the
    combined share of the strata in ``fits``. ``v_r`` selects the vaccine
    coefficient (plus ``x1`` times the interaction when present).
    ``n_total`` defaults to the number of observations across ``fits``.

    With empirical shares ``p_r = n_r / n`` this equals the independent-sum
    variance ``sum w_r^2 Var(RR_r)`` from the delta method.
    """
    fits = list(fits)
    weights = np.asarray(weights, dtype=float)
    probs = np.asarray(reason_probs, dtype=float)
    if weights.shape != (len(fits),) or probs.shape != (len(fits),):
        raise WeightMismatchError("fits, weights and reason_probs must align")
    if np.any(probs <= 0):
        raise ValueError("reason probabilities must be positive")
    if n_total is None:
        n_total = sum(f.n_obs for f in fits)
    p_k = probs.sum()
    total = 0.0
    for fit, w, p in zip(fits, weights, probs):
        vec = vaccine_contrast(fit.names, x1) if fit.names else _default_contrast(fit)
        cov = fit.covariance_sandwich if robust else fit.covariance_model
        sigma0 = fit.n_obs * cov
        rr = np.exp(vec @ fit.coefficients)
        total += w ** 2 * (p_k / p) * float(vec @ sigma0 @ vec) * rr ** 2
    return total / n_total


def _default_contrast(fit: GlmFit) -> np.ndarray:
    # unnamed fits follow the (1, v, ...) column layout
    vec = np.zeros(len(fit.coefficients))
    vec[1] = 1.0
    return vec
