"""Replicated simulation experiments and their performance summaries.

Replicate ``k`` of a scenario uses the seed ``replicate_seed(base_seed, k)``,
so any subset of replicates can run in any order on any number of worker
processes. Results are collected by replicate index and reduced in that
order, which keeps summaries bit-identical across worker counts.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import AllReplicatesFailedError, ConfigError, LengthMismatchError, TNDError, ZeroVarianceError
from .estimators import (
    Estimand,
    Method,
    Z95,
    combine_estimates,
    estimate_pooled_naive,
    estimate_stratum_ve,
    estimate_ve_curve,
)
from .simulate import Reason, ScenarioConfig, generate_dataset, replicate_seed, true_ve

ODDS_RATIO_S = "odds_ratio_s"
ODDS_RATIO_ALL = "odds_ratio_all"
STRATIFIED = "stratified"
STRATIFIED_ALL = "stratified_all"
ESTIMATORS = (ODDS_RATIO_S, ODDS_RATIO_ALL, STRATIFIED, STRATIFIED_ALL)

# estimand each curve estimator targets, and how its truth is conditioned
CURVE_ESTIMANDS = {Estimand.VE_MARGINAL: "marginal", Estimand.VE_S_SEEKER: "seeker"}


@dataclass
class McSummary:
    estimator: str
    truth: float
    bias: float
    empirical_se: float
    avg_estimated_se: float
    coverage: float
    relative_efficiency: float = float("nan")
    n_replicates: int = 0
    n_failed: int = 0

    def as_row(self) -> dict:
        return {
            "estimator": self.estimator, "truth": self.truth, "bias": self.bias,
            "empirical_se": self.empirical_se, "avg_se": self.avg_estimated_se,
            "coverage": self.coverage, "relative_efficiency": self.relative_efficiency,
            "n_replicates": self.n_replicates, "n_failed": self.n_failed,
        }


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TNDError:
        return None


def run_replicate(scenario: ScenarioConfig, rep_index: int, method: Method = Method.PARAMETRIC,
                  x: Optional[float] = None) -> Dict[str, object]:
    """All four table estimators on replicate ``rep_index``.

    A failing estimator (non-convergence, empty cell, ...) is recorded as
    ``None``; combinations use whichever strata succeeded only if all of their
    components did.
    """
    if not 0 <= rep_index < scenario.n_replicates:
        raise ConfigError(f"replicate index {rep_index} outside [0, {scenario.n_replicates})")
    data = generate_dataset(scenario, replicate_seed(scenario.base_seed, rep_index))
    method = Method(method)
    if method is Method.KERNEL and x is None:
        x = 0.75
    s = _safe(estimate_stratum_ve, data, Reason.SYMPTOMS, method, x)
    u = _safe(estimate_stratum_ve, data, Reason.UNRELATED, method, x)
    c = _safe(estimate_stratum_ve, data, Reason.CCT, method, x)
    out = {
        ODDS_RATIO_S: s,
        ODDS_RATIO_ALL: _safe(estimate_pooled_naive, data) if method is Method.PARAMETRIC else None,
        STRATIFIED: None,
        STRATIFIED_ALL: None,
    }
    if u is not None and c is not None:
        out[STRATIFIED] = _safe(combine_estimates, [u, c])
        if s is not None:
            out[STRATIFIED_ALL] = _safe(combine_estimates, [s, u, c])
    return out


def summarize(estimates, ses, truth: float, ci_low=None, ci_high=None, estimator: str = "") -> McSummary:
    """Bias, empirical SE, mean estimated SE and coverage of replicate estimates.

    Coverage uses the given interval bounds, or the Wald interval
    ``estimate +/- 1.96 se`` when none are given.
    """
    est = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if est.shape != ses.shape:
        raise LengthMismatchError(f"{est.size} estimates but {ses.size} standard errors")
    if est.size < 2:
        raise LengthMismatchError("at least two replicates are needed")
    if ci_low is None:
        ci_low, ci_high = est - Z95 * ses, est + Z95 * ses
    lo = np.asarray(ci_low, dtype=float)
    hi = np.asarray(ci_high, dtype=float)
    if lo.shape != est.shape or hi.shape != est.shape:
        raise LengthMismatchError("interval bounds must match the estimates")
    return McSummary(
        estimator=estimator, truth=float(truth), bias=float(est.mean() - truth),
        empirical_se=float(est.std(ddof=1)), avg_estimated_se=float(ses.mean()),
        coverage=float(np.mean((lo <= truth) & (truth <= hi))), n_replicates=int(est.size),
    )


def relative_efficiency(reference: McSummary, others: Sequence[McSummary]) -> List[McSummary]:
    """Copies of ``others`` with ``relative_efficiency = ref_se^2 / se^2``."""
    if not reference.empirical_se > 0:
        raise ZeroVarianceError("reference estimator has zero empirical SE")
    out = []
    for o in others:
        re = reference.empirical_se ** 2 / o.empirical_se ** 2 if o.empirical_se > 0 else math.inf
        out.append(McSummary(**{**o.__dict__, "relative_efficiency": re}))
    return out


def _compact(est):
    return None if est is None else (est.point, est.se, est.ci_low, est.ci_high)


def _table_chunk(args):
    scenario, indices, method, x = args
    rows = []
    for k in indices:
        res = run_replicate(scenario, k, method, x)
        rows.append({name: _compact(res[name]) for name in ESTIMATORS})
    return rows


def _chunks(n, workers):
    size = max(1, math.ceil(n / (4 * workers)))
    return [range(a, min(n, a + size)) for a in range(0, n, size)]


def _map_ordered(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_replicates(scenario: ScenarioConfig, workers: int = 1, method: Method = Method.PARAMETRIC,
                   x: Optional[float] = None) -> List[dict]:
    """Per-replicate ``(point, se, ci_low, ci_high)`` tuples, or ``None`` on failure."""
    n = scenario.n_replicates
    tasks = [(scenario, idx, Method(method), x) for idx in _chunks(n, workers)]
    return [row for chunk in _map_ordered(_table_chunk, tasks, workers) for row in chunk]


def table_truth(scenario: ScenarioConfig) -> float:
    if scenario.effect_modification:
        raise ConfigError("table summaries need homogeneous VE; use run_curve_monte_carlo")
    return float(true_ve(scenario, 0.75))


def summarize_replicates(rows: List[dict], truth: float) -> List[McSummary]:
    """Table summaries from :func:`run_replicates` output, with efficiency relative
    to the symptoms odds ratio."""
    out = []
    for name in ESTIMATORS:
        ok = [r[name] for r in rows if r[name] is not None]
        failed = len(rows) - len(ok)
        if not ok and name == ODDS_RATIO_ALL:
            continue  # not computed for kernel runs
        if len(ok) < 2:
            raise AllReplicatesFailedError(f"{name}: only {len(ok)} of {len(rows)} replicates succeeded")
        arr = np.array(ok)
        summary = summarize(arr[:, 0], arr[:, 1], truth, arr[:, 2], arr[:, 3], estimator=name)
        summary.n_failed = failed
        out.append(summary)
    ref = next((s for s in out if s.estimator == ODDS_RATIO_S), None)
    if ref is not None and ref.empirical_se > 0:
        out = relative_efficiency(ref, out)
    return out


def run_monte_carlo(scenario: ScenarioConfig, workers: int = 1, method: Method = Method.PARAMETRIC,
                    x: Optional[float] = None) -> List[McSummary]:
    """Table summaries over ``scenario.n_replicates`` replicates."""
    if scenario.n_replicates < 2:
        raise ConfigError("a Monte Carlo run needs at least two replicates")
    truth = table_truth(scenario)
    return summarize_replicates(run_replicates(scenario, workers, method, x), truth)


@dataclass
class CurveSummary:
    """Pointwise Monte Carlo summary of a VE curve estimator."""

    estimand: Estimand
    grid: np.ndarray
    truth: np.ndarray
    mean_estimate: np.ndarray
    mean_ci_low: np.ndarray
    mean_ci_high: np.ndarray
    coverage: np.ndarray
    empirical_se: np.ndarray
    avg_estimated_se: np.ndarray
    n_available: np.ndarray
    n_replicates: int
    n_failed: int = 0
    method: Method = Method.PARAMETRIC
    extra: dict = field(default_factory=dict)


def _curve_chunk(args):
    scenario, indices, estimands, grid, method = args
    rows = []
    for k in indices:
        data = generate_dataset(scenario, replicate_seed(scenario.base_seed, k))
        row = {}
        for est in estimands:
            try:
                curve = estimate_ve_curve(data, est, grid, method)
                row[est] = np.stack([curve.point, curve.se, curve.ci_low, curve.ci_high])
            except TNDError:
                row[est] = None
        rows.append(row)
    return rows


def run_curve_monte_carlo(scenario: ScenarioConfig, grid, estimands=(Estimand.VE_MARGINAL, Estimand.VE_S_SEEKER),
                          method: Method = Method.PARAMETRIC, workers: int = 1) -> Dict[Estimand, CurveSummary]:
    """Pointwise bias and coverage of the VE curve estimators.

    ``VE_marginal`` is compared with population VE(x1) and ``VE_s_seeker``
    with VE(x1) among healthcare seekers.
    """
    grid = np.asarray(grid, dtype=float)
    estimands = tuple(Estimand(e) for e in estimands)
    for e in estimands:
        if e not in CURVE_ESTIMANDS:
            raise ConfigError(f"no curve estimator for {e.value}")
    n = scenario.n_replicates
    tasks = [(scenario, idx, estimands, grid, Method(method)) for idx in _chunks(n, workers)]
    rows = [row for chunk in _map_ordered(_curve_chunk, tasks, workers) for row in chunk]
    out = {}
    for e in estimands:
        ok = [r[e] for r in rows if r[e] is not None]
        if len(ok) < 2:
            raise AllReplicatesFailedError(f"{e.value}: only {len(ok)} of {n} replicates succeeded")
        arr = np.array(ok)  # replicate x (point, se, lo, hi) x grid
        truth = np.asarray(true_ve(scenario, grid, CURVE_ESTIMANDS[e]), dtype=float)
        point, se, lo, hi = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
        avail = np.isfinite(point)
        with np.errstate(invalid="ignore"):
            covered = np.where(avail, (lo <= truth) & (truth <= hi), False)
            n_av = avail.sum(axis=0)
            out[e] = CurveSummary(
                estimand=e, grid=grid, truth=truth,
                mean_estimate=_nanmean(point, avail),
                mean_ci_low=_nanmean(lo, avail), mean_ci_high=_nanmean(hi, avail),
                coverage=np.where(n_av > 0, covered.sum(axis=0) / np.maximum(n_av, 1), np.nan),
                empirical_se=_nanstd(point, avail), avg_estimated_se=_nanmean(se, avail),
                n_available=n_av, n_replicates=n, n_failed=n - len(ok), method=Method(method),
            )
    return out


def _nanmean(a, mask):
    total = np.where(mask, a, 0.0).sum(axis=0)
    count = mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / count, np.nan)


def _nanstd(a, mask):
    mean = _nanmean(a, mask)
    count = mask.sum(axis=0)
    dev = np.where(mask, a - mean, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 1, np.sqrt((dev ** 2).sum(axis=0) / (count - 1)), np.nan)
