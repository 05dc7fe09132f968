"""Exact-enumeration example of collider bias in a pooled test-negative analysis.

A binary confounder X and vaccination V are independent fair coins and
``log Pr(I=1 | V, X) = a + b V + c X``. Subjects are tested through three
channels: symptoms with probability ``0.2 X + 0.2 I X``, screening with
``0.4 V`` and other reasons with ``0.1 V I``. Testing depends on both V and I,
so conditioning on T=1 opens a path between them and the pooled odds ratio
among the tested no longer measures the vaccine effect.

How the three channels combine is a modelling choice. ``"independent"``
treats them as separate Bernoulli events, so a subject is tested when any
fires; ``"exclusive"`` treats the probabilities as those of disjoint joint
events and adds them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError

CHANNELS = ("independent", "exclusive")


@dataclass(frozen=True)
class DemoModel:
    intercept: float = -0.5
    vaccine_effect: float = -0.5
    confounder_effect: float = -1.5
    p_x: float = 0.5
    p_v: float = 0.5
    # (base, per-infection) symptom testing among X=1
    symptoms: tuple = (0.2, 0.2)
    screening: float = 0.4
    other: float = 0.1


@dataclass
class BiasDemo:
    true_ve: float
    pooled_ve: float
    adjusted_ve: float
    stratum_ve: Dict[int, Optional[float]] = field(default_factory=dict)
    channels: str = "independent"


def _test_prob(x, v, i, model: DemoModel, channels: str) -> float:
    p = (model.symptoms[0] * x + model.symptoms[1] * i * x, model.screening * v, model.other * v * i)
    if channels == "independent":
        return 1.0 - float(np.prod([1.0 - q for q in p]))
    total = float(sum(p))
    if total > 1.0:
        raise ConfigError("exclusive testing channels have total probability above 1")
    return total


def joint_tested(model: DemoModel = DemoModel(), channels: str = "independent") -> np.ndarray:
    """Pr(X=x, V=v, I=i, T=1) as an array indexed ``[x, v, i]``."""
    if channels not in CHANNELS:
        raise ConfigError(f"channels must be one of {CHANNELS}, got {channels!r}")
    out = np.zeros((2, 2, 2))
    for x, v, i in itertools.product((0, 1), repeat=3):
        p_inf = np.exp(model.intercept + model.vaccine_effect * v + model.confounder_effect * x)
        if p_inf > 1:
            raise ConfigError("infection probability above 1")
        p_cov = (model.p_x if x else 1 - model.p_x) * (model.p_v if v else 1 - model.p_v)
        p_i = p_inf if i else 1 - p_inf
        out[x, v, i] = p_cov * p_i * _test_prob(x, v, i, model, channels)
    return out


def _odds_ratio(table) -> Optional[float]:
    """Odds ratio of I on V from a [v, i] table; None when a cell is empty."""
    if np.any(table <= 0):
        return None
    return float(table[1, 1] * table[0, 0] / (table[1, 0] * table[0, 1]))


def _logistic_vaccine_coef(joint) -> float:
    """V coefficient of a main-effects logistic fit of I on (V, X), weighted by
    the exact cell probabilities."""
    rows = [(x, v, i, joint[x, v, i]) for x, v, i in itertools.product((0, 1), repeat=3)]
    X = np.array([[1.0, v, x] for x, v, _, _ in rows])
    y = np.array([i for _, _, i, _ in rows], dtype=float)
    w = np.array([p for *_, p in rows])
    beta = np.zeros(3)
    for _ in range(200):
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        grad = X.T @ (w * (y - mu))
        info = (X * (w * mu * (1 - mu))[:, None]).T @ X
        # lstsq: X is constant among the tested when testing ignores X=0
        step = np.linalg.lstsq(info, grad, rcond=None)[0]
        beta += step
        if np.max(np.abs(step)) < 1e-14:
            break
    return float(beta[1])


def demo_bias(model: DemoModel = DemoModel(), channels: str = "independent") -> BiasDemo:
    """Population VE against the limits of pooled odds-ratio estimators.

    ``pooled_ve`` is one minus the crude odds ratio of I on V among all tested
    subjects. ``adjusted_ve`` adjusts for X through a logistic fit on the
    exact distribution, and ``stratum_ve`` gives the X-specific values (None
    when a stratum has an empty cell, e.g. no unvaccinated subject is tested).
    """
    joint = joint_tested(model, channels)
    crude = _odds_ratio(joint.sum(axis=0))
    strata = {}
    for x in (0, 1):
        or_x = _odds_ratio(joint[x])
        strata[x] = None if or_x is None else 1.0 - or_x
    return BiasDemo(
        true_ve=float(1.0 - np.exp(model.vaccine_effect)),
        pooled_ve=float("nan") if crude is None else 1.0 - crude,
        adjusted_ve=1.0 - float(np.exp(_logistic_vaccine_coef(joint))),
        stratum_ve=strata,
        channels=channels,
    )
