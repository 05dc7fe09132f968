"""Synthetic test-negative populations with several reasons for testing.

Subjects are generated column-wise from a single block of uniforms so that a
dataset is a pure function of ``(scenario, seed)``. Perturbations
(misclassification, missing reasons) consume their own child streams of the
same seed, which keeps the base population identical across scenarios that
differ only in the perturbation rates.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, InvalidScenarioError

# coefficients of the infection model on (V, X1, X2, C)
VACCINE_EFFECT = -0.5
AGE_EFFECT = 0.5
SEX_EFFECT = -1.0
CONTACT_EFFECT = 0.1
# extra vaccine-by-age term under effect modification
VACCINE_AGE_EFFECT = -0.1

INTERCEPTS = {"high": -0.6, "low": -2.1}

_STREAM_BASE, _STREAM_MISCLASS, _STREAM_MISSING = range(3)


class Reason(enum.IntEnum):
    SYMPTOMS = 0
    UNRELATED = 1
    CCT = 2
    OTHER = 3
    NOT_TESTED = 4
    MISSING = 5

    @property
    def token(self) -> str:
        return _TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Reason":
        try:
            return _FROM_TOKEN[token.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown reason token {token!r}") from None


_TOKENS = {
    Reason.SYMPTOMS: "symptoms",
    Reason.UNRELATED: "unrelated",
    Reason.CCT: "cct",
    Reason.OTHER: "other",
    Reason.NOT_TESTED: "nottested",
    Reason.MISSING: "missing",
}
_FROM_TOKEN = {v: k for k, v in _TOKENS.items()}


class Prevalence(str, enum.Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class ScenarioConfig:
    """A data-generating scenario.

    ``prevalence`` selects the infection-model intercept (-0.6 for high,
    -2.1 for low). Rates must lie in [0, 1).
    """

    prevalence: Prevalence = Prevalence.HIGH
    effect_modification: bool = False
    misclassification_rate: float = 0.0
    missing_reason_rate: float = 0.0
    n_subjects: int = 10_000
    n_replicates: int = 1000
    base_seed: int = 20240601

    def __post_init__(self):
        prevalence = self.prevalence
        if isinstance(prevalence, str) and not isinstance(prevalence, Prevalence):
            prevalence = prevalence.lower()
        try:
            object.__setattr__(self, "prevalence", Prevalence(prevalence))
        except ValueError:
            raise ConfigError(f"prevalence must be 'high' or 'low', got {self.prevalence!r}") from None
        for name in ("misclassification_rate", "missing_reason_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be positive")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be positive")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")

    @property
    def intercept(self) -> float:
        return INTERCEPTS[self.prevalence.value]

    @property
    def label(self) -> str:
        parts = [self.prevalence.value]
        if self.effect_modification:
            parts.append("em")
        if self.misclassification_rate:
            parts.append(f"mis{self.misclassification_rate:g}")
        if self.missing_reason_rate:
            parts.append(f"miss{self.missing_reason_rate:g}")
        return "-".join(parts)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Subject:
    x1: float
    x2: int
    h: int
    v: int
    c: int
    i: int
    reason: Reason
    tested: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column store of subjects.

    ``h`` is -1 for every subject when the latent healthcare-seeking flag is
    unknown (imported real data).
    """

    x1: np.ndarray
    x2: np.ndarray
    h: np.ndarray
    v: np.ndarray
    c: np.ndarray
    i: np.ndarray
    reason: np.ndarray
    tested: np.ndarray
    scenario: Optional[ScenarioConfig] = None
    seed: Optional[int] = None

    COLUMNS = ("x1", "x2", "h", "v", "c", "i", "reason", "tested")

    def __post_init__(self):
        n = len(self.x1)
        for name in self.COLUMNS:
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")
            col.flags.writeable = False

    def __len__(self) -> int:
        return len(self.x1)

    def __iter__(self) -> Iterator[Subject]:
        for k in range(len(self)):
            yield self.subject(k)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in self.COLUMNS)

    def subject(self, k: int) -> Subject:
        return Subject(
            x1=float(self.x1[k]), x2=int(self.x2[k]), h=int(self.h[k]), v=int(self.v[k]),
            c=int(self.c[k]), i=int(self.i[k]), reason=Reason(int(self.reason[k])),
            tested=int(self.tested[k]),
        )

    def take(self, index) -> "Dataset":
        """Rows selected by a boolean mask or an index array."""
        cols = {n: np.array(getattr(self, n)[index]) for n in self.COLUMNS}
        return Dataset(**cols, scenario=self.scenario, seed=self.seed)

    def with_columns(self, **cols) -> "Dataset":
        return dataclasses.replace(self, **cols)

    def stratum(self, reason: Optional[Reason] = None) -> "Dataset":
        """Tested subjects, optionally restricted to one recorded reason."""
        mask = self.tested == 1
        if reason is not None:
            mask &= self.reason == int(reason)
        return self.take(mask)


def make_rng(seed: int, stream: int = _STREAM_BASE) -> np.random.Generator:
    """Philox generator for one named child stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream,))
    return np.random.Generator(np.random.Philox(ss))


def replicate_seed(base_seed: int, rep_index: int) -> int:
    """64-bit seed of replicate ``rep_index``; independent of execution order."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(1_000_003, int(rep_index)))
    return int(ss.generate_state(1, np.uint64)[0])


def infection_prob(v, x1, x2, h, c, scenario: ScenarioConfig):
    """Pr(I=1 | V, X1, X2, H, C) under the scenario's log-binomial model."""
    v = np.asarray(v, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if scenario.effect_modification:
        vacc = VACCINE_EFFECT * v * np.asarray(h, dtype=float) + VACCINE_AGE_EFFECT * v * x1
    else:
        vacc = VACCINE_EFFECT * v
    eta = scenario.intercept + vacc + AGE_EFFECT * x1 + SEX_EFFECT * np.asarray(x2, dtype=float) \
        + CONTACT_EFFECT * np.asarray(c, dtype=float)
    return np.exp(eta)


def compute_g_factor(x1, x2, h, v, i, scenario: ScenarioConfig):
    """Symptom-testing multiplier that makes the symptom-stratum odds ratio
    equal the relative risk among healthcare seekers.

    Evaluated on the C=0 branch only. Broadcasts over array arguments.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    surv0 = 1.0 - infection_prob(0, x1, x2, h, 0, scenario)
    surv1 = 1.0 - infection_prob(1, x1, x2, h, 0, scenario)
    g = (1.0 - i) * (1.0 - v + v * surv0 / surv1) + i * surv0
    return g[()] if isinstance(g, np.ndarray) else g


def reason_probabilities(x1, x2, h, v, i, scenario: ScenarioConfig) -> np.ndarray:
    """Probabilities of (Symptoms, Unrelated, Other) testing for C=0 subjects.

    Returns an array with a trailing axis of length 3; the not-tested mass is
    one minus the row sum.
    """
    x1 = np.asarray(x1, dtype=float)
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    g = compute_g_factor(x1, x2, h, v, i, scenario)
    p_sym = 0.4 * h * x1 * g
    p_unrel = 0.2 * v + 0.2 * x1
    p_other = 0.4 * i * (1.0 - v)
    return np.stack(np.broadcast_arrays(p_sym, p_unrel, p_other), axis=-1)


def cct_test_prob(x2):
    return 0.9 + 0.1 * np.asarray(x2, dtype=float)


def assign_reason_and_test(x1, x2, h, v, c, i, scenario: ScenarioConfig, rng=None, *, u=None, u_cct=None):
    """Draw (reason, tested) per subject.

    Case contacts get ``Reason.CCT`` and accept the test with probability
    0.9 + 0.1*x2. Everybody else gets one categorical draw over
    symptoms / unrelated / other / not tested. Uniforms may be supplied
    directly through ``u`` and ``u_cct``; otherwise they are drawn from ``rng``.
    """
    c = np.asarray(c)
    n = c.shape[0] if c.ndim else 1
    if u is None:
        u = rng.random(n)
    if u_cct is None:
        u_cct = rng.random(n)
    probs = reason_probabilities(x1, x2, h, v, i, scenario).reshape(n, 3)
    cum = np.cumsum(probs, axis=1)
    # only C=0 subjects use the categorical draw
    if np.any(cum[c.reshape(n) == 0, 2] > 1.0 + 1e-12):
        raise InvalidScenarioError("reason-for-testing probabilities sum above 1")
    u = np.asarray(u).reshape(n)
    cat = (u[:, None] >= cum).sum(axis=1)  # 0..3, 3 = not tested
    reason = np.array([Reason.SYMPTOMS, Reason.UNRELATED, Reason.OTHER, Reason.NOT_TESTED], dtype=np.int8)[cat]
    tested = (cat < 3).astype(np.int8)
    is_cct = c.reshape(n) == 1
    reason[is_cct] = Reason.CCT
    tested[is_cct] = (np.asarray(u_cct).reshape(n)[is_cct] < cct_test_prob(np.asarray(x2).reshape(n)[is_cct])).astype(np.int8)
    return reason, tested


def generate_dataset(scenario: ScenarioConfig, seed: int) -> Dataset:
    """Simulate ``scenario.n_subjects`` subjects and apply configured perturbations."""
    n = scenario.n_subjects
    u = make_rng(seed).random((8, n))
    x1 = 0.5 + 0.5 * u[0]
    x2 = (u[1] < 0.5).astype(np.int8)
    h = (u[2] < x1).astype(np.int8)
    v = (u[3] < 0.6 * x1 + 0.1 * x2).astype(np.int8)
    c = (u[4] < 0.05 * (1 + x2)).astype(np.int8)
    i = (u[5] < infection_prob(v, x1, x2, h, c, scenario)).astype(np.int8)
    reason, tested = assign_reason_and_test(x1, x2, h, v, c, i, scenario, u=u[6], u_cct=u[7])
    data = Dataset(x1=x1, x2=x2, h=h, v=v, c=c, i=i, reason=reason, tested=tested,
                   scenario=scenario, seed=int(seed))
    if scenario.misclassification_rate > 0:
        data = apply_misclassification(data, scenario.misclassification_rate,
                                       make_rng(seed, _STREAM_MISCLASS))
    if scenario.missing_reason_rate > 0:
        data = apply_missing_reasons(data, scenario.missing_reason_rate,
                                     make_rng(seed, _STREAM_MISSING))
    return data


def apply_misclassification(data: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    """Flip every subject's recorded infection status with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("misclassification rate must be in [0, 1)")
    flip = rng.random(len(data)) < rate
    return data.with_columns(i=np.where(flip, 1 - data.i, data.i).astype(np.int8))


def apply_missing_reasons(data: Dataset, rate: float, rng: np.random.Generator) -> Dataset:
    """Replace tested subjects' reason by ``Reason.MISSING`` with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("missing-reason rate must be in [0, 1)")
    drop = (rng.random(len(data)) < rate) & (data.tested == 1)
    return data.with_columns(reason=np.where(drop, np.int8(Reason.MISSING), data.reason).astype(np.int8))


def true_ve(scenario: ScenarioConfig, x1, conditioning: str = "marginal"):
    """True VE at age ``x1``.

    ``conditioning="marginal"`` gives VE(x) over healthcare-seeking behavior;
    ``"seeker"`` gives VE(x, H=1). Both equal 1 - exp(-0.5) without effect
    modification.
    """
    x1 = np.asarray(x1, dtype=float)
    if conditioning not in ("marginal", "seeker"):
        raise ValueError(f"conditioning must be 'marginal' or 'seeker', got {conditioning!r}")
    if not scenario.effect_modification:
        out = np.full_like(x1, 1.0 - np.exp(VACCINE_EFFECT))
    elif conditioning == "seeker":
        out = 1.0 - np.exp(VACCINE_EFFECT + VACCINE_AGE_EFFECT * x1)
    else:
        # H ~ Bernoulli(x1) independently of V given X, so the RR is a mixture
        rr = x1 * np.exp(VACCINE_EFFECT + VACCINE_AGE_EFFECT * x1) + (1 - x1) * np.exp(VACCINE_AGE_EFFECT * x1)
        out = 1.0 - rr
    return out[()] if out.ndim == 0 else out
