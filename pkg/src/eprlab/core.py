"""Shared domain types, correlation estimators and CHSH combiners.

Angles are plain floats in radians. Analyzer orientations are normalized to
[0, pi) because linear polarization has period pi.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

PI = math.pi
CHSH_BOUND = 2.0


def normalize_angle(theta: float) -> float:
    """Reduce an analyzer orientation to [0, pi)."""
    value = math.fmod(theta, PI)
    if value < 0.0:
        value += PI
    # fmod of a value just below a multiple of pi can round up to pi
    if value >= PI:
        value = 0.0
    return value


def relative_angle(a: float, b: float) -> float:
    """Relative orientation (a, b) = b - a reduced to [-pi/2, pi/2)."""
    d = math.fmod(b - a, PI)
    if d >= PI / 2:
        d -= PI
    elif d < -PI / 2:
        d += PI
    return d


def deg(x: float) -> float:
    return math.radians(x)


@dataclass(frozen=True)
class OrientationSet:
    """The four analyzer orientations (a, a', b, b') of one CHSH configuration."""

    a: float
    a_prime: float
    b: float
    b_prime: float

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            object.__setattr__(self, name, normalize_angle(float(getattr(self, name))))

    @classmethod
    def from_degrees(cls, a: float, a_prime: float, b: float, b_prime: float) -> OrientationSet:
        return cls(deg(a), deg(a_prime), deg(b), deg(b_prime))

    @classmethod
    def from_theta(cls, theta: float, origin: float = 0.0) -> OrientationSet:
        """Equal-spacing set with (a,b) = (b,a') = (a',b') = theta.

        theta = pi/8 gives the maximal-violation set; theta = 3*pi/8 the minimal one.
        """
        return cls(origin, origin + 2 * theta, origin + theta, origin + 3 * theta)

    def pairs(self) -> tuple[tuple[float, float], ...]:
        """Orientation pairs in CHSH order: (a,b), (a,b'), (a',b), (a',b')."""
        return (
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        )

    def degrees(self) -> tuple[float, float, float, float]:
        return tuple(math.degrees(x) for x in (self.a, self.a_prime, self.b, self.b_prime))


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float

    def __iter__(self):
        yield self.value
        yield self.sigma


@dataclass(frozen=True)
class CountsQuad:
    """Coincidence counts in the ++, +-, -+, -- channel pairs."""

    n_pp: int
    n_pm: int
    n_mp: int
    n_mm: int

    def __post_init__(self):
        for name in ("n_pp", "n_pm", "n_mp", "n_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.n_pp + self.n_pm + self.n_mp + self.n_mm

    def as_array(self) -> np.ndarray:
        return np.array([self.n_pp, self.n_pm, self.n_mp, self.n_mm])


class ZeroCountsError(ValueError):
    """An estimator was asked to normalize by zero counts."""


# sign of each channel pair in the correlation coefficient: ++, +-, -+, --
CHANNEL_SIGNS = np.array([1.0, -1.0, -1.0, 1.0])


def correlation_from_counts(counts: CountsQuad) -> Estimate:
    """Correlation coefficient E = (N++ - N+- - N-+ + N--) / N.

    The sigma treats the four counts as multinomial with fixed total, so by the
    delta method var(E) = (1 - E^2) / N.
    """
    total = counts.total
    if total <= 0:
        raise ZeroCountsError("correlation_from_counts needs a positive total count")
    e = (counts.n_pp - counts.n_pm - counts.n_mp + counts.n_mm) / total
    return Estimate(e, math.sqrt(max(0.0, 1.0 - e * e) / total))


def correlation_from_rates(values: Sequence[float], variances: Sequence[float]) -> Estimate:
    """Correlation coefficient from four (possibly background-subtracted) rates.

    Inputs are independent with the given variances (Poisson propagation). For raw
    counts with variances equal to the counts this coincides with the multinomial sigma.
    """
    t = np.asarray(values, dtype=float)
    var = np.asarray(variances, dtype=float)
    y = t.sum()
    if y <= 0:
        raise ZeroCountsError("correlation_from_rates needs a positive total rate")
    e = float(CHANNEL_SIGNS @ t / y)
    grad = (CHANNEL_SIGNS - e) / y
    return Estimate(e, float(math.sqrt(grad**2 @ var)))


def bootstrap_correlation_sigma(counts: CountsQuad, n_resamples: int = 10_000, seed: int = 0) -> float:
    """Multinomial-bootstrap standard deviation of E (independent oracle)."""
    total = counts.total
    if total <= 0:
        raise ZeroCountsError("bootstrap needs a positive total count")
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(total, counts.as_array() / total, size=n_resamples)
    e = draws @ CHANNEL_SIGNS / total
    return float(e.std(ddof=1))


def bootstrap_chsh_sigma(
    quads: Sequence[CountsQuad],
    n_resamples: int = 10_000,
    seed: int = 0,
    accidentals: Sequence[Sequence[float]] | None = None,
) -> float:
    """Bootstrap sigma of S built from four independently resampled count quads.

    Without `accidentals` each quad is resampled multinomially at fixed total. With
    them (mean of two delayed windows per channel pair) raw and delayed-window
    counts are resampled as Poisson variables and E uses the subtracted counts.
    """
    if len(quads) != 4:
        raise ValueError("need the four quads in CHSH order")
    rng = np.random.default_rng(seed)
    signs = np.array([1.0, -1.0, 1.0, 1.0])
    s = np.zeros(n_resamples)
    for k, (sign, q) in enumerate(zip(signs, quads)):
        total = q.total
        if total <= 0:
            raise ZeroCountsError("bootstrap needs a positive total count")
        if accidentals is None:
            draws = rng.multinomial(total, q.as_array() / total, size=n_resamples)
            s += sign * (draws @ CHANNEL_SIGNS) / total
            continue
        acc = np.asarray(accidentals[k], dtype=float)
        true = rng.poisson(q.as_array(), size=(n_resamples, 4)) - rng.poisson(2 * acc, size=(n_resamples, 4)) / 2
        sums = true.sum(axis=1)
        if np.any(sums <= 0):
            raise ZeroCountsError("subtracted total not positive in a resample; increase the duration")
        s += sign * (true @ CHANNEL_SIGNS) / sums
    return float(s.std(ddof=1))


def scatter_sigma(values: Iterable[float]) -> Estimate:
    """Mean and standard error from the scatter of repeated per-run estimates."""
    v = np.asarray(list(values), dtype=float)
    if v.size < 2:
        raise ValueError("need at least two runs to estimate scatter")
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)))


def significance(value: float, sigma: float, bound_low: float, bound_high: float) -> float:
    """Number of standard deviations by which value lies outside [bound_low, bound_high]."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if value > bound_high:
        return (value - bound_high) / sigma
    if value < bound_low:
        return (bound_low - value) / sigma
    return 0.0


def _significance_or_inf(value, sigma, low, high):
    if sigma > 0:
        return significance(value, sigma, low, high)
    return 0.0 if low <= value <= high else math.inf


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    sigma: float = 0.0
    bound_low: float = -CHSH_BOUND
    bound_high: float = CHSH_BOUND
    significance: float = 0.0

    @property
    def violates(self) -> bool:
        return not (self.bound_low <= self.s_value <= self.bound_high)


@dataclass(frozen=True)
class SPrimeResult:
    s_prime: float
    sigma: float = 0.0
    bound_low: float = -1.0
    bound_high: float = 0.0
    significance: float = 0.0

    @property
    def violates(self) -> bool:
        return not (self.bound_low <= self.s_prime <= self.bound_high)


CHSH_SIGNS = (1.0, -1.0, 1.0, 1.0)


def chsh_s(
    e_ab: float,
    e_ab_prime: float,
    e_aprime_b: float,
    e_aprime_bprime: float,
    sigmas: Sequence[float] | None = None,
) -> ChshResult:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b')."""
    es = (e_ab, e_ab_prime, e_aprime_b, e_aprime_bprime)
    if any(abs(e) > 1.0 for e in es):
        warnings.warn(f"correlation outside [-1, 1]: {es}", RuntimeWarning, stacklevel=2)
    s = sum(sign * e for sign, e in zip(CHSH_SIGNS, es))
    sigma = 0.0
    if sigmas is not None:
        if len(sigmas) != 4 or any(x < 0 for x in sigmas):
            raise ValueError("sigmas must be four non-negative numbers")
        sigma = math.sqrt(sum(x * x for x in sigmas))
    # clamp only for the significance figure; s_value keeps the raw statistics
    s_clamped = sum(sign * min(1.0, max(-1.0, e)) for sign, e in zip(CHSH_SIGNS, es))
    return ChshResult(s, sigma, significance=_significance_or_inf(s_clamped, sigma, -CHSH_BOUND, CHSH_BOUND))


def chsh_from_estimates(estimates: Sequence[Estimate]) -> ChshResult:
    return chsh_s(*(e.value for e in estimates), sigmas=[e.sigma for e in estimates])


@dataclass(frozen=True)
class SingleChannelRates:
    """Coincidence rates of a one-channel experiment; infinity marks a removed polarizer.

    Values may be raw counts or background-subtracted counts. `variances` holds the
    variance of each field when it is not the Poisson default (the value itself).
    """

    n_ab: float
    n_ab_prime: float
    n_aprime_b: float
    n_aprime_bprime: float
    n_aprime_inf: float
    n_inf_b: float
    n_inf_inf: float
    variances: Mapping[str, float] = field(default_factory=dict)

    FIELDS = ("n_ab", "n_ab_prime", "n_aprime_b", "n_aprime_bprime", "n_aprime_inf", "n_inf_b", "n_inf_inf")

    def __post_init__(self):
        for name in self.FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    def variance(self, name: str) -> float:
        return float(self.variances.get(name, getattr(self, name)))


# coefficients of the numerator of S'
_S_PRIME_COEFFS = {
    "n_ab": 1.0,
    "n_ab_prime": -1.0,
    "n_aprime_b": 1.0,
    "n_aprime_bprime": 1.0,
    "n_aprime_inf": -1.0,
    "n_inf_b": -1.0,
}


def s_prime_from_rates(rates: SingleChannelRates) -> SPrimeResult:
    """S' = [N(a,b) - N(a,b') + N(a',b) + N(a',b') - N(a',inf) - N(inf,b)] / N(inf,inf)."""
    denom = rates.n_inf_inf
    if denom <= 0:
        raise ZeroCountsError("S' needs N(inf, inf) > 0")
    num = sum(c * getattr(rates, k) for k, c in _S_PRIME_COEFFS.items())
    s = num / denom
    var = sum(rates.variance(k) for k in _S_PRIME_COEFFS) / denom**2 + s * s * rates.variance("n_inf_inf") / denom**2
    sigma = math.sqrt(var)
    return SPrimeResult(s, sigma, significance=_significance_or_inf(s, sigma, -1.0, 0.0))


def s_prime_result(value: float, sigma: float) -> SPrimeResult:
    return SPrimeResult(value, sigma, significance=_significance_or_inf(value, sigma, -1.0, 0.0))
