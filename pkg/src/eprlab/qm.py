"""Closed-form quantum predictions for the EPRB polarization experiment.

A polarizer channel with transmittances (t_par, t_perp) transmits light polarized
at angle phi from its axis with probability (s + d*cos 2phi)/2, where s = t_par + t_perp
and d = t_par - t_perp. For the pair state with contrast factor F the joint
detection probability of two channels is eta1*eta2/4 * [s1*s2 + F*d1*d2*cos 2(a,b)].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import (
    ChshResult,
    CountsQuad,
    OrientationSet,
    SingleChannelRates,
    ZeroCountsError,
    chsh_s,
    s_prime_from_rates,
)


@dataclass(frozen=True)
class PolarizerSpec:
    """Transmittances of a polarizer (or a two-channel polarimeter).

    For a polarimeter the + channel transmits t_par of light parallel to the axis and
    t_perp of light perpendicular to it; the - channel is the mirror image, scaled by
    `asymmetry` to model unequal channels.
    """

    t_par: float = 1.0
    t_perp: float = 0.0
    asymmetry: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.t_perp <= self.t_par <= 1.0:
            raise ValueError(f"need 0 <= t_perp <= t_par <= 1, got ({self.t_par}, {self.t_perp})")
        if not 0.9 <= self.asymmetry <= 1.1:
            raise ValueError(f"asymmetry factor must lie in [0.9, 1.1], got {self.asymmetry}")

    @property
    def efficiency(self) -> float:
        """Polarizer efficiency factor (t_par - t_perp) / (t_par + t_perp)."""
        s = self.t_par + self.t_perp
        return 0.0 if s == 0 else (self.t_par - self.t_perp) / s

    @property
    def sum(self) -> float:
        return self.t_par + self.t_perp

    @property
    def diff(self) -> float:
        return self.t_par - self.t_perp

    @classmethod
    def with_efficiency(cls, efficiency: float, t_par: float = 1.0) -> PolarizerSpec:
        """Polarizer with the given efficiency factor and maximum transmission."""
        return cls(t_par, t_par * (1.0 - efficiency) / (1.0 + efficiency))


REMOVED = PolarizerSpec(1.0, 1.0)


@dataclass(frozen=True)
class ApparatusModel:
    f_contrast: float = 1.0
    polarizer_1: PolarizerSpec = field(default_factory=PolarizerSpec)
    polarizer_2: PolarizerSpec = field(default_factory=PolarizerSpec)
    detection_efficiency: float = 1.0
    # collection half-angle the contrast factor stands for; documentation only
    half_angle_deg: float | None = None

    def __post_init__(self):
        if not 0.0 < self.f_contrast <= 1.0:
            raise ValueError(f"f_contrast must lie in (0, 1], got {self.f_contrast}")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ValueError(f"detection_efficiency must lie in (0, 1], got {self.detection_efficiency}")

    @classmethod
    def ideal(cls) -> ApparatusModel:
        return cls()

    @property
    def is_symmetric(self) -> bool:
        return self.polarizer_1.asymmetry == 1.0 and self.polarizer_2.asymmetry == 1.0

    @property
    def contrast(self) -> float:
        """Overall contrast F * eps1 * eps2 multiplying cos 2(a,b)."""
        return self.f_contrast * self.polarizer_1.efficiency * self.polarizer_2.efficiency

    def removing(self, side_1: bool = False, side_2: bool = False) -> ApparatusModel:
        return ApparatusModel(
            self.f_contrast,
            REMOVED if side_1 else self.polarizer_1,
            REMOVED if side_2 else self.polarizer_2,
            self.detection_efficiency,
            self.half_angle_deg,
        )


@dataclass(frozen=True)
class ProbabilityQuad:
    p_pp: float
    p_pm: float
    p_mp: float
    p_mm: float

    @property
    def total(self) -> float:
        return self.p_pp + self.p_pm + self.p_mp + self.p_mm

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_pp, self.p_pm, self.p_mp, self.p_mm)

    def to_counts(self, n: int) -> CountsQuad:
        return CountsQuad(*(int(round(p * n)) for p in self.as_tuple()))


def singles_probabilities(apparatus: ApparatusModel) -> tuple[tuple[float, float], tuple[float, float]]:
    """(p_plus, p_minus) on side I and side II."""
    eta = apparatus.detection_efficiency
    out = []
    for pol in (apparatus.polarizer_1, apparatus.polarizer_2):
        out.append((eta * pol.sum / 2, eta * pol.asymmetry * pol.sum / 2))
    return out[0], out[1]


def joint_probabilities(a: float, b: float, apparatus: ApparatusModel) -> ProbabilityQuad:
    eta = apparatus.detection_efficiency
    p1, p2 = apparatus.polarizer_1, apparatus.polarizer_2
    base = p1.sum * p2.sum
    mod = apparatus.f_contrast * p1.diff * p2.diff * math.cos(2 * (b - a))
    scale = eta * eta / 4
    g1, g2 = p1.asymmetry, p2.asymmetry
    return ProbabilityQuad(
        scale * (base + mod),
        scale * g2 * (base - mod),
        scale * g1 * (base - mod),
        scale * g1 * g2 * (base + mod),
    )


def correlation_qm(a: float, b: float, apparatus: ApparatusModel) -> float:
    """E(a, b) = F * eps1 * eps2 * cos 2(a, b) for symmetric channels."""
    if apparatus.is_symmetric:
        return apparatus.contrast * math.cos(2 * (b - a))
    p = joint_probabilities(a, b, apparatus)
    if p.total <= 0:
        raise ZeroCountsError("apparatus transmits nothing; E is undefined")
    return (p.p_pp - p.p_pm - p.p_mp + p.p_mm) / p.total


def chsh_qm(orientations: OrientationSet, apparatus: ApparatusModel) -> ChshResult:
    return chsh_s(*(correlation_qm(x, y, apparatus) for x, y in orientations.pairs()))


def s_theta_curve(theta, apparatus: ApparatusModel):
    """S(theta) on the equal-spacing sets: kappa * (3 cos 2theta - cos 6theta)."""
    kappa = apparatus.contrast
    return kappa * (3 * np.cos(2 * theta) - np.cos(6 * theta))


def _ds_dtheta(theta: float, kappa: float) -> float:
    return 6 * kappa * (math.sin(6 * theta) - math.sin(2 * theta))


def find_extrema(apparatus: ApparatusModel, grid_points: int = 1000, xtol: float = 1e-12) -> list[tuple[float, float]]:
    """Stationary points (theta, S) of S(theta) on [0, pi/2].

    Brackets sign changes of dS/dtheta on a uniform grid and refines each with Brent's
    method. Endpoints are included when the derivative vanishes there.
    """
    kappa = apparatus.contrast
    if kappa == 0:
        return []
    hi = math.pi / 2
    grid = np.linspace(0.0, hi, grid_points + 1)
    g = 6 * kappa * (np.sin(6 * grid) - np.sin(2 * grid))
    scale = 12 * abs(kappa)
    roots: list[float] = []
    for x, gx in ((0.0, g[0]), (hi, g[-1])):
        if abs(gx) <= 1e-12 * scale:
            roots.append(x)
    for i in range(grid_points):
        g0, g1 = g[i], g[i + 1]
        if abs(g0) <= 1e-12 * scale or abs(g1) <= 1e-12 * scale:
            continue
        if g0 * g1 < 0:
            roots.append(brentq(_ds_dtheta, grid[i], grid[i + 1], args=(kappa,), xtol=xtol))
    # interior grid points that land exactly on a root
    for i in range(1, grid_points):
        if abs(g[i]) <= 1e-12 * scale:
            roots.append(float(grid[i]))
    roots = sorted(set(roots))
    return [(t, float(s_theta_curve(t, apparatus))) for t in roots]


def single_channel_rates_qm(orientations: OrientationSet, apparatus: ApparatusModel, n_pairs: float = 1.0) -> SingleChannelRates:
    """The seven one-channel coincidence rates (per n_pairs emitted pairs)."""
    def rate(x, y, remove_1=False, remove_2=False):
        app = apparatus.removing(remove_1, remove_2)
        return n_pairs * joint_probabilities(x, y, app).p_pp

    o = orientations
    return SingleChannelRates(
        rate(o.a, o.b),
        rate(o.a, o.b_prime),
        rate(o.a_prime, o.b),
        rate(o.a_prime, o.b_prime),
        rate(o.a_prime, 0.0, remove_2=True),
        rate(0.0, o.b, remove_1=True),
        rate(0.0, 0.0, True, True),
    )


def s_prime_qm(orientations: OrientationSet, apparatus: ApparatusModel) -> float:
    return s_prime_from_rates(single_channel_rates_qm(orientations, apparatus)).s_prime
