"""Local hidden-variable (supplementary parameter) models.

A model is a distribution rho(lambda) plus local response functions giving the
probability of outcome + on each side. Response functions take only the local
setting, so non-local models A(lambda, a, b) cannot be written down.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ChshResult, Estimate, OrientationSet, chsh_s, relative_angle

TWO_PI = 2 * math.pi


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""


class BellBoundError(AssertionError):
    """An LHV evaluation exceeded |S| <= 2 beyond its integration tolerance."""


@dataclass(frozen=True)
class Quadrature:
    tol: float = 1e-8
    initial_points: int = 256
    max_depth: int = 60


@dataclass(frozen=True)
class MonteCarlo:
    samples: int = 100_000
    seed: int = 0


class LhvModel(ABC):
    """Interface of a local supplementary-parameter model.

    Subclasses describe rho(lambda) by one of: `atoms()` (discrete support),
    `domain` + `density` (continuous, integrated by quadrature), or only
    `sample_lambda` (Monte Carlo integration).
    """

    is_deterministic: bool = True
    domain: tuple[float, float] | None = None

    @abstractmethod
    def sample_lambda(self, rng: np.random.Generator, size: int) -> np.ndarray: ...

    @abstractmethod
    def response_a(self, lam: np.ndarray, a: float) -> np.ndarray:
        """Probability of + on side I at setting a."""

    @abstractmethod
    def response_b(self, lam: np.ndarray, b: float) -> np.ndarray:
        """Probability of + on side II at setting b."""

    def density(self, lam: np.ndarray) -> np.ndarray:
        lo, hi = self.domain
        return np.full_like(np.asarray(lam, dtype=float), 1.0 / (hi - lo))

    def atoms(self) -> tuple[np.ndarray, np.ndarray] | None:
        return None

    def breakpoints(self, setting: float) -> Sequence[float]:
        """Values of lambda where a response to `setting` jumps (either side).

        Quadrature splits its range at these; adaptive refinement alone can miss two
        jumps that fall inside one initial interval.
        """
        return ()

    def outcome_a(self, lam, a):
        return 2.0 * np.asarray(self.response_a(lam, a), dtype=float) - 1.0

    def outcome_b(self, lam, b):
        return 2.0 * np.asarray(self.response_b(lam, b), dtype=float) - 1.0


def naive_response(lam, theta, tie: int = 1):
    """sign(cos 2(theta - lambda)), with sign(0) = tie."""
    c = np.cos(2.0 * (np.asarray(theta) - np.asarray(lam)))
    out = np.where(c > 0, 1, np.where(c < 0, -1, tie))
    return out if out.ndim else int(out)


def naive_correlation_exact(a: float, b: float) -> float:
    return 1.0 - 4.0 * abs(relative_angle(a, b)) / math.pi


class NaiveModel(LhvModel):
    """Common polarization angle lambda, uniform on [0, 2pi); each side answers + when
    lambda lies within pi/4 of its analyzer axis."""

    is_deterministic = True
    domain = (0.0, TWO_PI)

    def __init__(self, tie: int = 1):
        if tie not in (1, -1):
            raise ValueError("tie must be +1 or -1")
        self.tie = tie

    def sample_lambda(self, rng, size):
        return rng.uniform(0.0, TWO_PI, size)

    def response_a(self, lam, a):
        return (naive_response(lam, a, self.tie) + 1) // 2

    response_b = response_a

    def breakpoints(self, setting):
        return [setting + math.pi / 4 + k * math.pi / 2 for k in range(-4, 5)]

    def __repr__(self):
        return f"NaiveModel(tie={self.tie})"


class FoldedNaiveModel(NaiveModel):
    """The naive model with lambda folded onto [0, pi); responses have period pi."""

    domain = (0.0, math.pi)

    def sample_lambda(self, rng, size):
        return rng.uniform(0.0, math.pi, size)


class MalusModel(LhvModel):
    """Common polarization lambda; each photon passes with Malus probability cos^2."""

    is_deterministic = False
    domain = (0.0, math.pi)

    def sample_lambda(self, rng, size):
        return rng.uniform(0.0, math.pi, size)

    def response_a(self, lam, a):
        return np.cos(np.asarray(a) - np.asarray(lam)) ** 2

    response_b = response_a


class ConstantModel(LhvModel):
    """Both sides answer + with fixed probabilities, whatever lambda and the settings."""

    def __init__(self, p_a: float = 1.0, p_b: float | None = None):
        self.p_a = float(p_a)
        self.p_b = float(p_a if p_b is None else p_b)
        self.is_deterministic = self.p_a in (0.0, 1.0) and self.p_b in (0.0, 1.0)

    def atoms(self):
        return np.zeros(1), np.ones(1)

    def sample_lambda(self, rng, size):
        return np.zeros(size)

    def response_a(self, lam, a):
        return np.full(np.shape(lam), self.p_a)

    def response_b(self, lam, b):
        return np.full(np.shape(lam), self.p_b)


class TableModel(LhvModel):
    """Discrete lambda with response tables over analyzer-angle bins on [0, pi).

    table_a[k, m] is the probability of + on side I for lambda = k when the analyzer
    lies in bin m. 0/1 tables give a deterministic model.
    """

    def __init__(self, weights, table_a, table_b):
        self.weights = np.asarray(weights, dtype=float)
        self.table_a = np.asarray(table_a, dtype=float)
        self.table_b = np.asarray(table_b, dtype=float)
        if np.any(self.weights < 0) or not math.isclose(self.weights.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("weights must be non-negative and sum to 1")
        k = self.weights.size
        if self.table_a.shape[0] != k or self.table_b.shape[0] != k:
            raise ValueError("tables need one row per lambda value")
        for t in (self.table_a, self.table_b):
            if np.any(t < 0) or np.any(t > 1):
                raise ValueError("response probabilities must lie in [0, 1]")
        self.is_deterministic = bool(np.all(np.isin(self.table_a, (0, 1))) and np.all(np.isin(self.table_b, (0, 1))))

    @classmethod
    def random(cls, rng: np.random.Generator, n_lambda: int = 8, n_bins: int = 12, deterministic: bool = False) -> TableModel:
        w = rng.dirichlet(np.ones(n_lambda))
        if deterministic:
            ta = rng.integers(0, 2, (n_lambda, n_bins)).astype(float)
            tb = rng.integers(0, 2, (n_lambda, n_bins)).astype(float)
        else:
            ta = rng.uniform(size=(n_lambda, n_bins))
            tb = rng.uniform(size=(n_lambda, n_bins))
        return cls(w, ta, tb)

    def _bin(self, theta, table):
        m = table.shape[1]
        t = np.mod(np.asarray(theta, dtype=float), math.pi)
        return np.minimum((t / math.pi * m).astype(int), m - 1)

    def atoms(self):
        return np.arange(self.weights.size), self.weights

    def sample_lambda(self, rng, size):
        return rng.choice(self.weights.size, size=size, p=self.weights)

    def response_a(self, lam, a):
        return self.table_a[np.asarray(lam, dtype=int), self._bin(a, self.table_a)]

    def response_b(self, lam, b):
        return self.table_b[np.asarray(lam, dtype=int), self._bin(b, self.table_b)]


# ---------------------------------------------------------------------------
# registry

MODEL_REGISTRY: dict[str, Callable[[], LhvModel]] = {}


def register_model(name: str):
    def deco(factory):
        MODEL_REGISTRY[name] = factory
        return factory

    return deco


register_model("naive")(NaiveModel)
register_model("malus")(MalusModel)
register_model("stochastic-table")(lambda: TableModel.random(np.random.default_rng(0)))
register_model("deterministic-table")(lambda: TableModel.random(np.random.default_rng(0), deterministic=True))


def get_model(name: str) -> LhvModel:
    try:
        return MODEL_REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {', '.join(sorted(MODEL_REGISTRY))}") from None


# ---------------------------------------------------------------------------
# integration over lambda


def adaptive_trapezoid(
    f,
    lo: float,
    hi: float,
    tol: float = 1e-8,
    initial_points: int = 256,
    max_depth: int = 60,
    min_width: float | None = None,
    check: bool = True,
) -> Estimate:
    """Integrate a vectorized f over [lo, hi] by adaptive interval bisection.

    An interval is accepted when halving it changes its trapezoid estimate by less
    than its width share of tol/2, or when it has shrunk below `min_width` (default
    2^-34 of the range), which is how refinement ends at a jump: each jump then costs
    at most |jump| * min_width / 4. Returns the integral and the summed error
    estimate; with `check` a total above tol raises QuadratureError.
    """
    x = np.linspace(lo, hi, initial_points + 1)
    fx = np.asarray(f(x), dtype=float)
    left, right = x[:-1], x[1:]
    fl, fr = fx[:-1], fx[1:]
    total = 0.0
    err = 0.0
    width_all = hi - lo
    if min_width is None:
        min_width = width_all * 2.0**-34
    for _ in range(max_depth):
        mid = 0.5 * (left + right)
        fm = np.asarray(f(mid), dtype=float)
        w = right - left
        coarse = 0.5 * w * (fl + fr)
        fine = 0.25 * w * (fl + 2 * fm + fr)
        diff = np.abs(fine - coarse)
        floor = np.maximum(min_width, 8 * np.finfo(float).eps * np.maximum(np.abs(left), np.abs(right)))
        ok = (diff <= 0.5 * tol * w / width_all) | (w <= floor)
        total += fine[ok].sum()
        err += diff[ok].sum()
        if ok.all():
            if check and err > tol:
                raise QuadratureError(f"error estimate {err:.3g} exceeds tol {tol:.3g}")
            return Estimate(float(total), float(err))
        bad = ~ok
        left = np.concatenate([left[bad], mid[bad]])
        right = np.concatenate([mid[bad], right[bad]])
        fl, fm_b, fr = fl[bad], fm[bad], fr[bad]
        fl, fr = np.concatenate([fl, fm_b]), np.concatenate([fm_b, fr])
    raise QuadratureError(
        f"no convergence after {max_depth} bisections; {left.size} intervals left, "
        f"partial integral {total:.6g}, worst interval [{left[0]:.6g}, {right[0]:.6g}]"
    )


def integrate_lambda(model: LhvModel, g: Callable[[np.ndarray], np.ndarray], integration=None, breakpoints: Sequence[float] = ()) -> Estimate:
    """Integral of rho(lambda) * g(lambda).

    `breakpoints` are known discontinuities of g; quadrature integrates piecewise
    between them.
    """
    if integration is None:
        integration = Quadrature()
    if isinstance(integration, int):
        integration = MonteCarlo(samples=integration)
    atoms = model.atoms()
    if atoms is not None:
        values, weights = atoms
        return Estimate(float(weights @ np.asarray(g(values), dtype=float)), 0.0)
    if isinstance(integration, Quadrature) and model.domain is not None:
        lo, hi = model.domain
        cuts = [lo]
        # cuts closer than the bisection floor would leave unsplittable pieces
        for x in sorted(float(x) for x in breakpoints if lo < x < hi):
            if x - cuts[-1] > (hi - lo) * 2.0**-30:
                cuts.append(x)
        if hi - cuts[-1] <= (hi - lo) * 2.0**-30:
            cuts.pop()
        cuts.append(hi)
        value = err = 0.0
        for x0, x1 in zip(cuts[:-1], cuts[1:]):
            piece = adaptive_trapezoid(
                lambda lam: model.density(lam) * g(lam),
                x0,
                x1,
                integration.tol * (x1 - x0) / (hi - lo),
                integration.initial_points,
                integration.max_depth,
                (hi - lo) * 2.0**-36,
                check=False,
            )
            value += piece.value
            err += piece.sigma
        if err > integration.tol:
            raise QuadratureError(f"error estimate {err:.3g} exceeds tol {integration.tol:.3g}")
        return Estimate(value, err)
    mc = integration if isinstance(integration, MonteCarlo) else MonteCarlo()
    lam = model.sample_lambda(np.random.default_rng(mc.seed), mc.samples)
    vals = np.asarray(g(lam), dtype=float)
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)))


def lhv_singles(model: LhvModel, setting: float, integration=None, side: str = "a") -> tuple[float, float]:
    resp = model.response_a if side == "a" else model.response_b
    p_plus = integrate_lambda(model, lambda lam: resp(lam, setting), integration, model.breakpoints(setting)).value
    return p_plus, 1.0 - p_plus


def lhv_correlation(model: LhvModel, a: float, b: float, integration=None) -> Estimate:
    """E(a, b) = integral of rho * <A>(lambda, a) * <B>(lambda, b)."""
    cuts = [*model.breakpoints(a), *model.breakpoints(b)]
    e = integrate_lambda(model, lambda lam: model.outcome_a(lam, a) * model.outcome_b(lam, b), integration, cuts)
    # summation rounding can push |E| a few ulps past 1
    return Estimate(min(1.0, max(-1.0, e.value)), e.sigma)


def pointwise_s(model: LhvModel, lam, orientations: OrientationSet) -> int:
    """s(lambda) = A(a)[B(b) - B(b')] + A(a')[B(b) + B(b')], always +-2."""
    if not model.is_deterministic:
        raise TypeError("pointwise_s is defined for deterministic models only")
    o = orientations
    lam = np.asarray([lam])
    A, Ap = model.outcome_a(lam, o.a)[0], model.outcome_a(lam, o.a_prime)[0]
    B, Bp = model.outcome_b(lam, o.b)[0], model.outcome_b(lam, o.b_prime)[0]
    s = int(round(A * B - A * Bp + Ap * B + Ap * Bp))
    if s not in (-2, 2):
        raise AssertionError(f"pointwise s = {s} for deterministic responses")
    return s


def lhv_chsh(model: LhvModel, orientations: OrientationSet, integration=None) -> ChshResult:
    estimates = [lhv_correlation(model, x, y, integration) for x, y in orientations.pairs()]
    result = chsh_s(*(e.value for e in estimates), sigmas=[e.sigma for e in estimates])
    # quadrature errors are bounds, MC errors are sigmas; both widen the allowance
    allowance = 10 * sum(e.sigma for e in estimates) + 1e-12
    if abs(result.s_value) > 2.0 + allowance:
        raise BellBoundError(f"|S| = {abs(result.s_value):.6g} exceeds 2 + {allowance:.3g} for {model!r}")
    return result
