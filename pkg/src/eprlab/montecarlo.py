"""Event-level simulation of static (fixed-analyzer) experiments.

Pairs are emitted as a homogeneous Poisson process; photon 2 follows photon 1 after
an exponential cascade delay. Each photon is collected with the apparatus detection
efficiency independently of polarization, so the simulator satisfies fair sampling
by construction. Accidental coincidences come from window overlaps of photons from
different pairs. Times are integer picoseconds.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .core import (
    ChshResult,
    CountsQuad,
    Estimate,
    OrientationSet,
    SingleChannelRates,
    SPrimeResult,
    ZeroCountsError,
    chsh_from_estimates,
    correlation_from_rates,
    s_prime_from_rates,
)
from .lhv import LhvModel, get_model
from .qm import ApparatusModel, PolarizerSpec

PS = 1e12  # picoseconds per second

PLUS, MINUS, LOST = 1, -1, 0
CHANNEL_PAIRS = ((PLUS, PLUS), (PLUS, MINUS), (MINUS, PLUS), (MINUS, MINUS))


@dataclass(frozen=True)
class PairSource:
    cascade_rate: float = 4e7
    tau_r: float = 5e-9
    # unpaired photons per second reaching each side (before collection losses)
    uncorrelated_rate: float = 0.0

    def __post_init__(self):
        if self.cascade_rate < 0 or self.tau_r <= 0 or self.uncorrelated_rate < 0:
            raise ValueError("cascade_rate and uncorrelated_rate must be >= 0 and tau_r > 0")


@dataclass(frozen=True)
class ExperimentPlan:
    scheme: str
    apparatus: ApparatusModel
    orientations: OrientationSet
    source: PairSource = field(default_factory=PairSource)
    outcome_model: str | LhvModel = "qm"
    duration: float = 1.0  # seconds per run configuration
    window: float = 19e-9
    seed: int = 0
    accidental_delay: float = 200e-9
    slice_duration: float = 1.0

    def __post_init__(self):
        if self.scheme not in ("two-channel", "one-channel"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.duration <= 0 or self.window <= 0 or self.slice_duration <= 0:
            raise ValueError("duration, window and slice_duration must be positive")
        if self.accidental_delay <= self.window:
            raise ValueError("accidental_delay must exceed the coincidence window")

    @property
    def model(self) -> LhvModel | None:
        if isinstance(self.outcome_model, LhvModel):
            return self.outcome_model
        if self.outcome_model == "qm":
            return None
        return get_model(self.outcome_model)


# ---------------------------------------------------------------------------
# outcome sampling


def qm_projections(a, b, f_contrast, u1, u2, u3):
    """Two-step projection picture: photon 1 is projected on a (+) or its
    perpendicular (-) with probability 1/2; photon 2, now polarized along the
    projected axis, passes b with the Malus probability cos^2. With probability
    1 - F photon 2 carries no polarization memory (contrast loss).

    Returns q1, q2 in {+1, -1} (projection results, before any transmission loss).
    """
    q1 = np.where(u1 < 0.5, 1, -1)
    pol1 = np.asarray(a) + np.where(q1 == 1, 0.0, math.pi / 2)
    p_par = np.where(u2 < f_contrast, np.cos(np.asarray(b) - pol1) ** 2, 0.5)
    q2 = np.where(u3 < p_par, 1, -1)
    return q1, q2


def qm_projections_side2_first(a, b, f_contrast, u1, u2, u3):
    """Same law with photon 2 measured first (used to check side-exchange symmetry)."""
    q2, q1 = qm_projections(b, a, f_contrast, u1, u2, u3)
    return q1, q2


def lhv_projections(model: LhvModel, a, b, lam, u1, u2):
    q1 = np.where(u1 < model.response_a(lam, a), 1, -1)
    q2 = np.where(u2 < model.response_b(lam, b), 1, -1)
    return q1, q2


def transmit(q, polarizer: PolarizerSpec, u, two_channel: bool):
    """Channel reached by photons with projection results q: +1, -1 or 0 (lost).

    A photon projected parallel reaches the + channel with probability t_par and,
    for a polarimeter, the - channel with probability asymmetry * t_perp.
    """
    q = np.asarray(q)
    t_plus = np.where(q == 1, polarizer.t_par, polarizer.t_perp)
    out = np.where(u < t_plus, PLUS, LOST)
    if two_channel:
        g = polarizer.asymmetry
        if polarizer.t_par + g * polarizer.t_perp > 1.0 + 1e-12:
            raise ValueError("polarimeter channel transmittances exceed unity")
        t_minus = g * np.where(q == 1, polarizer.t_perp, polarizer.t_par)
        out = np.where((u >= t_plus) & (u < t_plus + t_minus), MINUS, out)
    return out


def sample_qm_outcome(a: float, b: float, apparatus: ApparatusModel, rng: np.random.Generator, size: int = 1, two_channel: bool = True):
    """Sample detected channels for `size` pairs; 0 marks an undetected photon."""
    u = rng.random((6, size))
    q1, q2 = qm_projections(a, b, apparatus.f_contrast, u[0], u[1], u[2])
    c1 = transmit(q1, apparatus.polarizer_1, u[3], two_channel)
    c2 = transmit(q2, apparatus.polarizer_2, u[4], two_channel)
    eta = apparatus.detection_efficiency
    if eta < 1.0:
        d = rng.random((2, size)) < eta
        c1 = np.where(d[0], c1, LOST)
        c2 = np.where(d[1], c2, LOST)
    return c1, c2


def sample_lhv_outcome(model: LhvModel, a: float, b: float, rng: np.random.Generator, size: int = 1):
    """Sample +-1 outcomes: lambda from rho, then each side Bernoulli on its response."""
    lam = model.sample_lambda(rng, size)
    u = rng.random((2, size))
    return lhv_projections(model, a, b, lam, u[0], u[1])


def counts_from_outcomes(c1, c2) -> CountsQuad:
    return CountsQuad(*(int(np.count_nonzero((c1 == x) & (c2 == y))) for x, y in CHANNEL_PAIRS))


# ---------------------------------------------------------------------------
# detection streams


@dataclass
class DetectionStreams:
    """Time-ordered detections of one run configuration on both sides."""

    times_1: np.ndarray
    channels_1: np.ndarray
    times_2: np.ndarray
    channels_2: np.ndarray
    duration: float
    # pass/block populations of pairs with both photons collected: pp, pm, mp, mm
    internal: CountsQuad
    n_pairs: int


def _slice_bounds(duration_ps: int, slice_ps: int):
    starts = list(range(0, duration_ps, slice_ps))
    return [(s, min(s + slice_ps, duration_ps)) for s in starts]


def sorted_epochs(rng: np.random.Generator, n: int, t0: int, t1: int) -> np.ndarray:
    """n sorted uniform integer times in [t0, t1), via normalized exponential spacings."""
    gaps = rng.exponential(1.0, n + 1)
    u = np.cumsum(gaps)[:-1] / gaps.sum()
    return np.minimum(t0 + np.floor(u * (t1 - t0)).astype(np.int64), t1 - 1)


def emission_classes(rng, rate: float, eta_1: float, eta_2: float, t0: int, t1: int):
    """Epochs of pairs with at least one photon collected, and a class label per pair:
    0 both collected, 1 only photon 1, 2 only photon 2."""
    p_both = eta_1 * eta_2
    p_1 = eta_1 * (1 - eta_2)
    p_2 = (1 - eta_1) * eta_2
    p_any = p_both + p_1 + p_2
    n = rng.poisson(rate * (t1 - t0) / PS * p_any) if p_any > 0 else 0
    epochs = sorted_epochs(rng, n, t0, t1)
    u = rng.random(n) * p_any
    cls = np.where(u < p_both, 0, np.where(u < p_both + p_1, 1, 2)).astype(np.int8)
    return epochs, cls


def _simulate_slice(plan: ExperimentPlan, apparatus: ApparatusModel, a: float, b: float, remove_1: bool, seed_seq, t0: int, t1: int):
    rng = np.random.default_rng(seed_seq)
    src = plan.source
    eta = apparatus.detection_efficiency
    two_channel = plan.scheme == "two-channel"
    epochs, cls = emission_classes(rng, src.cascade_rate, eta, eta, t0, t1)
    n = epochs.size
    delay = np.rint(rng.exponential(src.tau_r * PS, n)).astype(np.int64)

    # projections for every pair; for single-collected pairs only the marginal matters
    u = rng.random((3, n))
    model = plan.model
    if model is None:
        f_eff = 0.0 if remove_1 else apparatus.f_contrast
        q1, q2 = qm_projections(a, b, f_eff, u[0], u[1], u[2])
    else:
        lam = model.sample_lambda(rng, n)
        q1, q2 = lhv_projections(model, a, b, lam, u[0], u[1])

    v = rng.random((2, n))
    has_1, has_2 = cls != 2, cls != 1
    c1 = np.where(has_1, transmit(q1, apparatus.polarizer_1, v[0], two_channel), LOST)
    c2 = np.where(has_2, transmit(q2, apparatus.polarizer_2, v[1], two_channel), LOST)

    both = cls == 0
    passed_1, passed_2 = c1[both] != LOST, c2[both] != LOST
    internal = np.array(
        [
            np.count_nonzero(passed_1 & passed_2),
            np.count_nonzero(passed_1 & ~passed_2),
            np.count_nonzero(~passed_1 & passed_2),
            np.count_nonzero(~passed_1 & ~passed_2),
        ]
    )
    k1, k2 = c1 != LOST, c2 != LOST
    t_1, c_1 = epochs[k1], c1[k1]
    t_2, c_2 = epochs[k2] + delay[k2], c2[k2]
    if src.uncorrelated_rate > 0:
        extra = []
        for pol in (apparatus.polarizer_1, apparatus.polarizer_2):
            m = rng.poisson(src.uncorrelated_rate * eta * (t1 - t0) / PS)
            t = sorted_epochs(rng, m, t0, t1)
            q = np.where(rng.random(m) < 0.5, 1, -1)
            c = transmit(q, pol, rng.random(m), two_channel)
            extra.append((t[c != LOST], c[c != LOST]))
        t_1, c_1 = _merge_sorted([t_1, extra[0][0]], [c_1, extra[0][1]])
        t_2, c_2 = np.concatenate([t_2, extra[1][0]]), np.concatenate([c_2, extra[1][1]])
    order = np.argsort(t_2, kind="stable")
    return t_1, c_1, t_2[order], c_2[order], internal, n


def _merge_sorted(times, channels):
    t = np.concatenate(times)
    c = np.concatenate(channels)
    order = np.argsort(t, kind="stable")
    return t[order], c[order]


def simulate_streams(
    plan: ExperimentPlan,
    a: float,
    b: float,
    remove_1: bool = False,
    remove_2: bool = False,
    config_index: int = 0,
    workers: int = 1,
) -> DetectionStreams:
    """Simulate one run configuration for plan.duration seconds.

    The run is cut into fixed time slices, each with its own derived random stream,
    so the result does not depend on how slices are spread over workers.
    """
    apparatus = plan.apparatus.removing(remove_1, remove_2)
    duration_ps = int(round(plan.duration * PS))
    slice_ps = int(round(plan.slice_duration * PS))
    bounds = _slice_bounds(duration_ps, slice_ps)
    seeds = [np.random.SeedSequence(plan.seed, spawn_key=(config_index, k)) for k in range(len(bounds))]

    def job(k):
        return _simulate_slice(plan, apparatus, a, b, remove_1, seeds[k], *bounds[k])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(len(bounds))))
    else:
        parts = [job(k) for k in range(len(bounds))]
    t1, c1 = _merge_sorted([p[0] for p in parts], [p[1] for p in parts])
    t2, c2 = _merge_sorted([p[2] for p in parts], [p[3] for p in parts])
    internal = CountsQuad(*(int(x) for x in sum(p[4] for p in parts)))
    return DetectionStreams(t1, c1, t2, c2, plan.duration, internal, int(sum(p[5] for p in parts)))


# ---------------------------------------------------------------------------
# coincidence counting


def pairs_within(t1: np.ndarray, t2: np.ndarray, lo_ps: int, hi_ps: int):
    """All (i, j) with lo <= t2[j] - t1[i] < hi, as index arrays plus delays (t2 sorted)."""
    lo = np.searchsorted(t2, t1 + lo_ps, side="left")
    hi = np.searchsorted(t2, t1 + hi_ps, side="left")
    n = hi - lo
    i = np.repeat(np.arange(t1.size), n)
    j = np.repeat(lo, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
    return i, j, t2[j] - t1[i]


def count_in_window(t1: np.ndarray, t2: np.ndarray, center_ps: int, half_width_ps: int) -> int:
    """Number of (i, j) with |t2[j] - t1[i] - center| < half_width; t2 sorted."""
    hi = np.searchsorted(t2, t1 + center_ps + half_width_ps, side="left")
    lo = np.searchsorted(t2, t1 + center_ps - half_width_ps, side="right")
    return int((hi - lo).sum())


@dataclass(frozen=True)
class WindowCounts:
    raw: int
    accidental: float  # mean of the two delayed windows
    accidental_variance: float

    @property
    def true(self) -> float:
        return self.raw - self.accidental

    @property
    def variance(self) -> float:
        return self.raw + self.accidental_variance


def _window_masks(d, window_ps: int, delay_ps: int, offset_ps: int):
    h = window_ps // 2
    return (
        np.abs(d - offset_ps) < h,
        np.abs(d - offset_ps + delay_ps) < h,
        np.abs(d - offset_ps - delay_ps) < h,
    )


def _make_counts(raw, early, late) -> WindowCounts:
    return WindowCounts(int(raw), (early + late) / 2, (early + late) / 4)


def window_counts(t1, t2, window_ps: int, delay_ps: int, offset_ps: int = 0) -> WindowCounts:
    """Prompt-window counts and the accidental estimate from windows at +-delay."""
    reach = delay_ps + window_ps
    _, _, d = pairs_within(t1, t2, offset_ps - reach, offset_ps + reach)
    prompt, early, late = _window_masks(d, window_ps, delay_ps, offset_ps)
    return _make_counts(prompt.sum(), early.sum(), late.sum())


def coincidence_table(streams: DetectionStreams, window: float, delay: float, offset_ps: int = 0) -> dict[tuple[int, int], WindowCounts]:
    """Window counts for each channel pair (++, +-, -+, --)."""
    w, dl = int(round(window * PS)), int(round(delay * PS))
    reach = dl + w
    i, j, d = pairs_within(streams.times_1, streams.times_2, offset_ps - reach, offset_ps + reach)
    masks = _window_masks(d, w, dl, offset_ps)
    c1, c2 = streams.channels_1[i], streams.channels_2[j]
    out = {}
    for x, y in CHANNEL_PAIRS:
        sel = (c1 == x) & (c2 == y)
        out[(x, y)] = _make_counts(*(np.count_nonzero(m & sel) for m in masks))
    return out


# ---------------------------------------------------------------------------
# two-channel and one-channel experiments


@dataclass(frozen=True)
class OrientationRun:
    a: float
    b: float
    raw: CountsQuad
    accidental: tuple[float, float, float, float]
    true: tuple[float, float, float, float]
    correlation: Estimate
    internal: CountsQuad

    @property
    def raw_sum(self) -> int:
        return self.raw.total

    @property
    def true_sum(self) -> Estimate:
        var = sum(self.raw.as_array()) + sum(self.accidental) / 2
        return Estimate(sum(self.true), math.sqrt(var))


@dataclass(frozen=True)
class TwoChannelResult:
    runs: tuple[OrientationRun, ...]
    chsh: ChshResult | None
    duration: float


def measure_orientation(plan: ExperimentPlan, a: float, b: float, config_index: int = 0, workers: int = 1) -> OrientationRun:
    streams = simulate_streams(plan, a, b, config_index=config_index, workers=workers)
    table = coincidence_table(streams, plan.window, plan.accidental_delay)
    wc = [table[p] for p in CHANNEL_PAIRS]
    if sum(w.raw for w in wc) == 0:
        raise ZeroCountsError(f"no coincidences detected at (a, b) = ({a:.4f}, {b:.4f}); increase the duration")
    try:
        corr = correlation_from_rates([w.true for w in wc], [w.variance for w in wc])
    except ZeroCountsError:
        raise ZeroCountsError("no true coincidences after accidental subtraction; increase the duration") from None
    return OrientationRun(
        a,
        b,
        CountsQuad(*(w.raw for w in wc)),
        tuple(w.accidental for w in wc),
        tuple(w.true for w in wc),
        corr,
        streams.internal,
    )


def run_two_channel(plan: ExperimentPlan, workers: int = 1) -> TwoChannelResult:
    """Four orientation runs of plan.duration each, with E per run and S."""
    if plan.scheme != "two-channel":
        raise ValueError("run_two_channel needs a two-channel plan")
    runs = tuple(measure_orientation(plan, x, y, i, workers) for i, (x, y) in enumerate(plan.orientations.pairs()))
    return TwoChannelResult(runs, chsh_from_estimates([r.correlation for r in runs]), plan.duration)


def scan_two_channel(plan: ExperimentPlan, angles: Sequence[float], workers: int = 1) -> list[OrientationRun]:
    """Runs at relative angles (a = 0, b = theta); used for E(theta) and sum constancy."""
    return [measure_orientation(plan, 0.0, th, 100 + i, workers) for i, th in enumerate(angles)]


ONE_CHANNEL_CONFIGS = ("n_ab", "n_ab_prime", "n_aprime_b", "n_aprime_bprime", "n_aprime_inf", "n_inf_b", "n_inf_inf")


@dataclass(frozen=True)
class OneChannelResult:
    rates: SingleChannelRates
    s_prime: SPrimeResult
    raw: dict
    internal: dict
    duration: float


def one_channel_configs(o: OrientationSet):
    """(name, a, b, remove_1, remove_2) for the seven one-channel runs."""
    return (
        ("n_ab", o.a, o.b, False, False),
        ("n_ab_prime", o.a, o.b_prime, False, False),
        ("n_aprime_b", o.a_prime, o.b, False, False),
        ("n_aprime_bprime", o.a_prime, o.b_prime, False, False),
        ("n_aprime_inf", o.a_prime, 0.0, False, True),
        ("n_inf_b", 0.0, o.b, True, False),
        ("n_inf_inf", 0.0, 0.0, True, True),
    )


def run_one_channel(plan: ExperimentPlan, workers: int = 1) -> OneChannelResult:
    """The seven one-channel runs (four orientation pairs, a' inf, inf b, inf inf) of equal duration."""
    if plan.scheme != "one-channel":
        raise ValueError("run_one_channel needs a one-channel plan")
    w, d = int(round(plan.window * PS)), int(round(plan.accidental_delay * PS))
    values, variances, raw, internal = {}, {}, {}, {}
    for i, (name, a, b, r1, r2) in enumerate(one_channel_configs(plan.orientations)):
        s = simulate_streams(plan, a, b, r1, r2, config_index=i, workers=workers)
        wc = window_counts(s.times_1, s.times_2, w, d)
        values[name], variances[name], raw[name], internal[name] = wc.true, wc.variance, wc.raw, s.internal
    if raw["n_inf_inf"] == 0:
        raise ZeroCountsError("no coincidences in the (inf, inf) run; increase the duration")
    rates = SingleChannelRates(**{k: max(v, 0.0) for k, v in values.items()}, variances=variances)
    return OneChannelResult(rates, s_prime_from_rates(rates), raw, internal, plan.duration)


# ---------------------------------------------------------------------------
# time-delay spectrum


class SpectrumFitError(RuntimeError):
    def __init__(self, message, bin_edges=None, counts=None):
        super().__init__(message)
        self.bin_edges = bin_edges
        self.counts = counts


@dataclass(frozen=True)
class TimeDelaySpectrum:
    bin_edges: np.ndarray  # seconds
    counts: np.ndarray
    background: Estimate  # counts per bin
    peak_area: Estimate  # counts
    tau: Estimate  # seconds
    duration: float

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    def peak_in_window(self, window: float) -> Estimate:
        """Fitted peak counts falling within |delay| < window/2 (peak starts at zero delay)."""
        frac = 1.0 - math.exp(-(window / 2) / self.tau.value)
        return Estimate(self.peak_area.value * frac, self.peak_area.sigma * frac)


def delay_histogram(t1: np.ndarray, t2: np.ndarray, edges_ps: np.ndarray) -> np.ndarray:
    """Histogram of all pairwise delays t2 - t1 falling within the edges (t2 sorted)."""
    _, _, d = pairs_within(t1, t2, int(edges_ps[0]), int(edges_ps[-1]))
    counts, _ = np.histogram(d, bins=edges_ps)
    return counts


def _spectrum_model(edges_lo, edges_hi):
    def model(_x, background, area, tau):
        lo = np.clip(edges_lo, 0.0, None)
        hi = np.clip(edges_hi, 0.0, None)
        return background + area * (np.exp(-lo / tau) - np.exp(-hi / tau))

    return model


def fit_spectrum(edges_ps: np.ndarray, counts: np.ndarray, tau_guess_ps: float = 5000.0):
    """Flat background plus a one-sided exponential starting at zero delay.

    Weighted least squares with weights from the current model, iterated (close to
    the Poisson maximum-likelihood fit). Returns ((B, A, tau), covariance) in ps units.
    """
    counts = np.asarray(counts, dtype=float)
    lo, hi = edges_ps[:-1].astype(float), edges_ps[1:].astype(float)
    neg = hi <= 0
    if counts.sum() < 20 or not neg.any():
        raise SpectrumFitError("too few counts (or no negative-delay bins) to fit the spectrum", edges_ps, counts)
    b0 = max(float(np.mean(counts[neg])), 0.1)
    a0 = max(float(counts[~neg].sum() - b0 * np.count_nonzero(~neg)), 1.0)
    p = np.array([b0, a0, tau_guess_ps])
    model = _spectrum_model(lo, hi)
    try:
        for _ in range(3):
            sigma = np.sqrt(np.maximum(model(None, *p), 1.0))
            p, cov = curve_fit(
                model, None, counts, p0=p, sigma=sigma, absolute_sigma=True,
                bounds=([0.0, 0.0, 1.0], [np.inf, np.inf, np.inf]),
            )
    except (RuntimeError, ValueError) as exc:
        raise SpectrumFitError(f"spectrum fit failed: {exc}", edges_ps, counts) from exc
    if not np.all(np.isfinite(cov)):
        raise SpectrumFitError("spectrum fit covariance is undefined", edges_ps, counts)
    return p, cov


def spectrum_from_streams(streams: DetectionStreams, bin_width: float, delay_range: tuple[float, float], tau_guess: float = 5e-9) -> TimeDelaySpectrum:
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    lo_ps, hi_ps, w_ps = (int(round(x * PS)) for x in (*delay_range, bin_width))
    edges = np.arange(lo_ps, hi_ps + 1, w_ps, dtype=np.int64)
    counts = delay_histogram(streams.times_1, streams.times_2, edges)
    p, cov = fit_spectrum(edges, counts, tau_guess * PS)
    err = np.sqrt(np.diag(cov))
    return TimeDelaySpectrum(
        edges / PS,
        counts,
        Estimate(float(p[0]), float(err[0])),
        Estimate(float(p[1]), float(err[1])),
        Estimate(float(p[2] / PS), float(err[2] / PS)),
        streams.duration,
    )


def time_delay_spectrum(
    plan: ExperimentPlan,
    bin_width: float = 1e-9,
    delay_range: tuple[float, float] = (-50e-9, 150e-9),
    a: float = 0.0,
    b: float = 0.0,
    workers: int = 1,
) -> TimeDelaySpectrum:
    """Histogram of t2 - t1 over all detection pairs, fitted with background + exponential peak."""
    streams = simulate_streams(plan, a, b, config_index=200, workers=workers)
    return spectrum_from_streams(streams, bin_width, delay_range, plan.source.tau_r)


@dataclass(frozen=True)
class WindowedRates:
    raw: Estimate  # s^-1
    accidental: Estimate
    subtracted: Estimate
    counts: WindowCounts
    duration: float


def windowed_from_streams(streams: DetectionStreams, window: float, accidental_delay: float) -> WindowedRates:
    w, d = int(round(window * PS)), int(round(accidental_delay * PS))
    wc = window_counts(streams.times_1, streams.times_2, w, d)
    T = streams.duration
    return WindowedRates(
        Estimate(wc.raw / T, math.sqrt(wc.raw) / T),
        Estimate(wc.accidental / T, math.sqrt(wc.accidental_variance) / T),
        Estimate(wc.true / T, math.sqrt(wc.variance) / T),
        wc,
        T,
    )


def windowed_coincidences(plan: ExperimentPlan, a: float = 0.0, b: float = 0.0, workers: int = 1) -> WindowedRates:
    """Raw rate in the prompt window, accidental rate in delayed windows, and their difference."""
    streams = simulate_streams(plan, a, b, config_index=200, workers=workers)
    return windowed_from_streams(streams, plan.window, plan.accidental_delay)


def window_capture(window: float, tau_r: float) -> float:
    """Fraction of true coincidences whose delay falls within the prompt window."""
    return 1.0 - math.exp(-(window / 2) / tau_r)
