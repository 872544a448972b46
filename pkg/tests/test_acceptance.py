"""Acceptance checks, one pass/fail line each (see the summary at the end of the run).

The simulation-heavy ones are marked slow; `pytest -m "not slow"` skips them.
Compatibility of two numbers means |x - y| <= 3 sqrt(sx^2 + sy^2).
"""
import dataclasses
import math

import numpy as np
import pytest

from eprlab import presets
from eprlab.cli import RunConfig, execute, strip_timestamp
from eprlab.core import OrientationSet, bootstrap_chsh_sigma
from eprlab.lhv import (
    BellBoundError,
    MalusModel,
    NaiveModel,
    Quadrature,
    TableModel,
    lhv_chsh,
    lhv_correlation,
    naive_correlation_exact,
    pointwise_s,
)
from eprlab.montecarlo import (
    run_one_channel,
    run_two_channel,
    scan_two_channel,
    simulate_streams,
    spectrum_from_streams,
    windowed_from_streams,
)
from eprlab.qm import ApparatusModel, chsh_qm, find_extrema, s_prime_qm
from eprlab.timing import (
    SwitchSpec,
    lightcone_audit,
    qm_no_retardation_check,
    retardation_conditions,
    run_timing_experiment,
    switching_intervals,
    timing_campaign,
    timing_s_prime_qm,
)

IDEAL = ApparatusModel.ideal()
ROOT2 = math.sqrt(2)


def compatible(x, sx, y, sy, k=3.0):
    return abs(x - y) <= k * math.hypot(sx, sy)


def same_order(simulated, reference, factor=3.0):
    return reference / factor <= simulated <= reference * factor


def test_c1_analytic_maximum(criterion):
    s = chsh_qm(presets.FIG_4A, IDEAL).s_value
    ext = {round(t, 9): v for t, v in find_extrema(IDEAL)}
    t1, t3 = round(math.pi / 8, 9), round(3 * math.pi / 8, 9)
    ok = (
        abs(s - 2 * ROOT2) <= 1e-12
        and t1 in ext
        and t3 in ext
        and abs(ext[t1] - 2 * ROOT2) <= 1e-8
        and abs(ext[t3] + 2 * ROOT2) <= 1e-8
    )
    criterion(1, ok, f"S(pi/8) = {s:.15f}; extrema {ext}")


def test_c2_naive_curve(criterion):
    # independent closed form: linear fall from +1 at 0 to -1 at pi/2
    grid = np.linspace(0.0, math.pi / 2, 181)
    closed = max(abs(naive_correlation_exact(0.0, t) - (1 - 4 * t / math.pi)) for t in grid)
    special = max(abs(naive_correlation_exact(0.0, t) - math.cos(2 * t)) for t in (0.0, math.pi / 4, math.pi / 2))
    quad = max(
        abs(lhv_correlation(NaiveModel(), 0.0, t, Quadrature(tol=1e-9)).value - naive_correlation_exact(0.0, t))
        for t in grid[::2]
    )
    ok = closed <= 1e-12 and special <= 1e-15 and quad <= 1e-6
    criterion(2, ok, f"closed-form err {closed:.1e}, qm agreement err {special:.1e}, quadrature err {quad:.1e}")


def test_c3_lhv_bound(criterion):
    rng = np.random.default_rng(20240101)

    def orientation():
        return OrientationSet(*rng.uniform(0.0, math.pi, 4))

    worst, violations, pointwise_bad, n = 0.0, 0, 0, 0
    models = [TableModel.random(rng, deterministic=d) for d in [True] * 120 + [False] * 120]
    for model in models + [NaiveModel(), MalusModel()]:
        for _ in range(3 if isinstance(model, TableModel) else 120):
            o = orientation()
            n += 1
            try:
                worst = max(worst, abs(lhv_chsh(model, o).s_value))
            except BellBoundError:
                violations += 1
            if isinstance(model, TableModel) and model.is_deterministic:
                pointwise_bad += sum(pointwise_s(model, k, o) not in (-2, 2) for k in range(model.weights.size))
    for lam in rng.uniform(0.0, 2 * math.pi, 200):
        pointwise_bad += pointwise_s(NaiveModel(), lam, orientation()) not in (-2, 2)
    ok = violations == 0 and worst <= 2.0 + 1e-7 and pointwise_bad == 0
    criterion(3, ok, f"{n} (model, orientation) cases, max |S| = {worst:.9f}, violations {violations}, bad pointwise {pointwise_bad}")


def test_c4_one_channel_predictions(criterion):
    hi = s_prime_qm(OrientationSet.from_theta(math.pi / 8), IDEAL)
    lo = s_prime_qm(OrientationSet.from_theta(3 * math.pi / 8), IDEAL)
    orsay = s_prime_qm(presets.FIG_4A, presets.apparatus("orsay-one-channel"))
    ok = abs(hi - (ROOT2 - 1) / 2) <= 1e-12 and abs(lo + (ROOT2 + 1) / 2) <= 1e-12 and abs(orsay - 0.118) <= 0.005
    criterion(4, ok, f"ideal S' = {hi:.15f} / {lo:.15f}; pile-of-plates S' = {orsay:.6f} (band 0.118 +- 0.005)")


@pytest.mark.slow
def test_c5_monte_carlo_convergence(criterion):
    plan = presets.static_plan("ideal", duration=30.0, seed=5)
    r = run_two_channel(plan)
    pairs = sum(run.raw_sum for run in r.runs)
    boot = bootstrap_chsh_sigma([run.raw for run in r.runs], 4000, seed=1, accidentals=[run.accidental for run in r.runs])
    within = abs(r.chsh.s_value - 2 * ROOT2) <= 4 * r.chsh.sigma
    ratio = r.chsh.sigma / boot
    ok = pairs >= 1_000_000 and within and abs(ratio - 1) <= 0.25
    criterion(
        5, ok,
        f"{pairs} detected pairs, S = {r.chsh.s_value:.5f} +- {r.chsh.sigma:.5f} vs {2 * ROOT2:.5f}; "
        f"bootstrap sigma {boot:.5f} (ratio {ratio:.3f})",
    )


@pytest.mark.slow
def test_c6_orsay_static(criterion):
    two = presets.static_plan("orsay-static-two-channel")
    pred = chsh_qm(two.orientations, two.apparatus).s_value
    s = run_two_channel(two).chsh
    one = presets.static_plan("orsay-static-one-channel")
    pred1 = s_prime_qm(one.orientations, one.apparatus)
    sp = run_one_channel(one).s_prime
    checks = {
        "prediction in 2.70 +- 0.05": abs(pred - 2.70) <= 0.05,
        "estimate in 2.70 +- 0.05": abs(s.s_value - 2.70) <= 0.05,
        "S compatible with 2.697 +- 0.015": compatible(s.s_value, s.sigma, 2.697, 0.015),
        "S' prediction in 0.118 +- 0.005": abs(pred1 - 0.118) <= 0.005,
        "S' compatible with prediction": compatible(sp.s_prime, sp.sigma, pred1, 0.0),
        "S' compatible with 0.126 +- 0.014": compatible(sp.s_prime, sp.sigma, 0.126, 0.014),
        "two-channel significance ~40 sigma": same_order(s.significance, 40),
        "one-channel significance ~9 sigma": same_order(sp.significance, 9),
    }
    failed = [k for k, v in checks.items() if not v]
    criterion(
        6, not failed,
        f"S = {s.s_value:.4f} +- {s.sigma:.4f} ({s.significance:.0f} sigma, pred {pred:.4f}); "
        f"S' = {sp.s_prime:.4f} +- {sp.sigma:.4f} ({sp.significance:.1f} sigma, pred {pred1:.4f})"
        + (f"; failed: {failed}" if failed else ""),
    )


@pytest.mark.slow
def test_c7_spectrum_physics(criterion):
    base = presets.static_plan("orsay-static-two-channel", duration=120.0, seed=11)
    fast = dataclasses.replace(base, source=dataclasses.replace(base.source, cascade_rate=2 * base.source.cascade_rate))
    fits = {}
    for name, plan in (("N", base), ("2N", fast)):
        streams = simulate_streams(plan, 0.0, 0.0, config_index=200)
        fits[name] = (spectrum_from_streams(streams, 1e-9, (-50e-9, 150e-9)), windowed_from_streams(streams, plan.window, plan.accidental_delay))

    def ratio(x, y):
        r = y.value / x.value
        return r, r * math.hypot(x.sigma / x.value, y.sigma / y.value)

    sp, win = fits["N"]
    bg, bg_s = ratio(fits["N"][0].background, fits["2N"][0].background)
    pk, pk_s = ratio(fits["N"][0].peak_area, fits["2N"][0].peak_area)
    peak = sp.peak_in_window(base.window)
    windowed = win.counts.true
    windowed_sigma = math.sqrt(win.counts.variance)
    checks = {
        "tau within 5% of 5 ns": abs(sp.tau.value - 5e-9) <= 0.05 * 5e-9,
        "background x4.0 +- 0.4": abs(bg - 4.0) <= 0.4,
        "peak area x2.0 +- 0.2": abs(pk - 2.0) <= 0.2,
        "windowed rate vs peak area": compatible(windowed, windowed_sigma, peak.value, peak.sigma),
    }
    failed = [k for k, v in checks.items() if not v]
    criterion(
        7, not failed,
        f"tau = {sp.tau.value * 1e9:.3f} +- {sp.tau.sigma * 1e9:.3f} ns; background x{bg:.3f} +- {bg_s:.3f}; "
        f"peak x{pk:.3f} +- {pk_s:.3f}; windowed {windowed:.0f} +- {windowed_sigma:.0f} vs fitted {peak.value:.0f} +- {peak.sigma:.0f}"
        + (f"; failed: {failed}" if failed else ""),
    )


@pytest.mark.slow
def test_c8_sum_constancy(criterion):
    from scipy import stats

    plan = presets.static_plan("orsay-static-two-channel", duration=20.0, seed=8)
    angles = np.radians(np.linspace(0.0, 90.0, 19))
    runs = scan_two_channel(plan, angles)
    sums = np.array([r.true_sum.value for r in runs])
    sig = np.array([r.true_sum.sigma for r in runs])
    w = 1 / sig**2
    mean = (w * sums).sum() / w.sum()
    chi2 = float((w * (sums - mean) ** 2).sum())
    p = float(stats.chi2.sf(chi2, sums.size - 1))
    pp = np.array([r.true[0] for r in runs])
    pm = np.array([r.true[1] for r in runs])
    depth = min((x.max() - x.min()) / (x.max() + x.min()) for x in (pp, pm))
    ok = p > 0.01 and depth > 0.9
    criterion(8, ok, f"sum chi2 = {chi2:.1f} / 18 dof, p = {p:.3f}; channel modulation depth {depth:.3f}")


@pytest.mark.slow
def test_c9_timing_experiment(criterion):
    plan = presets.timing_plan(seed=7)
    analysis = timing_campaign(plan, presets.TIMING_MATCHED_DURATION)
    sp = analysis.s_prime
    pred = timing_s_prime_qm(plan)
    audit = lightcone_audit(*run_timing_experiment(presets.timing_plan()))
    iv = switching_intervals(SwitchSpec(25e6)) * 1e9
    short, long_ = sorted(set(np.round(iv, 6)))
    retard = qm_no_retardation_check(retardation_conditions(plan, (13.0, 26.0), duration=20.0))
    checks = {
        "S' compatible with 0.101 +- 0.020": compatible(sp.s_prime, sp.sigma, 0.101, 0.020),
        "S' compatible with 0.113 +- 0.005": compatible(sp.s_prime, sp.sigma, 0.113, 0.005),
        "S' compatible with own prediction": compatible(sp.s_prime, sp.sigma, pred, 0.0),
        "significance ~5 sigma": same_order(sp.significance, 5),
        "audit 100% space-like": audit.detections > 0 and audit.spacelike == audit.detections,
        "intervals 6.7 / 13.3 ns": abs(short - 6.7) <= 0.1 and abs(long_ - 13.3) <= 0.1,
        "no retardation effect": retard.passed and len(retard.conditions) == 4,
    }
    failed = [k for k, v in checks.items() if not v]
    criterion(
        9, not failed,
        f"S' = {sp.s_prime:.4f} +- {sp.sigma:.4f} (pred {pred:.4f}); audit {audit.spacelike}/{audit.detections}; "
        f"intervals {short:.3f}/{long_:.3f} ns; retardation chi2 {retard.chi2:.1f}/{retard.dof} p = {retard.p_value:.3f}"
        + (f"; failed: {failed}" if failed else ""),
    )


@pytest.mark.slow
def test_c10_determinism(criterion):
    configs = [
        RunConfig("run", preset="ideal", duration=0.5, seed=3),
        RunConfig("run", preset="orsay-two-channel", duration=1.5, seed=3),
        RunConfig("run", preset="orsay-static", duration=0.5, seed=3),
        RunConfig("run", scheme="two-channel", model="naive", duration=0.5, seed=3),
        RunConfig("run", preset="orsay-timing", duration=20.0, audit_duration=0.0005, seed=3),
    ]
    mismatched = []
    for c in configs:
        outputs = [execute(dataclasses.replace(c, workers=w), timestamp=str(i)) for i, w in enumerate((1, 1, 4))]
        texts = {strip_timestamp(r) for r, _ in outputs}
        files = [f for _, f in outputs]
        if len(texts) != 1 or any(f != files[0] for f in files):
            mismatched.append(c.preset or c.model)
    criterion(10, not mismatched, f"{len(configs)} run configurations x (workers 1, 1, 4) byte-identical" + (f"; differ: {mismatched}" if mismatched else ""))
