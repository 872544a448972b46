import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eprlab import presets
from eprlab.core import OrientationSet
from eprlab.montecarlo import PS, PairSource, WindowCounts
from eprlab.qm import ApparatusModel
from eprlab.timing import (
    C_LIGHT,
    CHANGE,
    DETECTION,
    PRIMARY,
    SECONDARY,
    Geometry,
    LogMismatchError,
    MergeResult,
    QuasiperiodicTimeline,
    SideLog,
    SwitchSpec,
    TimingPlan,
    analyze_timing,
    campaign_durations,
    crossing_times,
    lightcone_audit,
    merge_and_correlate,
    normalized_rate_qm,
    qm_no_retardation_check,
    run_timing_experiment,
    shuffle_outcomes,
    switch_probability,
    switching_intervals,
    telegraph_settings,
    timing_campaign,
    timing_s_prime_qm,
)


def ideal_plan(**kw):
    base = dict(
        geometry=Geometry(13.0),
        switch_1=SwitchSpec(23.1e6, 0.0, 0.0),
        switch_2=SwitchSpec(24.2e6, 1.0, 0.0),
        apparatus=ApparatusModel.ideal(),
        orientations=presets.FIG_4A,
        source=PairSource(2e4, 5e-9),
        duration=0.5,
        seed=3,
    )
    base.update(kw)
    return TimingPlan(**base)


# geometry and switches


def test_light_time_oracle():
    g = Geometry(13.0)
    exact = 13.0 / 299_792_458.0 * 1e12
    assert g.light_time_ps == round(exact) == 43363
    assert g.spacelike_threshold_ps == math.ceil(exact)
    assert g.transit_ps == (21682, 21682)
    assert g.is_spacelike(43363) and not g.is_spacelike(43364)


def test_geometry_validation():
    with pytest.raises(ValueError):
        Geometry(0.0)
    with pytest.raises(ValueError):
        Geometry(13.0, source_position=1.5)


def test_switch_validation():
    with pytest.raises(ValueError):
        SwitchSpec(floor=0.5)
    with pytest.raises(ValueError):
        SwitchSpec(mode="chaotic")
    with pytest.raises(ValueError):
        SwitchSpec(routing="coin")
    with pytest.raises(ValueError):
        SwitchSpec(static_setting=2)


@given(st.floats(0, 1e-6), st.floats(0, 0.49), st.floats(-math.pi, math.pi))
def test_switch_probability_range(t, floor, phase):
    p = switch_probability(t, SwitchSpec(phase=phase, floor=floor))
    assert floor - 1e-12 <= p <= 1 - floor + 1e-12


def test_switching_intervals_at_25mhz():
    iv = switching_intervals(SwitchSpec(25e6)) * 1e9
    assert sorted(set(np.round(iv, 3))) == [6.667, 13.333]
    assert np.allclose(iv[:-1] + iv[1:], 20.0)


@given(st.floats(1e6, 1e8), st.floats(-math.pi, math.pi))
def test_crossings_are_half_probability(f, phase):
    spec = SwitchSpec(f, phase)
    t = crossing_times(spec, 8)
    assert np.all(np.diff(t) > 0) and t[0] >= 0
    assert np.allclose(switch_probability(t, spec), 0.5, atol=1e-9)
    iv = np.diff(t) * f
    assert np.allclose(np.sort(np.unique(np.round(iv, 9))), [1 / 6, 1 / 3])


def test_telegraph_intervals_exponential():
    iv = switching_intervals(SwitchSpec(mode="random-telegraph", mean_dwell=10e-9), 20_000, np.random.default_rng(0))
    assert iv.mean() == pytest.approx(10e-9, rel=0.03)
    with pytest.raises(ValueError):
        switching_intervals(SwitchSpec(mode="static"))


@settings(max_examples=100)
@given(st.integers(0, 10**9), st.floats(-math.pi, math.pi), st.floats(2e7, 3e7))
def test_timeline_matches_threshold_on_probability(t, phase, f):
    spec = SwitchSpec(f, phase)
    tl = QuasiperiodicTimeline(spec)
    j = tl.last_change_index(t)[0]
    # oracle away from the crossings: primary iff p > 1/2
    if min(abs(t - tl.change_time_ps(j)), abs(tl.change_time_ps(j + 1) - t), abs(tl.change_time_ps(j + 2) - t)) > 2:
        p = switch_probability(t / PS, spec)
        assert tl.setting_at(t)[0] == (PRIMARY if p > 0.5 else SECONDARY)
    assert tl.last_change(t)[0] <= t


def test_timeline_changes_alternate():
    tl = QuasiperiodicTimeline(SwitchSpec(24.2e6, 1.0))
    times, sets = tl.changes(2_000_000)
    assert times[0] == 0
    assert np.all(np.diff(times) > 0) and times[-1] < 2_000_000
    assert np.all(sets[1:] != sets[:-1])
    probe = np.arange(0, 2_000_000, 997)
    idx = np.searchsorted(times, probe, side="right") - 1
    assert np.array_equal(sets[idx], tl.setting_at(probe))


def test_telegraph_records_do_not_change_settings():
    arrivals = np.sort(np.random.default_rng(1).integers(0, 10**7, 5000))
    a = telegraph_settings(arrivals, 10**7, 10_000.0, np.random.default_rng(9))
    b = telegraph_settings(arrivals, 10**7, 10_000.0, np.random.default_rng(9), np.random.default_rng(10))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    rt, rs = b[2]
    assert np.all(np.diff(rt) >= 0)
    assert np.all(rs[1:] != rs[:-1])
    idx = np.searchsorted(rt, arrivals, side="right") - 1
    assert np.array_equal(rs[idx], a[0])
    # last change at or before each arrival
    assert np.array_equal(rt[idx][idx > 0], a[1][idx > 0])
    # Poisson flip count over the run
    assert rt.size - 1 == pytest.approx(10**7 / 10_000, rel=0.1)


# side logs


def test_sidelog_order_validation():
    log, _ = run_timing_experiment(ideal_plan(duration=0.001))
    with pytest.raises(ValueError):
        SideLog(log.header, log.times[::-1].copy(), log.kinds, log.settings, log.outcomes)
    with pytest.raises(ValueError):
        SideLog(log.header, log.times, log.kinds[:-1], log.settings, log.outcomes)


def test_sidelog_text_roundtrip(tmp_path):
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.002, log_blocked=True))
    for log in (log_1, log_2):
        assert SideLog.from_text(log.to_text()) == log
        path = tmp_path / f"{log.header.side}.log"
        log.write(path)
        assert SideLog.read(path) == log
    with pytest.raises(ValueError):
        SideLog.from_text("garbage\n")


def test_sidelog_text_is_time_ordered():
    log, _ = run_timing_experiment(ideal_plan(duration=0.001))
    rows = [ln.split("\t") for ln in log.to_text().splitlines() if not ln.startswith("#")]
    times = [int(r[0]) for r in rows]
    assert times == sorted(times)
    assert {r[1] for r in rows} == {"change", "detection"}


# simulation


def test_run_is_deterministic():
    a = run_timing_experiment(ideal_plan(duration=0.01))
    b = run_timing_experiment(ideal_plan(duration=0.01))
    assert a[0] == b[0] and a[1] == b[1]
    c = run_timing_experiment(ideal_plan(duration=0.01), run_index=1)
    assert c[0] != a[0]


def test_side_one_never_depends_on_side_two():
    plan = ideal_plan(duration=0.01)
    ref, _ = run_timing_experiment(plan)
    alone, none = run_timing_experiment(plan, simulate_side_2=False)
    assert none is None and alone == ref
    other = dataclasses.replace(plan, switch_2=SwitchSpec(mode="random-telegraph"), orientations=OrientationSet(plan.orientations.a, plan.orientations.a_prime, 1.0, 0.2))
    changed, _ = run_timing_experiment(other)
    assert changed == ref


@pytest.mark.parametrize(
    "spec",
    [
        SwitchSpec(23.1e6, 0.3, 0.2, routing="threshold"),
        SwitchSpec(mode="random-telegraph", mean_dwell=8e-9),
        SwitchSpec(mode="static", static_setting=SECONDARY),
    ],
)
def test_replay_reproduces_channels(spec):
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.01, switch_1=spec, switch_2=spec))
    for log in (log_1, log_2):
        t, s, _ = log.detections(include_blocked=True)
        assert np.array_equal(log.replay_settings(t), s)


def test_bernoulli_routing_follows_probability():
    spec = SwitchSpec(25e6, 0.0, 0.2)
    log, _ = run_timing_experiment(ideal_plan(duration=0.05, switch_1=spec, log_blocked=True), simulate_side_2=False)
    t, s, _ = log.detections(include_blocked=True)
    p = switch_probability(t / PS, spec)
    # the routed-primary fraction matches the mean probability
    assert np.mean(s == PRIMARY) == pytest.approx(p.mean(), abs=4 * math.sqrt(0.25 / t.size))


def test_records_within_duration():
    plan = ideal_plan(duration=0.004)
    for log in run_timing_experiment(plan):
        assert log.times.min() >= 0 and log.times.max() < plan.duration * PS
        assert log.header.changes == "complete"
        assert log.kinds[0] == CHANGE and log.times[0] == 0


def test_oversized_change_log_refused():
    with pytest.raises(ValueError, match="record_changes"):
        run_timing_experiment(ideal_plan(duration=1.0))


def test_sparse_change_records():
    plan = ideal_plan(duration=0.004, record_changes=False)
    log_1, log_2 = run_timing_experiment(plan)
    assert log_1.header.changes == "sparse"
    assert np.count_nonzero(log_1.kinds == CHANGE) == 1
    with pytest.raises(ValueError, match="complete change records"):
        lightcone_audit(log_1, log_2)


def test_drift_hook_reduces_rate():
    base = run_timing_experiment(ideal_plan(duration=0.1, record_changes=False))[0]
    dim = run_timing_experiment(ideal_plan(duration=0.1, record_changes=False, drift=lambda t: np.full_like(t, 0.5)))[0]
    n0 = np.count_nonzero(base.kinds == DETECTION)
    n1 = np.count_nonzero(dim.kinds == DETECTION)
    assert n1 / n0 == pytest.approx(0.5, abs=0.05)


# merging and correlations


def test_merge_swap_symmetry():
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.05, log_blocked=True, record_changes=False))
    m12 = merge_and_correlate(log_1, log_2)
    m21 = merge_and_correlate(log_2, log_1)
    assert m21.counts == m12.swapped().counts
    assert m21.outcome_counts == m12.swapped().outcome_counts


def test_merge_rejects_mismatched_logs():
    a1, a2 = run_timing_experiment(ideal_plan(duration=0.001))
    b1, _ = run_timing_experiment(ideal_plan(duration=0.001), run_index=7)
    with pytest.raises(LogMismatchError):
        merge_and_correlate(a1, a1)
    with pytest.raises(LogMismatchError):
        merge_and_correlate(b1, a2)


def test_ideal_correlations_and_shuffle_control():
    plan = ideal_plan(duration=2.0, log_blocked=True, record_changes=False)
    log_1, log_2 = run_timing_experiment(plan)
    corr = merge_and_correlate(log_1, log_2).correlations()
    o = plan.orientations
    for (x, y), e in corr.items():
        a = o.a if x == 0 else o.a_prime
        b = o.b if y == 0 else o.b_prime
        assert abs(e.value - math.cos(2 * (b - a))) < 4 * e.sigma
    shuffled = merge_and_correlate(shuffle_outcomes(log_1, np.random.default_rng(0)), log_2).correlations()
    for e in shuffled.values():
        assert abs(e.value) < 4 * e.sigma


def test_correlations_need_blocked_records():
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.01))
    with pytest.raises(ValueError):
        merge_and_correlate(log_1, log_2).correlations()


def _merge(counts, duration=1.0):
    return MergeResult({p: WindowCounts(c, 0.0, 0.0) for p, c in counts.items()}, duration)


def test_analyze_timing_hand_computation():
    pairs = ((0, 0), (0, 1), (1, 0), (1, 1))
    merged = {
        "switched": _merge(dict(zip(pairs, (340, 60, 330, 350)))),
        "remove_2": _merge(dict(zip(pairs, (500, 480, 510, 490)))),
        "remove_1": _merge(dict(zip(pairs, (520, 470, 505, 500)))),
        "remove_both": _merge(dict(zip(pairs, (1000, 1000, 1010, 990)))),
    }
    res = analyze_timing(merged)
    n = {k: v.value for k, v in res.normalized.items()}
    assert n["ab"] == pytest.approx(0.34)
    assert n["a'inf"] == pytest.approx((510 + 490) / (1010 + 990))
    assert n["infb"] == pytest.approx((520 + 505) / (1000 + 1010))
    want = n["ab"] - n["ab'"] + n["a'b"] + n["a'b'"] - n["a'inf"] - n["infb"]
    assert res.s_prime.s_prime == pytest.approx(want)
    assert res.correlations["ab"].value == pytest.approx(1 - 2 * n["ainf"] - 2 * n["infb"] + 4 * n["ab"])
    # delta-method sigma against a parametric resample
    rng = np.random.default_rng(0)
    draws = []
    for _ in range(2000):
        m = {k: _merge({p: rng.poisson(v.counts[p].raw) for p in pairs}) for k, v in merged.items()}
        draws.append(analyze_timing(m).s_prime.s_prime)
    assert res.s_prime.sigma == pytest.approx(np.std(draws), rel=0.1)


def test_analyze_timing_needs_reference_runs():
    with pytest.raises(ValueError):
        analyze_timing({"switched": _merge({p: 1 for p in ((0, 0), (0, 1), (1, 0), (1, 1))})})


def test_campaign_durations():
    d = campaign_durations(8000.0)
    assert d["switched"] == 8000.0
    assert sum(v for k, v in d.items() if k != "switched") == pytest.approx(16000.0)


def test_campaign_worker_independent():
    plan = ideal_plan()
    a = timing_campaign(plan, 0.6, chunk=0.2)
    b = timing_campaign(plan, 0.6, chunk=0.2, workers=3)
    assert a.s_prime == b.s_prime
    assert a.normalized == b.normalized


def test_ideal_campaign_matches_prediction():
    plan = ideal_plan()
    res = timing_campaign(plan, 3.0, chunk=1.0)
    want = timing_s_prime_qm(plan)
    assert want == pytest.approx((math.sqrt(2) - 1) / 2)
    assert abs(res.s_prime.s_prime - want) < 4 * res.s_prime.sigma
    assert res.s_prime.violates


def test_naive_model_timing_respects_inequality():
    res = timing_campaign(ideal_plan(outcome_model="naive"), 3.0, chunk=1.0)
    assert res.s_prime.s_prime < 4 * res.s_prime.sigma


def test_normalized_rate_oracle():
    app = presets.apparatus("orsay-timing")
    s, d = app.polarizer_1.sum, app.polarizer_1.diff
    th = np.linspace(0, math.pi, 7)
    want = (s * s + app.f_contrast * d * d * np.cos(2 * th)) / 4
    assert np.allclose(normalized_rate_qm(th, app), want)


# audit and retardation


def test_audit_preset_all_spacelike():
    plan = presets.timing_plan(duration=0.002)
    log_1, log_2 = run_timing_experiment(plan)
    rep = lightcone_audit(log_1, log_2)
    assert rep.detections > 0 and rep.fraction == 1.0
    assert rep.light_time_ps == 43363
    assert 0 <= rep.min_margin_ps <= rep.max_margin_ps < 43363


def test_audit_flags_slow_switch():
    # a switch that dwells far longer than L/c cannot guarantee space-like separation
    slow = SwitchSpec(1e5, 0.0, 0.0)
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.01, switch_1=slow, switch_2=slow))
    rep = lightcone_audit(log_1, log_2)
    assert rep.fraction < 0.1


def test_audit_independent_delay_oracle():
    log_1, log_2 = run_timing_experiment(ideal_plan(duration=0.003))
    rep = lightcone_audit(log_1, log_2)
    n = 0
    for local, remote in ((log_1, log_2), (log_2, log_1)):
        ct, _ = remote.changes()
        for t in local.detections()[0]:
            last = max(c for c in ct if c <= t)
            n += (t - last) < 13.0 / C_LIGHT * 1e12
    assert rep.spacelike == n


def _analysis(values, sigma=0.01):
    from eprlab.core import Estimate
    from eprlab.timing import TimingAnalysis

    names = ("ab", "ab'", "a'b", "a'b'")
    return TimingAnalysis({k: Estimate(v, sigma) for k, v in zip(names, values)}, {}, None, {})


def test_retardation_check():
    same = {"x": _analysis([0.4, 0.1, 0.4, 0.4]), "y": _analysis([0.405, 0.095, 0.41, 0.39])}
    rep = qm_no_retardation_check(same)
    assert rep.passed and rep.dof == 4
    shifted = {"x": _analysis([0.4, 0.1, 0.4, 0.4]), "y": _analysis([0.3, 0.1, 0.4, 0.4])}
    assert not qm_no_retardation_check(shifted).passed
    with pytest.raises(ValueError):
        qm_no_retardation_check({"x": same["x"]})
