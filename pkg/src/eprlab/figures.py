"""Plot data for the reproducible figures, as delimited columns.

Closed-form curves come from the analytic engines; "data points" are seeded Monte
Carlo runs. No rendering happens here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import presets
from .core import OrientationSet, ZeroCountsError
from .lhv import naive_correlation_exact
from .montecarlo import PS, scan_two_channel, simulate_streams, time_delay_spectrum, window_counts
from .qm import ApparatusModel, correlation_qm, s_theta_curve
from .timing import normalized_pool, normalized_rate_qm, timing_campaign

FIGURES = ("fig3", "fig5", "fig11", "fig12", "fig13", "fig14", "fig16")


@dataclass
class FigureData:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple[float, ...]]
    notes: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"# figure: {self.name}"] + [f"# {n}" for n in self.notes]
        lines.append("\t".join(self.columns))
        lines += ["\t".join(_fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def fig3(points: int = 181) -> FigureData:
    """E(theta) for QM (ideal) and the naive model, 0 to 90 degrees."""
    th = np.linspace(0.0, 90.0, points)
    rows = []
    for t in th:
        q = math.cos(2 * math.radians(t))
        n = naive_correlation_exact(0.0, math.radians(t))
        rows.append((float(t), q, n, q - n))
    return FigureData("fig3", ("theta_deg", "e_qm", "e_naive", "difference"), rows)


def fig5(apparatus: ApparatusModel | None = None, points: int = 181) -> FigureData:
    """S(theta) on equal-spacing orientation sets, with the +-2 bounds."""
    app = apparatus or ApparatusModel.ideal()
    th = np.linspace(0.0, 90.0, points)
    s = s_theta_curve(np.radians(th), app)
    rows = [(float(t), float(v), 2.0, -2.0) for t, v in zip(th, s)]
    return FigureData("fig5", ("theta_deg", "s_qm", "bound_high", "bound_low"), rows, [f"contrast F*eps1*eps2 = {app.contrast!r}"])


def fig11(preset: str = "orsay-static-one-channel", duration: float = 30.0, seed: int = 0, workers: int = 1) -> FigureData:
    """Simulated time-delay spectrum with the fitted background + exponential model."""
    plan = presets.static_plan(preset, duration=duration, seed=seed)
    sp = time_delay_spectrum(plan, workers=workers)
    lo, hi = sp.bin_edges[:-1], sp.bin_edges[1:]
    B, A, tau = sp.background.value, sp.peak_area.value, sp.tau.value
    fit = B + A * (np.exp(-np.clip(lo, 0, None) / tau) - np.exp(-np.clip(hi, 0, None) / tau))
    rows = [(float(a * 1e9), float(b * 1e9), int(c), float(f)) for a, b, c, f in zip(lo, hi, sp.counts, fit)]
    notes = [
        f"background per bin = {B!r} +- {sp.background.sigma!r}",
        f"peak area = {A!r} +- {sp.peak_area.sigma!r}",
        f"tau_ns = {tau * 1e9!r} +- {sp.tau.sigma * 1e9!r}",
        f"duration_s = {duration!r}",
    ]
    return FigureData("fig11", ("delay_lo_ns", "delay_hi_ns", "counts", "fit"), rows, notes)


def fig12(preset: str = "orsay-static-one-channel", duration: float = 10.0, step_deg: float = 22.5, seed: int = 0, workers: int = 1) -> FigureData:
    """One-channel normalized coincidence rate R(theta)/R(inf, inf) over 0-360 degrees."""
    plan = presets.static_plan(preset, duration=duration, seed=seed)
    w, d = int(round(plan.window * PS)), int(round(plan.accidental_delay * PS))
    ref = simulate_streams(plan, 0.0, 0.0, True, True, config_index=300, workers=workers)
    r0 = window_counts(ref.times_1, ref.times_2, w, d)
    if r0.true <= 0:
        raise ZeroCountsError("no coincidences with both polarizers removed; increase the duration")
    rows = []
    for i, t in enumerate(np.arange(0.0, 360.0 + 1e-9, step_deg)):
        s = simulate_streams(plan, 0.0, math.radians(t), config_index=301 + i, workers=workers)
        wc = window_counts(s.times_1, s.times_2, w, d)
        n = wc.true / r0.true
        sig = math.sqrt(wc.variance + n * n * r0.variance) / r0.true
        rows.append((float(t), n, sig, float(normalized_rate_qm(math.radians(t), plan.apparatus)[0])))
    return FigureData("fig12", ("theta_deg", "normalized_rate", "sigma", "qm"), rows, [f"duration_s per point = {duration!r}"])


def _scan(preset, duration, angles_deg, seed, workers):
    plan = presets.static_plan(preset, duration=duration, seed=seed)
    runs = scan_two_channel(plan, [math.radians(a) for a in angles_deg], workers)
    return plan, {a: r.correlation for a, r in zip(angles_deg, runs)}


def fig13(preset: str = "orsay-static-two-channel", duration: float = 20.0, step_deg: float = 7.5, seed: int = 0, workers: int = 1) -> FigureData:
    """Two-channel E(theta) with +-2 sigma bars and the QM curve for the apparatus."""
    angles = [float(a) for a in np.arange(0.0, 90.0 + 1e-9, step_deg)]
    plan, e = _scan(preset, duration, angles, seed, workers)
    rows = [(a, e[a].value, 2 * e[a].sigma, correlation_qm(0.0, math.radians(a), plan.apparatus)) for a in angles]
    notes = [f"qm amplitude = {plan.apparatus.contrast!r}", "error column is 2 sigma"]
    return FigureData("fig13", ("theta_deg", "e_sim", "err_2sigma", "e_qm"), rows, notes)


def fig14(preset: str = "orsay-static-two-channel", duration: float = 20.0, step_deg: float = 7.5, seed: int = 0, workers: int = 1) -> FigureData:
    """S(theta) = 3 E(theta) - E(3 theta) from simulated correlations (rotational
    invariance lets one E(theta) run stand for the three pairs at angle theta)."""
    thetas = [float(a) for a in np.arange(0.0, 90.0 + 1e-9, step_deg)]
    needed = sorted({t for t in thetas} | {(3 * t) % 180.0 for t in thetas})
    plan, e = _scan(preset, duration, needed, seed, workers)
    rows = []
    for t in thetas:
        e1, e3 = e[t], e[(3 * t) % 180.0]
        s = 3 * e1.value - e3.value
        sig = math.sqrt(9 * e1.sigma**2 + e3.sigma**2)
        rows.append((t, s, 2 * sig, float(s_theta_curve(math.radians(t), plan.apparatus))))
    notes = ["error column is 2 sigma", f"qm maximum = {2 * math.sqrt(2) * plan.apparatus.contrast!r}"]
    return FigureData("fig14", ("theta_deg", "s_sim", "err_2sigma", "s_qm"), rows, notes)


def fig16(duration: float = 20.0, thetas_deg: Sequence[float] = (0.0, 15.0, 22.5, 30.0, 45.0, 60.0, 67.5, 75.0, 90.0), seed: int = 0, workers: int = 1) -> FigureData:
    """Timing experiment: normalized coincidence rate vs relative orientation.

    Each theta uses the equal-spacing set, whose pairs (a,b), (a',b), (a',b') sit at
    relative angle theta; the three channel pairs are pooled before normalizing.
    """
    rows = []
    pooled = [(0, 0), (1, 0), (1, 1)]
    for i, t in enumerate(thetas_deg):
        plan = presets.timing_plan(orientations=OrientationSet.from_theta(math.radians(t)), seed=seed + i)
        m = timing_campaign(plan, duration, kinds=("switched", "remove_both"), workers=workers).merged
        est = normalized_pool(m["switched"], m["remove_both"], pooled)
        rows.append((float(t), est.value, est.sigma, float(normalized_rate_qm(math.radians(t), plan.apparatus)[0])))
    return FigureData("fig16", ("theta_deg", "normalized_rate", "sigma", "qm"), rows, [f"switched duration_s per point = {duration!r}"])


def make_figure(name: str, preset: str | None = None, duration: float | None = None, seed: int = 0, workers: int = 1) -> FigureData:
    if name not in FIGURES:
        raise KeyError(f"unknown figure {name!r}; known: {', '.join(FIGURES)}")
    kw = {}
    if duration is not None:
        kw["duration"] = duration
    if name == "fig3":
        return fig3()
    if name == "fig5":
        return fig5(presets.apparatus(preset) if preset else None)
    if name == "fig16":
        return fig16(seed=seed, workers=workers, **kw)
    default = {"fig11": "orsay-static-one-channel", "fig12": "orsay-static-one-channel"}.get(name, "orsay-static-two-channel")
    static = presets.resolve_static_preset(preset or default)
    return {"fig11": fig11, "fig12": fig12, "fig13": fig13, "fig14": fig14}[name](static, seed=seed, workers=workers, **kw)
