"""Switched-analyzer (timing) experiment.

Each side has a switch routing the incoming photon to one of two one-channel
polarizers (a or a' on side I, b or b' on side II). The two sides are logged
independently and brought together offline. Times are integer picoseconds from the
run start, which both logs share.

Random streams: a source stream (pair epochs, cascade delays, projection uniforms,
hidden variables) and one stream per side (switch timeline, routing, polarizer
transmission). A side's settings are never computed from the other side's stream.
The quantum sampler is a joint sampler, so photon 2's projection uses the channel
photon 1 actually went through; side I's log never depends on side II.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import Estimate, OrientationSet, SPrimeResult, s_prime_result
from .lhv import LhvModel, get_model
from .montecarlo import (
    LOST,
    PLUS,
    PS,
    PairSource,
    WindowCounts,
    emission_classes,
    pairs_within,
    transmit,
)
from .qm import REMOVED, ApparatusModel, joint_probabilities

C_LIGHT = 299_792_458.0  # m/s

PRIMARY, SECONDARY = 0, 1
CHANGE, DETECTION = 0, 1
MODES = ("quasiperiodic", "random-telegraph", "static")
ROUTINGS = ("bernoulli", "threshold")


# ---------------------------------------------------------------------------
# geometry and switches


@dataclass(frozen=True)
class Geometry:
    separation: float = 13.0  # m between the two switches
    source_position: float = 0.5  # fraction of the separation from side I
    c: float = C_LIGHT

    def __post_init__(self):
        if self.separation <= 0 or self.c <= 0:
            raise ValueError("separation and c must be positive")
        if not 0.0 <= self.source_position <= 1.0:
            raise ValueError("source_position must lie in [0, 1]")

    @property
    def light_time_ps(self) -> int:
        """L/c rounded to the picosecond grid."""
        return int(round(self.separation / self.c * PS))

    @property
    def spacelike_threshold_ps(self) -> int:
        # for integer dt, dt < L/c exactly iff dt < ceil(L/c)
        return math.ceil(self.separation / self.c * PS)

    def is_spacelike(self, dt_ps) -> np.ndarray:
        return np.abs(np.asarray(dt_ps, dtype=np.int64)) < self.spacelike_threshold_ps

    @property
    def transit_ps(self) -> tuple[int, int]:
        t = self.separation / self.c * PS
        return int(round(self.source_position * t)), int(round((1.0 - self.source_position) * t))


@dataclass(frozen=True)
class SwitchSpec:
    """Optical switch driving one side's effective polarizer orientation.

    quasiperiodic: routing probability to the primary channel follows
        p(t) = floor + (1 - 2 floor) sin^2((pi/2) cos(2 pi f t + phase));
        `routing` picks per-photon Bernoulli draws on p(t) or a hard threshold p > 1/2.
    random-telegraph: the setting flips as a Poisson process with mean dwell
        `mean_dwell`; routing follows the setting exactly.
    static: the setting stays at `static_setting`.
    """

    drive_frequency: float = 25e6
    phase: float = 0.0
    floor: float = 0.2
    mode: str = "quasiperiodic"
    routing: str = "bernoulli"
    mean_dwell: float = 10e-9
    static_setting: int = PRIMARY

    def __post_init__(self):
        if not 0.0 <= self.floor < 0.5:
            raise ValueError(f"floor must lie in [0, 0.5), got {self.floor}")
        if self.drive_frequency <= 0 or self.mean_dwell <= 0:
            raise ValueError("drive_frequency and mean_dwell must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown switch mode {self.mode!r}; known: {', '.join(MODES)}")
        if self.routing not in ROUTINGS:
            raise ValueError(f"unknown routing {self.routing!r}; known: {', '.join(ROUTINGS)}")
        if self.static_setting not in (PRIMARY, SECONDARY):
            raise ValueError("static_setting must be 0 or 1")

    @property
    def period_ps(self) -> float:
        return PS / self.drive_frequency


def switch_probability(t, spec: SwitchSpec):
    """Probability that a photon arriving at time t (seconds) goes to the primary channel."""
    psi = 2 * math.pi * spec.drive_frequency * np.asarray(t, dtype=float) + spec.phase
    return spec.floor + (1 - 2 * spec.floor) * np.sin(0.5 * math.pi * np.cos(psi)) ** 2


def _probability_ps(t_ps: np.ndarray, spec: SwitchSpec) -> np.ndarray:
    # reduce to whole drive cycles first; keeps the phase good to ~1e-5 rad at 1e3 s
    cycles = np.asarray(t_ps, dtype=float) * (spec.drive_frequency / PS)
    frac = cycles - np.floor(cycles)
    psi = 2 * math.pi * frac + spec.phase
    return spec.floor + (1 - 2 * spec.floor) * np.sin(0.5 * math.pi * np.cos(psi)) ** 2


def crossing_times(spec: SwitchSpec, count: int, start: float = 0.0) -> np.ndarray:
    """First `count` crossings of p(t) = 1/2 at or after `start` (seconds).

    p = 1/2 where |cos psi| = 1/2, i.e. psi = j pi/3 with j not a multiple of 3.
    """
    offset = 3 * spec.phase / math.pi
    step = 1.0 / (6 * spec.drive_frequency)
    j = math.ceil(start / step + offset)
    out = []
    while len(out) < count:
        if j % 3:
            out.append((j - offset) * step)
        j += 1
    return np.array(out)


def switching_intervals(spec: SwitchSpec, count: int = 6, rng: np.random.Generator | None = None) -> np.ndarray:
    """Dwell times (seconds) between successive effective setting changes."""
    if spec.mode == "quasiperiodic":
        return np.diff(crossing_times(spec, count + 1))
    if spec.mode == "random-telegraph":
        rng = rng if rng is not None else np.random.default_rng()
        return rng.exponential(spec.mean_dwell, count)
    raise ValueError("a static switch never changes setting")


class QuasiperiodicTimeline:
    """Effective setting of a quasiperiodic switch (p > 1/2 means primary).

    Change j happens at ceil(t_j) picoseconds; entering psi = j pi/3 with j = 1 mod 3
    switches to the secondary channel, j = 2 mod 3 back to the primary one.
    """

    def __init__(self, spec: SwitchSpec):
        self.spec = spec
        self.offset = 3 * spec.phase / math.pi
        self.step_ps = spec.period_ps / 6

    def change_time_ps(self, j) -> np.ndarray:
        return np.ceil((np.asarray(j, dtype=float) - self.offset) * self.step_ps).astype(np.int64)

    @staticmethod
    def setting_after(j) -> np.ndarray:
        return np.where(np.asarray(j) % 3 == 1, SECONDARY, PRIMARY).astype(np.int8)

    def last_change_index(self, t_ps) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t_ps, dtype=np.int64))
        top = np.floor(t / self.step_ps + self.offset).astype(np.int64) + 2
        out = np.zeros_like(top)
        found = np.zeros(t.shape, dtype=bool)
        for k in range(7):
            cand = top - k
            ok = ~found & (cand % 3 != 0) & (self.change_time_ps(cand) <= t)
            out[ok] = cand[ok]
            found |= ok
        if not found.all():
            raise RuntimeError("quasiperiodic timeline lookup failed")
        return out

    def setting_at(self, t_ps) -> np.ndarray:
        return self.setting_after(self.last_change_index(t_ps))

    def last_change(self, t_ps) -> np.ndarray:
        return self.change_time_ps(self.last_change_index(t_ps))

    def changes(self, end_ps: int) -> tuple[np.ndarray, np.ndarray]:
        """Change records in [0, end): the setting at t = 0, then every change after it."""
        j0 = int(self.last_change_index(0)[0])
        j1 = int(self.last_change_index(end_ps - 1)[0])
        j = np.arange(j0 + 1, j1 + 1)
        j = j[j % 3 != 0]
        times = np.concatenate(([0], self.change_time_ps(j)))
        settings = np.concatenate((self.setting_after([j0]), self.setting_after(j)))
        return times.astype(np.int64), settings.astype(np.int8)


def telegraph_settings(
    arrivals: np.ndarray,
    end_ps: int,
    mean_dwell_ps: float,
    rng: np.random.Generator,
    fill_rng: np.random.Generator | None = None,
):
    """Random-telegraph setting at each (sorted) arrival time.

    The setting flips as a Poisson process, so between consecutive arrivals only the
    number of flips and the last flip time matter; both are drawn exactly. With
    `fill_rng`, the remaining flips of every gap are drawn too (from that separate
    stream, so the settings do not change) and returned as change records;
    otherwise the records hold only the initial setting.
    """
    s0 = int(rng.integers(2))
    grid = np.concatenate(([0], arrivals, [max(end_ps - 1, 0)])).astype(np.int64)
    gaps = np.diff(grid)
    n = rng.poisson(gaps / mean_dwell_ps)
    u = rng.random(gaps.size)
    flipped = n > 0
    last = grid[:-1] + np.clip(np.ceil(gaps * u ** (1.0 / np.maximum(n, 1))), 1, None).astype(np.int64)
    last = np.where(flipped, np.minimum(last, grid[1:]), 0)
    settings = (s0 ^ (np.cumsum(n) % 2)).astype(np.int8)
    # last change time at each grid point: forward-fill the gaps that had a flip
    idx = np.where(flipped, np.arange(gaps.size), -1)
    np.maximum.accumulate(idx, out=idx)
    last_at = np.where(idx >= 0, last[np.maximum(idx, 0)], 0)
    out = (settings[:-1], last_at[:-1])
    if fill_rng is None:
        return out + ((np.zeros(1, np.int64), np.array([s0], np.int8)),)
    k = np.repeat(np.flatnonzero(flipped), n[flipped] - 1)
    others = fill_rng.integers(grid[:-1][k] + 1, last[k] + 1) if k.size else np.zeros(0, np.int64)
    # order: within a gap the drawn last flip comes after the others
    times = np.concatenate((others, last[flipped]))
    gap_of = np.concatenate((k, np.flatnonzero(flipped)))
    is_last = np.concatenate((np.zeros(others.size, bool), np.ones(int(flipped.sum()), bool)))
    order = np.lexsort((is_last, times, gap_of))
    times = times[order]
    rec_settings = (s0 ^ (np.arange(1, times.size + 1) % 2)).astype(np.int8)
    records = (np.concatenate(([0], times)).astype(np.int64), np.concatenate(([s0], rec_settings)).astype(np.int8))
    return out + (records,)


# ---------------------------------------------------------------------------
# side logs


@dataclass(frozen=True)
class LogHeader:
    run_id: str
    side: str  # "I" or "II"
    seed: int
    run_index: int
    separation: float
    source_position: float
    c: float
    transit_ps: int
    duration_ps: int
    origin_ps: int = 0
    labels: tuple[str, str] = ("a", "a'")
    changes: str = "complete"  # or "sparse": only the initial setting is recorded
    blocked: bool = False  # blocked photons logged with outcome '-'
    switch: SwitchSpec = field(default_factory=SwitchSpec)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.separation, self.source_position, self.c)


_HEADER_MAGIC = "# eprlab side log v1"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(v)
    return str(v)


def _parse_value(text: str, like):
    if isinstance(like, bool):
        if text not in ("true", "false"):
            raise ValueError(f"bad boolean {text!r}")
        return text == "true"
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(text.split(","))
    return text


def _header_items(h: LogHeader):
    for f in dataclasses.fields(h):
        if f.name == "switch":
            for g in dataclasses.fields(h.switch):
                yield f"switch.{g.name}", getattr(h.switch, g.name)
        else:
            yield f.name, getattr(h, f.name)


def _header_from_items(items: Mapping[str, str]) -> LogHeader:
    template = LogHeader("", "I", 0, 0, 1.0, 0.5, 1.0, 0, 0)
    sw = {}
    kw = {}
    for key, like in _header_items(template):
        if key not in items:
            raise ValueError(f"side log header is missing {key!r}")
        value = _parse_value(items[key], like)
        if key.startswith("switch."):
            sw[key[len("switch."):]] = value
        else:
            kw[key] = value
    return LogHeader(**kw, switch=SwitchSpec(**sw))


_OUTCOME_TEXT = {1: "+", -1: "-", 0: "."}
_OUTCOME_CODE = {v: k for k, v in _OUTCOME_TEXT.items()}
_KIND_TEXT = {CHANGE: "change", DETECTION: "detection"}
_KIND_CODE = {v: k for k, v in _KIND_TEXT.items()}


@dataclass(eq=False)
class SideLog:
    """Time-ordered records of one side: setting changes and detections.

    Timestamps are non-decreasing; at equal times a setting change precedes a
    detection. Each detection carries the channel (setting) it went through.
    """

    header: LogHeader
    times: np.ndarray
    kinds: np.ndarray
    settings: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        n = self.times.size
        if not (self.kinds.size == self.settings.size == self.outcomes.size == n):
            raise ValueError("side log columns differ in length")
        if n and np.any((np.diff(self.times) < 0) | ((np.diff(self.times) == 0) & (np.diff(self.kinds) < 0))):
            raise ValueError("side log records are not time ordered")

    @classmethod
    def build(cls, header: LogHeader, change_times, change_settings, det_times, det_settings, det_outcomes) -> SideLog:
        times = np.concatenate((change_times, det_times)).astype(np.int64)
        kinds = np.concatenate((np.full(len(change_times), CHANGE), np.full(len(det_times), DETECTION))).astype(np.int8)
        settings = np.concatenate((change_settings, det_settings)).astype(np.int8)
        outcomes = np.concatenate((np.zeros(len(change_times)), det_outcomes)).astype(np.int8)
        order = np.lexsort((kinds, times))
        return cls(header, times[order], kinds[order], settings[order], outcomes[order])

    def __eq__(self, other):
        if not isinstance(other, SideLog):
            return NotImplemented
        return self.header == other.header and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("times", "kinds", "settings", "outcomes")
        )

    def _select(self, mask):
        return self.times[mask], self.settings[mask], self.outcomes[mask]

    def detections(self, include_blocked: bool = False):
        mask = self.kinds == DETECTION
        if not include_blocked:
            mask &= self.outcomes == PLUS
        return self._select(mask)

    def changes(self):
        return self.times[self.kinds == CHANGE], self.settings[self.kinds == CHANGE]

    def replay_settings(self, t_ps) -> np.ndarray:
        """Setting in force at each time according to the logged changes."""
        ct, cs = self.changes()
        idx = np.searchsorted(ct, np.asarray(t_ps), side="right") - 1
        if np.any(idx < 0):
            raise ValueError("time precedes the first setting record")
        return cs[idx]

    def to_text(self) -> str:
        lines = [_HEADER_MAGIC]
        lines += [f"# {k} = {_format_value(v)}" for k, v in _header_items(self.header)]
        labels = self.header.labels
        kinds = [_KIND_TEXT[k] for k in self.kinds.tolist()]
        outs = [_OUTCOME_TEXT[o] for o in self.outcomes.tolist()]
        lines += [
            f"{t}\t{k}\t{labels[s]}\t{o}" for t, k, s, o in zip(self.times.tolist(), kinds, self.settings.tolist(), outs)
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> SideLog:
        lines = text.splitlines()
        if not lines or lines[0] != _HEADER_MAGIC:
            raise ValueError("not a side log (missing header line)")
        items = {}
        body = 1
        for body, line in enumerate(lines[1:], start=1):
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(" = ")
            items[key] = value
        else:
            body = len(lines)
        header = _header_from_items(items)
        label_code = {lab: i for i, lab in enumerate(header.labels)}
        rows = [ln.split("\t") for ln in lines[body:]]
        if any(len(r) != 4 for r in rows):
            raise ValueError("malformed side log record")
        return cls(
            header,
            np.array([int(r[0]) for r in rows], dtype=np.int64),
            np.array([_KIND_CODE[r[1]] for r in rows], dtype=np.int8),
            np.array([label_code[r[2]] for r in rows], dtype=np.int8),
            np.array([_OUTCOME_CODE[r[3]] for r in rows], dtype=np.int8),
        )

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> SideLog:
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class TimingPlan:
    geometry: Geometry
    switch_1: SwitchSpec
    switch_2: SwitchSpec
    apparatus: ApparatusModel
    orientations: OrientationSet
    source: PairSource = field(default_factory=PairSource)
    outcome_model: str | LhvModel = "qm"
    duration: float = 1.0
    window: float = 19e-9
    accidental_delay: float = 200e-9
    seed: int = 0
    record_changes: bool = True
    log_blocked: bool = False
    # optional multiplicative collection efficiency f(t seconds) in [0, 1]; default off
    drift: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.duration <= 0 or self.window <= 0:
            raise ValueError("duration and window must be positive")
        if self.accidental_delay <= self.window:
            raise ValueError("accidental_delay must exceed the coincidence window")

    @property
    def model(self) -> LhvModel | None:
        if isinstance(self.outcome_model, LhvModel):
            return self.outcome_model
        if self.outcome_model == "qm":
            return None
        return get_model(self.outcome_model)


SOURCE_STREAM, SIDE_1_STREAM, SIDE_2_STREAM, FILL_1_STREAM, FILL_2_STREAM = range(5)


MAX_CHANGE_RECORDS = 2e7


def expected_change_records(spec: SwitchSpec, duration: float) -> float:
    if spec.mode == "quasiperiodic":
        return 4 * spec.drive_frequency * duration
    if spec.mode == "random-telegraph":
        return duration / spec.mean_dwell
    return 1.0


def stream(seed: int, run_index: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index, which)))


def _route(spec: SwitchSpec, arrivals: np.ndarray, end_ps: int, rng, fill_rng, record: bool):
    """Channel per (sorted) arrival, plus change records (times, settings)."""
    n = arrivals.size
    if spec.mode == "static":
        ch = np.full(n, spec.static_setting, dtype=np.int8)
        return ch, (np.zeros(1, np.int64), np.array([spec.static_setting], np.int8))
    if spec.mode == "random-telegraph":
        ch, _, records = telegraph_settings(arrivals, end_ps, spec.mean_dwell * PS, rng, fill_rng if record else None)
        return ch, records
    timeline = QuasiperiodicTimeline(spec)
    if spec.routing == "threshold":
        ch = timeline.setting_at(arrivals) if n else np.zeros(0, np.int8)
    else:
        ch = np.where(rng.random(n) < _probability_ps(arrivals, spec), PRIMARY, SECONDARY).astype(np.int8)
    records = timeline.changes(end_ps) if record else (np.zeros(1, np.int64), timeline.setting_at(0))
    return ch, records


def _side_header(plan: TimingPlan, side: str, run_index: int, run_id: str, duration_ps: int, record: bool) -> LogHeader:
    g = plan.geometry
    transit = g.transit_ps[0 if side == "I" else 1]
    spec = plan.switch_1 if side == "I" else plan.switch_2
    labels = ("a", "a'") if side == "I" else ("b", "b'")
    changes = "complete" if (record or spec.mode == "static") else "sparse"
    return LogHeader(
        run_id, side, plan.seed, run_index, g.separation, g.source_position, g.c, transit,
        duration_ps, 0, labels, changes, plan.log_blocked, spec,
    )


def run_timing_experiment(
    plan: TimingPlan,
    run_index: int = 0,
    remove_1: bool = False,
    remove_2: bool = False,
    simulate_side_2: bool = True,
    run_id: str | None = None,
) -> tuple[SideLog, SideLog | None]:
    """Simulate one timing run and return the two side logs.

    A removed side keeps its switch but both of its polarizers pass every photon.
    """
    duration_ps = int(round(plan.duration * PS))
    if plan.record_changes:
        for spec in (plan.switch_1, plan.switch_2):
            n = expected_change_records(spec, plan.duration)
            if n > MAX_CHANGE_RECORDS:
                raise ValueError(
                    f"complete change records would hold ~{n:.3g} entries per side; "
                    "shorten the run or set record_changes=False"
                )
    run_id = run_id or f"{plan.seed}-{run_index}"
    app = plan.apparatus
    pol_1 = REMOVED if remove_1 else app.polarizer_1
    pol_2 = REMOVED if remove_2 else app.polarizer_2
    eta = app.detection_efficiency
    o = plan.orientations
    model = plan.model
    record = plan.record_changes

    src = stream(plan.seed, run_index, SOURCE_STREAM)
    epochs, cls = emission_classes(src, plan.source.cascade_rate, eta, eta, 0, duration_ps)
    n = epochs.size
    delay = np.rint(src.exponential(plan.source.tau_r * PS, n)).astype(np.int64)
    u = src.random((3, n))
    lam = model.sample_lambda(src, n) if model is not None else None
    transit_1, transit_2 = plan.geometry.transit_ps

    def arrive(collected, times, spec, which, fill):
        """Sorted arrival times at the switch, their pair indices, channels and records."""
        idx = np.flatnonzero(collected)
        t = times[idx]
        order = np.argsort(t, kind="stable")
        t, idx = t[order], idx[order]
        keep = t < duration_ps
        t, idx = t[keep], idx[keep]
        rng = stream(plan.seed, run_index, which)
        ch, records = _route(spec, t, duration_ps, rng, stream(plan.seed, run_index, fill), record)
        return t, idx, ch, records, rng

    def detect(t, q, pol, rng):
        out = transmit(q, pol, rng.random(t.size), two_channel=False)
        if plan.drift is not None:
            out = np.where(rng.random(t.size) < plan.drift(t / PS), out, LOST)
        return out

    t1, idx_1, ch1, rec1, rng_1 = arrive(cls != 2, epochs + transit_1, plan.switch_1, SIDE_1_STREAM, FILL_1_STREAM)
    theta_1 = np.where(ch1 == PRIMARY, o.a, o.a_prime)
    if model is None:
        q1 = np.where(u[0][idx_1] < 0.5, 1, -1)
    else:
        q1 = np.where(u[0][idx_1] < model.response_a(lam[idx_1], theta_1), 1, -1)
    out1 = detect(t1, q1, pol_1, rng_1)
    log_1 = _make_log(plan, "I", run_index, run_id, duration_ps, record, rec1, t1, ch1, out1)
    if not simulate_side_2:
        return log_1, None

    t2, idx_2, ch2, rec2, rng_2 = arrive(cls != 1, epochs + delay + transit_2, plan.switch_2, SIDE_2_STREAM, FILL_2_STREAM)
    theta_2 = np.where(ch2 == PRIMARY, o.b, o.b_prime)
    if model is None:
        # photon 2 keeps the polarization memory only if photon 1 met a polarizer;
        # pairs whose photon 1 was never collected get an unpolarized photon 2
        pol_axis = np.zeros(n)
        f = np.zeros(n)
        pol_axis[idx_1] = theta_1 + np.where(q1 == 1, 0.0, math.pi / 2)
        if not remove_1:
            f[idx_1] = app.f_contrast
        p_par = np.where(u[1][idx_2] < f[idx_2], np.cos(theta_2 - pol_axis[idx_2]) ** 2, 0.5)
        q2 = np.where(u[2][idx_2] < p_par, 1, -1)
    else:
        q2 = np.where(u[1][idx_2] < model.response_b(lam[idx_2], theta_2), 1, -1)
    out2 = detect(t2, q2, pol_2, rng_2)
    log_2 = _make_log(plan, "II", run_index, run_id, duration_ps, record, rec2, t2, ch2, out2)
    return log_1, log_2


def _make_log(plan, side, run_index, run_id, duration_ps, record, records, t, ch, out) -> SideLog:
    header = _side_header(plan, side, run_index, run_id, duration_ps, record)
    keep = out != LOST
    outcomes = np.where(keep, PLUS, -1)
    if not plan.log_blocked:
        t, ch, outcomes = t[keep], ch[keep], outcomes[keep]
    return SideLog.build(header, records[0], records[1], t, ch, outcomes)


# ---------------------------------------------------------------------------
# merge


class LogMismatchError(ValueError):
    """The two logs do not come from the same run or time origin."""


SETTING_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


def add_counts(x: WindowCounts, y: WindowCounts) -> WindowCounts:
    return WindowCounts(x.raw + y.raw, x.accidental + y.accidental, x.accidental_variance + y.accidental_variance)


ZERO_COUNTS = WindowCounts(0, 0.0, 0.0)


@dataclass(frozen=True)
class MergeResult:
    """Coincidences per (setting_I, setting_II) pair of one merged run."""

    counts: Mapping[tuple[int, int], WindowCounts]
    duration: float
    # per setting pair, window counts per outcome pair (+/- = passed/blocked), if logged
    outcome_counts: Mapping[tuple[int, int], Mapping[tuple[int, int], WindowCounts]] | None = None

    def rate(self, pair) -> Estimate:
        c = self.counts[pair]
        return Estimate(c.true / self.duration, math.sqrt(c.variance) / self.duration)

    def swapped(self) -> MergeResult:
        counts = {(j, i): c for (i, j), c in self.counts.items()}
        oc = None
        if self.outcome_counts is not None:
            oc = {(j, i): {(y, x): w for (x, y), w in d.items()} for (i, j), d in self.outcome_counts.items()}
        return MergeResult(counts, self.duration, oc)

    def correlations(self) -> dict[tuple[int, int], Estimate]:
        """E per setting pair from the pass/block populations (needs blocked records)."""
        from .core import correlation_from_rates

        if self.outcome_counts is None:
            raise ValueError("outcome populations need logs recorded with log_blocked=True")
        out = {}
        for pair, d in self.outcome_counts.items():
            wc = [d[(1, 1)], d[(1, -1)], d[(-1, 1)], d[(-1, -1)]]
            out[pair] = correlation_from_rates([w.true for w in wc], [w.variance for w in wc])
        return out

    def __add__(self, other: MergeResult) -> MergeResult:
        counts = {p: add_counts(self.counts[p], other.counts[p]) for p in SETTING_PAIRS}
        return MergeResult(counts, self.duration + other.duration, None)


def _check_same_run(h1: LogHeader, h2: LogHeader):
    for name in ("run_id", "origin_ps", "duration_ps", "separation", "source_position", "c", "seed", "run_index"):
        if getattr(h1, name) != getattr(h2, name):
            raise LogMismatchError(f"logs disagree on {name}: {getattr(h1, name)!r} vs {getattr(h2, name)!r}")
    if h1.side == h2.side:
        raise LogMismatchError("both logs come from the same side")


def _pair_counts(t1, s1, o1, t2, s2, o2, w, dl, offset):
    reach = dl + w
    i, j, d = pairs_within(t1, t2, offset - reach, offset + reach)
    h = w // 2
    masks = (np.abs(d - offset) < h, np.abs(d - offset + dl) < h, np.abs(d - offset - dl) < h)
    code = (s1[i].astype(np.int64) * 2 + s2[j]) * 4 + (o1[i] < 0) * 2 + (o2[j] < 0)
    tallies = [np.bincount(code[m], minlength=16) for m in masks]
    return tallies


def _window(tallies, k) -> WindowCounts:
    raw, early, late = (int(t[k]) for t in tallies)
    return WindowCounts(raw, (early + late) / 2, (early + late) / 4)


def merge_and_correlate(log_1: SideLog, log_2: SideLog, window: float = 19e-9, accidental_delay: float = 200e-9) -> MergeResult:
    """Pair detections with |t2 - t1 - offset| < window/2, where the offset is the
    transit difference, and attribute each coincidence to the settings each side
    recorded at its own detection time. Accidentals from windows at +-delay."""
    h1, h2 = log_1.header, log_2.header
    _check_same_run(h1, h2)
    offset = h2.transit_ps - h1.transit_ps
    w, dl = int(round(window * PS)), int(round(accidental_delay * PS))
    t1, s1, o1 = log_1.detections(include_blocked=True)
    t2, s2, o2 = log_2.detections(include_blocked=True)
    tallies = _pair_counts(t1, s1, o1, t2, s2, o2, w, dl, offset)
    counts, outcome_counts = {}, {}
    for x, y in SETTING_PAIRS:
        base = (x * 2 + y) * 4
        counts[(x, y)] = _window(tallies, base)
        outcome_counts[(x, y)] = {
            (1, 1): _window(tallies, base), (1, -1): _window(tallies, base + 1),
            (-1, 1): _window(tallies, base + 2), (-1, -1): _window(tallies, base + 3),
        }
    both_blocked = h1.blocked and h2.blocked
    return MergeResult(counts, h1.duration_ps / PS, outcome_counts if both_blocked else None)


def shuffle_outcomes(log: SideLog, rng: np.random.Generator) -> SideLog:
    """Decorrelation control: permute the pass/block outcomes among detection records
    with the same setting (needs blocked records)."""
    outcomes = log.outcomes.copy()
    for s in (PRIMARY, SECONDARY):
        idx = np.flatnonzero((log.kinds == DETECTION) & (log.settings == s))
        outcomes[idx] = rng.permutation(outcomes[idx])
    return SideLog(log.header, log.times, log.kinds, log.settings, outcomes)


# ---------------------------------------------------------------------------
# S' from the four run types


RUN_TYPES = ("switched", "remove_2", "remove_1", "remove_both")
RUN_REMOVALS = {"switched": (False, False), "remove_2": (False, True), "remove_1": (True, False), "remove_both": (True, True)}


class _Linear:
    """A ratio-of-sums quantity with its gradient over independent count variables."""

    def __init__(self):
        self.value = 0.0
        self.grad: dict = {}

    def add_ratio(self, coeff, num_keys, den_keys, rates):
        a = sum(rates[k][0] for k in num_keys)
        b = sum(rates[k][0] for k in den_keys)
        if b <= 0:
            raise ZeroDivisionError("normalization rate is zero; increase the duration")
        self.value += coeff * a / b
        for k in num_keys:
            self.grad[k] = self.grad.get(k, 0.0) + coeff / b
        for k in den_keys:
            self.grad[k] = self.grad.get(k, 0.0) - coeff * a / b**2
        return self

    def estimate(self, rates) -> Estimate:
        var = sum(g * g * rates[k][1] for k, g in self.grad.items())
        return Estimate(self.value, math.sqrt(var))


@dataclass(frozen=True)
class TimingAnalysis:
    normalized: Mapping[str, Estimate]  # n(x, y) = R_xy / R_xy(inf, inf)
    correlations: Mapping[str, Estimate]
    s_prime: SPrimeResult | None
    merged: Mapping[str, MergeResult]


PAIR_NAMES = {(0, 0): "ab", (0, 1): "ab'", (1, 0): "a'b", (1, 1): "a'b'"}


def analyze_timing(merged: Mapping[str, MergeResult]) -> TimingAnalysis:
    """Per-channel normalized rates, one-channel correlations and S'.

    n(x, y) divides each channel pair's rate by the same channel pair's rate with all
    polarizers removed, which cancels routing fractions and channel efficiencies.
    n(x, inf) and n(inf, y) use the runs with one side's polarizers removed.
    """
    if "switched" not in merged or "remove_both" not in merged:
        raise ValueError("need at least the switched and remove_both runs")
    rates = {}
    for kind, m in merged.items():
        for p in SETTING_PAIRS:
            c = m.counts[p]
            rates[(kind, p)] = (c.true / m.duration, c.variance / m.duration**2)

    def n_pair(p):
        return _Linear().add_ratio(1.0, [("switched", p)], [("remove_both", p)], rates)

    def n_side(kind, ps):
        return _Linear().add_ratio(1.0, [(kind, p) for p in ps], [("remove_both", p) for p in ps], rates)

    normalized = {PAIR_NAMES[p]: n_pair(p).estimate(rates) for p in SETTING_PAIRS}
    correlations = {}
    s_prime = None
    if "remove_1" in merged and "remove_2" in merged:
        marg_1 = {x: [(x, 0), (x, 1)] for x in (0, 1)}
        marg_2 = {y: [(0, y), (1, y)] for y in (0, 1)}
        for x, lab in ((0, "a"), (1, "a'")):
            normalized[f"{lab}inf"] = n_side("remove_2", marg_1[x]).estimate(rates)
        for y, lab in ((0, "b"), (1, "b'")):
            normalized[f"inf{lab}"] = n_side("remove_1", marg_2[y]).estimate(rates)
        for p in SETTING_PAIRS:
            q = _Linear()
            q.value = 1.0
            q.add_ratio(-2.0, [("remove_2", k) for k in marg_1[p[0]]], [("remove_both", k) for k in marg_1[p[0]]], rates)
            q.add_ratio(-2.0, [("remove_1", k) for k in marg_2[p[1]]], [("remove_both", k) for k in marg_2[p[1]]], rates)
            q.add_ratio(4.0, [("switched", p)], [("remove_both", p)], rates)
            correlations[PAIR_NAMES[p]] = q.estimate(rates)
        s = _Linear()
        for p, coeff in zip(SETTING_PAIRS, (1.0, -1.0, 1.0, 1.0)):
            s.add_ratio(coeff, [("switched", p)], [("remove_both", p)], rates)
        s.add_ratio(-1.0, [("remove_2", k) for k in marg_1[1]], [("remove_both", k) for k in marg_1[1]], rates)
        s.add_ratio(-1.0, [("remove_1", k) for k in marg_2[0]], [("remove_both", k) for k in marg_2[0]], rates)
        est = s.estimate(rates)
        s_prime = s_prime_result(est.value, est.sigma)
    return TimingAnalysis(normalized, correlations, s_prime, dict(merged))


def normalized_pool(switched: MergeResult, removed: MergeResult, pairs: Sequence[tuple[int, int]]) -> Estimate:
    """Pooled rate of several channel pairs divided by their pooled all-removed rate."""
    rates = {}
    for kind, m in (("switched", switched), ("remove_both", removed)):
        for p in pairs:
            c = m.counts[p]
            rates[(kind, p)] = (c.true / m.duration, c.variance / m.duration**2)
    q = _Linear().add_ratio(1.0, [("switched", p) for p in pairs], [("remove_both", p) for p in pairs], rates)
    return q.estimate(rates)


def _merge_chunk(plan: TimingPlan, kind: str, run_index: int, duration: float) -> MergeResult:
    p = dataclasses.replace(plan, duration=duration, record_changes=False, log_blocked=False)
    r1, r2 = RUN_REMOVALS[kind]
    log_1, log_2 = run_timing_experiment(p, run_index, r1, r2)
    return merge_and_correlate(log_1, log_2, plan.window, plan.accidental_delay)


def campaign_durations(duration: float, removal_ratio: float = 2.0) -> dict[str, float]:
    """Switched runs get `duration`; the three removal runs share removal_ratio times that."""
    each = duration * removal_ratio / 3
    return {"switched": duration, "remove_2": each, "remove_1": each, "remove_both": each}


def timing_campaign(
    plan: TimingPlan,
    duration: float,
    chunk: float = 20.0,
    removal_ratio: float = 2.0,
    kinds: Sequence[str] = RUN_TYPES,
    workers: int = 1,
) -> TimingAnalysis:
    """Accumulate the run types in chunks of at most `chunk` seconds, cycling through the
    configurations the way the drift-compensated protocol alternated them.

    Each chunk is an independent run with its own seeds, so results do not depend on
    the number of workers.
    """
    durations = campaign_durations(duration, removal_ratio)
    jobs = []
    for t, kind in enumerate(RUN_TYPES):
        if kind not in kinds:
            continue
        total = durations[kind]
        n_chunks = max(1, math.ceil(total / chunk - 1e-9))
        for k in range(n_chunks):
            jobs.append((kind, 100_000 * (t + 1) + k, total / n_chunks))

    def job(spec):
        return _merge_chunk(plan, *spec)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    merged: dict[str, MergeResult] = {}
    for (kind, _, _), r in zip(jobs, results):
        merged[kind] = merged[kind] + r if kind in merged else MergeResult(dict(r.counts), r.duration)
    return analyze_timing(merged)


def timing_s_prime_qm(plan: TimingPlan) -> float:
    """QM prediction of the normalized S'. Routing cancels channel by channel, so this
    is the static one-channel value for the same polarizers."""
    from .qm import s_prime_qm

    return s_prime_qm(plan.orientations, plan.apparatus)


def normalized_rate_qm(theta, apparatus: ApparatusModel):
    """n(theta) = R(a, b) / R(inf, inf) for a relative angle theta."""
    full = joint_probabilities(0.0, 0.0, apparatus.removing(True, True)).p_pp
    return np.array([joint_probabilities(0.0, float(t), apparatus).p_pp / full for t in np.atleast_1d(theta)])


# ---------------------------------------------------------------------------
# light-cone audit


@dataclass(frozen=True)
class AuditReport:
    detections: int
    spacelike: int
    min_margin_ps: int | None  # L/c minus the delay since the most recent remote change
    max_margin_ps: int | None
    light_time_ps: int

    @property
    def fraction(self) -> float:
        return self.spacelike / self.detections if self.detections else 1.0


def lightcone_audit(log_1: SideLog, log_2: SideLog, geometry: Geometry | None = None) -> AuditReport:
    """For each detection, the most recent setting change on the other side at or before
    it; the pair is space-like separated iff the delay is below L/c. Needs complete
    change records on both sides."""
    _check_same_run(log_1.header, log_2.header)
    geometry = geometry or log_1.header.geometry
    delays = []
    for local, remote in ((log_1, log_2), (log_2, log_1)):
        if remote.header.changes != "complete":
            raise ValueError(f"side {remote.header.side} log lacks complete change records; rerun with record_changes")
        t, _, _ = local.detections()
        ct, _ = remote.changes()
        idx = np.searchsorted(ct, t, side="right") - 1
        if np.any(idx < 0):
            raise ValueError("detection precedes the remote side's first setting record")
        delays.append(t - ct[idx])
    dt = np.concatenate(delays)
    space = geometry.is_spacelike(dt)
    margins = geometry.spacelike_threshold_ps - 1 - dt
    has = dt.size > 0
    return AuditReport(
        int(dt.size),
        int(space.sum()),
        int(margins.min()) if has else None,
        int(margins.max()) if has else None,
        geometry.light_time_ps,
    )


# ---------------------------------------------------------------------------
# retardation check


@dataclass(frozen=True)
class RetardationReport:
    chi2: float
    dof: int
    p_value: float
    conditions: tuple[str, ...]
    threshold: float = 0.01

    @property
    def passed(self) -> bool:
        return self.p_value > self.threshold


def qm_no_retardation_check(analyses: Mapping[str, TimingAnalysis], threshold: float = 0.01) -> RetardationReport:
    """Chi-square test that the normalized rate of every setting pair is the same
    across conditions (separations, switching modes). The four n(x, y) of one
    condition come from disjoint channel pairs, so they are independent."""
    if len(analyses) < 2:
        raise ValueError("need at least two conditions")
    chi2, dof = 0.0, 0
    for name in PAIR_NAMES.values():
        vals = np.array([a.normalized[name].value for a in analyses.values()])
        sig = np.array([a.normalized[name].sigma for a in analyses.values()])
        w = 1.0 / sig**2
        mean = (w * vals).sum() / w.sum()
        chi2 += float((w * (vals - mean) ** 2).sum())
        dof += vals.size - 1
    return RetardationReport(chi2, dof, float(stats.chi2.sf(chi2, dof)), tuple(analyses), threshold)


def retardation_conditions(
    plan: TimingPlan,
    separations: Iterable[float] = (13.0, 26.0),
    modes: Iterable[str] = ("quasiperiodic", "random-telegraph"),
    duration: float = 20.0,
    chunk: float = 20.0,
    workers: int = 1,
) -> dict[str, TimingAnalysis]:
    """Switched and all-removed campaigns for every (separation, mode) combination."""
    out = {}
    for L in separations:
        for mode in modes:
            p = dataclasses.replace(
                plan,
                geometry=dataclasses.replace(plan.geometry, separation=L),
                switch_1=dataclasses.replace(plan.switch_1, mode=mode),
                switch_2=dataclasses.replace(plan.switch_2, mode=mode),
            )
            out[f"L={L:g}m/{mode}"] = timing_campaign(p, duration, chunk, kinds=("switched", "remove_both"), workers=workers)
    return out
