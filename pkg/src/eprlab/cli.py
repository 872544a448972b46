"""Command-line front end: predict | run | figure | audit | spectrum.

Angles are degrees at this interface. Every command prints a JSON report (sorted
keys, one key per line, so the timestamp sits alone on its own line) and, with
--out, writes it together with the raw outputs.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import presets
from .core import Estimate, OrientationSet, bootstrap_chsh_sigma
from .figures import FIGURES, make_figure
from .lhv import MODEL_REGISTRY, Quadrature, get_model, lhv_chsh, lhv_correlation
from .montecarlo import PS, run_one_channel, run_two_channel, simulate_streams, spectrum_from_streams, windowed_from_streams
from .qm import ApparatusModel, chsh_qm, correlation_qm, find_extrema, s_prime_qm, s_theta_curve
from .timing import SideLog, lightcone_audit, merge_and_correlate, run_timing_experiment, timing_campaign, timing_s_prime_qm

SCHEMES = ("two-channel", "one-channel", "timing")
CURVES = ("s-theta", "e-theta")


class ConfigError(ValueError):
    """Inconsistent or invalid run configuration."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    preset: str | None = None
    scheme: str | None = None
    model: str | None = None
    apparatus: str | None = None
    angles: tuple[float, float, float, float] | None = None  # a, a', b, b' in degrees
    duration: float | None = None
    seed: int = 0
    window_ns: float | None = None
    out: str | None = None
    curve: str | None = None
    extrema: bool = False
    s_prime: bool = False
    points: int = 91
    figure: str | None = None
    bin_ns: float = 1.0
    range_ns: tuple[float, float] = (-50.0, 150.0)
    logs: tuple[str, str] | None = None
    audit_duration: float | None = None
    workers: int = 1  # execution detail; results do not depend on it

    ECHO_EXCLUDE = ("workers",)

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in dataclasses.fields(self):
            if f.name in self.ECHO_EXCLUDE:
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        kw = dict(d)
        for name in ("angles", "range_ns", "logs"):
            if kw.get(name) is not None:
                kw[name] = tuple(kw[name])
        unknown = set(kw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**kw)


# ---------------------------------------------------------------------------
# config files: `key = value` lines, '#' comments


_FIELD_TYPES = {
    "seed": int, "points": int, "workers": int,
    "duration": float, "window_ns": float, "bin_ns": float, "audit_duration": float,
    "extrema": bool, "s_prime": bool,
    "angles": (float, 4), "range_ns": (float, 2), "logs": (str, 2),
}


def _convert(key: str, text: str):
    kind = _FIELD_TYPES.get(key, str)
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ConfigError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "yes", "1")
    if isinstance(kind, tuple):
        typ, n = kind
        parts = text.replace(",", " ").split()
        if len(parts) != n:
            raise ConfigError(f"{key}: expected {n} values, got {len(parts)}")
        return tuple(typ(p) for p in parts)
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    out = {}
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in valid or key == "command":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value.strip())
    return out


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eprlab", description="EPRB polarization-correlation simulation laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value configuration file (flags override it)")
        sp.add_argument("--preset")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--duration", type=float, help="seconds per run configuration")

    def physics(sp):
        sp.add_argument("--scheme", choices=SCHEMES)
        sp.add_argument("--model", help="qm, qm-ideal, or a registered hidden-variable model")
        sp.add_argument("--apparatus")
        sp.add_argument("--angles", type=float, nargs=4, metavar=("A", "A_PRIME", "B", "B_PRIME"), help="degrees")
        sp.add_argument("--window-ns", type=float)

    sp = sub.add_parser("predict", help="analytic tables")
    common(sp)
    physics(sp)
    sp.add_argument("--curve", choices=CURVES)
    sp.add_argument("--extrema", action="store_true", default=None)
    sp.add_argument("--s-prime", action="store_true", default=None)
    sp.add_argument("--points", type=int)

    sp = sub.add_parser("run", help="simulate an experiment")
    common(sp)
    physics(sp)
    sp.add_argument("--audit-duration", type=float, help="seconds of fully logged timing run")

    sp = sub.add_parser("figure", help="write figure data")
    common(sp)
    sp.add_argument("figure", help=f"one of {', '.join(FIGURES)}")

    sp = sub.add_parser("audit", help="light-cone audit and merge of two side logs")
    common(sp)
    sp.add_argument("logs", nargs=2, metavar="LOG", help="side I log, then side II log")
    sp.add_argument("--window-ns", type=float)

    sp = sub.add_parser("spectrum", help="simulated time-delay spectrum")
    common(sp)
    sp.add_argument("--bin-ns", type=float)
    sp.add_argument("--range-ns", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--window-ns", type=float)
    return p


def config_from_args(argv: Sequence[str] | None = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values: dict[str, Any] = {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    for key, v in vars(args).items():
        if key in ("config", "command") or v is None:
            continue
        values[key] = tuple(v) if isinstance(v, list) else v
    return RunConfig(command=args.command, **values)


# ---------------------------------------------------------------------------
# report helpers


def est(e: Estimate | tuple[float, float]) -> dict[str, float]:
    value, sigma = e
    return {"value": float(value), "sigma": float(sigma)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def render_report(config: RunConfig, body: dict[str, Any], timestamp: str | None = None) -> str:
    doc = dict(body)
    doc["config"] = config.to_dict()
    doc["timestamp"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def strip_timestamp(report: str) -> str:
    return "\n".join(ln for ln in report.splitlines() if not ln.lstrip().startswith('"timestamp"'))


PRESET_NOTES = {
    "cascade_rate": "4e7 pairs/s (reported source rate)",
    "tau_r": "5 ns intermediate-level lifetime",
    "window": "19 ns coincidence window",
    "f_contrast": "0.984 for a 32 degree collection half-angle",
    "one_channel_polarizers": "pile-of-plates, max/min transmission 0.975 / 0.030",
    "two_channel_polarimeters": "efficiency 0.985 per channel pair, t_par = 0.95 (reproduces S_QM = 2.70)",
    "detection_efficiency": "tuned to 1e2 /s parallel coincidences (not given)",
    "timing": "switches 13 m apart, 23.1 / 24.2 MHz drives, 20% channel floor, rates down 10x",
}


# ---------------------------------------------------------------------------
# predict


def _apparatus_for(config: RunConfig, default: str = "ideal") -> tuple[str, ApparatusModel]:
    if config.model == "qm-ideal":
        return "ideal", ApparatusModel.ideal()
    name = config.apparatus or default
    try:
        return name, presets.apparatus(name)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None


def _orientations(config: RunConfig, default: OrientationSet) -> OrientationSet:
    return OrientationSet.from_degrees(*config.angles) if config.angles else default


def _resolve_model(name: str | None):
    """None for quantum predictions, else the hidden-variable model."""
    if name in (None, "qm", "qm-ideal"):
        return None
    try:
        return get_model(name)
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: qm, qm-ideal, {', '.join(sorted(MODEL_REGISTRY))}") from None


def cmd_predict(config: RunConfig) -> dict[str, Any]:
    model = _resolve_model(config.model)
    app_name, app = _apparatus_for(config)
    thetas = np.linspace(0.0, 90.0, config.points)
    label = config.model or "qm"
    body: dict[str, Any] = {"model": label, "apparatus": app_name}
    want_all = not (config.curve or config.extrema or config.s_prime)
    quad = Quadrature()

    def e_of(t):
        if model is None:
            return (correlation_qm(0.0, math.radians(t), app), 0.0)
        e = lhv_correlation(model, 0.0, math.radians(t), quad)
        return (e.value, e.sigma)

    if config.curve == "e-theta" or want_all:
        body["e_theta"] = {"columns": ["theta_deg", "e", "sigma"], "rows": [[t, *e_of(t)] for t in thetas]}
    if config.curve == "s-theta" or want_all:
        rows = []
        for t in thetas:
            if model is None:
                rows.append([t, float(s_theta_curve(math.radians(t), app)), 0.0])
            else:
                r = lhv_chsh(model, OrientationSet.from_theta(math.radians(t)), quad)
                rows.append([t, r.s_value, r.sigma])
        body["s_theta"] = {"columns": ["theta_deg", "s", "sigma"], "rows": rows}
    if config.extrema or want_all:
        if model is not None:
            raise ConfigError("--extrema applies to quantum predictions only")
        body["extrema"] = [{"theta_deg": math.degrees(t), "s": est((s, 0.0))} for t, s in find_extrema(app)]
    if config.s_prime or want_all:
        o = _orientations(config, presets.FIG_4A)
        if model is None:
            body["s_prime"] = est((s_prime_qm(o, app), 0.0))
        body["chsh"] = est(tuple(lhv_chsh(model, o, quad))[0:2] if model else (chsh_qm(o, app).s_value, 0.0))
        body["orientations_deg"] = list(o.degrees())
    return body


# ---------------------------------------------------------------------------
# run


def _scheme_of_preset(name: str) -> str:
    if name in presets.TIMING_PLANS:
        return "timing"
    static = presets.resolve_static_preset(name)
    return presets.STATIC_PLANS[static]["scheme"]


def resolve_run(config: RunConfig):
    """Validate a run configuration and build its plan, before any simulation."""
    preset = config.preset
    if preset is not None:
        try:
            scheme = _scheme_of_preset(preset)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        if config.scheme is not None and config.scheme != scheme:
            raise ConfigError(f"preset {preset!r} is a {scheme} experiment, not {config.scheme}")
    else:
        scheme = config.scheme
        if scheme is None:
            raise ConfigError("run needs --preset or --scheme")
    model = _resolve_model(config.model)
    overrides: dict[str, Any] = {"seed": config.seed}
    if model is not None:
        overrides["outcome_model"] = config.model
    if config.apparatus or config.model == "qm-ideal":
        overrides["apparatus"] = _apparatus_for(config)[1]
    if config.angles:
        overrides["orientations"] = OrientationSet.from_degrees(*config.angles)
    if config.window_ns is not None:
        overrides["window"] = config.window_ns * 1e-9
    if scheme == "timing":
        if config.duration is not None and config.duration <= 0:
            raise ConfigError("duration must be positive")
        return scheme, presets.timing_plan(preset or "orsay-timing", **overrides)
    if config.duration is not None:
        overrides["duration"] = config.duration
    base = presets.resolve_static_preset(preset) if preset else "ideal"
    overrides["scheme"] = scheme
    try:
        return scheme, presets.static_plan(base, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _two_channel_body(plan, workers):
    res = run_two_channel(plan, workers)
    runs = []
    for (x, y), r in zip(plan.orientations.pairs(), res.runs):
        runs.append({
            "a_deg": math.degrees(x), "b_deg": math.degrees(y),
            "raw": [r.raw.n_pp, r.raw.n_pm, r.raw.n_mp, r.raw.n_mm],
            "accidental": list(r.accidental),
            "true": list(r.true),
            "correlation": est(r.correlation),
            "true_sum": est(r.true_sum),
        })
    body = {
        "scheme": "two-channel",
        "runs": runs,
        "chsh": {**est((res.chsh.s_value, res.chsh.sigma)), "bound": [-2.0, 2.0], "violates": res.chsh.violates, "significance": res.chsh.significance},
        "bootstrap_sigma": bootstrap_chsh_sigma([r.raw for r in res.runs], seed=plan.seed, accidentals=[r.accidental for r in res.runs]),
    }
    if plan.model is None:
        body["prediction"] = est((chsh_qm(plan.orientations, plan.apparatus).s_value, 0.0))
    table = ["a_deg\tb_deg\tn_pp\tn_pm\tn_mp\tn_mm\tacc_pp\tacc_pm\tacc_mp\tacc_mm"]
    for r in runs:
        table.append("\t".join(repr(float(v)) for v in [r["a_deg"], r["b_deg"], *r["raw"], *r["accidental"]]))
    return body, {"counts.tsv": "\n".join(table) + "\n"}


def _one_channel_body(plan, workers):
    res = run_one_channel(plan, workers)
    rates = {k: est((getattr(res.rates, k), math.sqrt(res.rates.variance(k)))) for k in res.rates.FIELDS}
    sp = res.s_prime
    body = {
        "scheme": "one-channel",
        "counts": rates,
        "raw": res.raw,
        "s_prime": {**est((sp.s_prime, sp.sigma)), "bound": [-1.0, 0.0], "violates": sp.violates, "significance": sp.significance},
    }
    if plan.model is None:
        body["prediction"] = est((s_prime_qm(plan.orientations, plan.apparatus), 0.0))
    table = ["run\traw\ttrue\tvariance"] + [
        f"{k}\t{res.raw[k]}\t{getattr(res.rates, k)!r}\t{res.rates.variance(k)!r}" for k in res.rates.FIELDS
    ]
    return body, {"counts.tsv": "\n".join(table) + "\n"}


def _timing_body(plan, config: RunConfig, workers):
    duration = config.duration if config.duration is not None else presets.TIMING_MATCHED_DURATION
    audit_plan = dataclasses.replace(plan, duration=config.audit_duration or plan.duration, record_changes=True)
    log_1, log_2 = run_timing_experiment(audit_plan, run_index=0)
    audit = lightcone_audit(log_1, log_2)
    analysis = timing_campaign(plan, duration, workers=workers)
    sp = analysis.s_prime
    body = {
        "scheme": "timing",
        "audit": {
            "detections": audit.detections, "spacelike": audit.spacelike, "fraction": audit.fraction,
            "min_margin_ps": audit.min_margin_ps, "max_margin_ps": audit.max_margin_ps,
            "light_time_ps": audit.light_time_ps, "duration_s": audit_plan.duration,
        },
        "normalized_rates": {k: est(v) for k, v in analysis.normalized.items()},
        "correlations": {k: est(v) for k, v in analysis.correlations.items()},
        "s_prime": {**est((sp.s_prime, sp.sigma)), "bound": [-1.0, 0.0], "violates": sp.violates, "significance": sp.significance},
        "switched_duration_s": duration,
        "run_durations_s": {k: m.duration for k, m in analysis.merged.items()},
    }
    if plan.model is None:
        body["prediction"] = est((timing_s_prime_qm(plan), 0.0))
    return body, {"side_I.log": log_1.to_text(), "side_II.log": log_2.to_text()}


def cmd_run(config: RunConfig) -> tuple[dict[str, Any], dict[str, str]]:
    scheme, plan = resolve_run(config)
    if scheme == "two-channel":
        body, files = _two_channel_body(plan, config.workers)
    elif scheme == "one-channel":
        body, files = _one_channel_body(plan, config.workers)
    else:
        body, files = _timing_body(plan, config, config.workers)
    if config.preset:
        body["preset_notes"] = PRESET_NOTES
    return body, files


# ---------------------------------------------------------------------------
# figure, audit, spectrum


def cmd_figure(config: RunConfig) -> tuple[dict[str, Any], dict[str, str]]:
    if config.figure not in FIGURES:
        raise ConfigError(f"unknown figure {config.figure!r}; known: {', '.join(FIGURES)}")
    try:
        fig = make_figure(config.figure, config.preset, config.duration, config.seed, config.workers)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    body = {"figure": fig.name, "columns": list(fig.columns), "rows": len(fig.rows), "notes": fig.notes}
    return body, {f"{fig.name}.tsv": fig.to_text()}


def cmd_audit(config: RunConfig) -> dict[str, Any]:
    if not config.logs:
        raise ConfigError("audit needs two side logs")
    log_1, log_2 = (SideLog.read(p) for p in config.logs)
    window = (config.window_ns or 19.0) * 1e-9
    audit = lightcone_audit(log_1, log_2)
    merged = merge_and_correlate(log_1, log_2, window)
    labels_1, labels_2 = log_1.header.labels, log_2.header.labels
    counts = {
        f"{labels_1[x]}{labels_2[y]}": {"raw": c.raw, "accidental": est((c.accidental, math.sqrt(c.accidental_variance))), "true": est((c.true, math.sqrt(c.variance)))}
        for (x, y), c in merged.counts.items()
    }
    return {
        "audit": {
            "detections": audit.detections, "spacelike": audit.spacelike, "fraction": audit.fraction,
            "min_margin_ps": audit.min_margin_ps, "max_margin_ps": audit.max_margin_ps, "light_time_ps": audit.light_time_ps,
        },
        "coincidences": counts,
        "run_id": log_1.header.run_id,
    }


def cmd_spectrum(config: RunConfig) -> tuple[dict[str, Any], dict[str, str]]:
    try:
        name = presets.resolve_static_preset(config.preset or "orsay-static-one-channel")
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    overrides: dict[str, Any] = {"seed": config.seed}
    if config.duration is not None:
        overrides["duration"] = config.duration
    if config.window_ns is not None:
        overrides["window"] = config.window_ns * 1e-9
    plan = presets.static_plan(name, **overrides)
    if config.bin_ns <= 0:
        raise ConfigError("bin width must be positive")
    streams = simulate_streams(plan, 0.0, 0.0, config_index=200, workers=config.workers)
    rng_s = tuple(x * 1e-9 for x in config.range_ns)
    sp = spectrum_from_streams(streams, config.bin_ns * 1e-9, rng_s, plan.source.tau_r)
    win = windowed_from_streams(streams, plan.window, plan.accidental_delay)
    body = {
        "background_per_bin": est(sp.background),
        "peak_area": est(sp.peak_area),
        "tau_ns": est((sp.tau.value * 1e9, sp.tau.sigma * 1e9)),
        "peak_in_window": est(sp.peak_in_window(plan.window)),
        "windowed": {
            "raw_rate": est(win.raw), "accidental_rate": est(win.accidental), "subtracted_rate": est(win.subtracted),
            "subtracted_counts": est((win.counts.true, math.sqrt(win.counts.variance))),
        },
        "duration_s": plan.duration,
    }
    edges_ps = np.rint(sp.bin_edges * PS).astype(np.int64)
    lines = ["# time-delay histogram, delays t2 - t1 in ns", "bin_lo_ns\tbin_hi_ns\tcounts"]
    lines += [f"{lo / 1000!r}\t{hi / 1000!r}\t{c}" for lo, hi, c in zip(edges_ps[:-1].tolist(), edges_ps[1:].tolist(), sp.counts.tolist())]
    return body, {"spectrum.tsv": "\n".join(lines) + "\n"}


COMMANDS = {"predict": cmd_predict, "run": cmd_run, "figure": cmd_figure, "audit": cmd_audit, "spectrum": cmd_spectrum}


def execute(config: RunConfig, timestamp: str | None = None) -> tuple[str, dict[str, str]]:
    """Run a command; returns the report text and the extra output files."""
    result = COMMANDS[config.command](config)
    body, files = result if isinstance(result, tuple) else (result, {})
    return render_report(config, body, timestamp), files


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = config_from_args(argv)
        report, files = execute(config)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"eprlab: error: {msg}", file=sys.stderr)
        return 2
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report)
        for name, text in files.items():
            (out / name).write_text(text)
    sys.stdout.write(report)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
