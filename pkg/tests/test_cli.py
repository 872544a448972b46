import json
import math

import pytest

from eprlab.cli import (
    ConfigError,
    RunConfig,
    config_from_args,
    execute,
    main,
    parse_config_text,
    resolve_run,
    strip_timestamp,
)


def run_json(argv, capsys):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_predict_ideal_curve(capsys):
    d = run_json(["predict", "--curve", "s-theta", "--model", "qm-ideal", "--points", "5"], capsys)
    rows = d["s_theta"]["rows"]
    assert [r[0] for r in rows] == [0.0, 22.5, 45.0, 67.5, 90.0]
    assert rows[1][1] == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_predict_extrema_and_s_prime(capsys):
    d = run_json(["predict", "--extrema", "--s-prime", "--apparatus", "orsay-one-channel"], capsys)
    peaks = {round(e["theta_deg"], 6): e["s"]["value"] for e in d["extrema"]}
    assert set(peaks) == {0.0, 22.5, 67.5, 90.0}
    assert d["s_prime"]["value"] == pytest.approx(0.118, abs=0.005)
    assert d["s_prime"]["sigma"] == 0.0


def test_predict_lhv_curve(capsys):
    d = run_json(["predict", "--curve", "e-theta", "--model", "naive", "--points", "3"], capsys)
    assert [r[1] for r in d["e_theta"]["rows"]] == pytest.approx([1.0, 0.0, -1.0], abs=1e-7)
    with pytest.raises(ConfigError):
        execute(RunConfig("predict", model="naive", extrema=True))


def test_unknown_model_is_an_error(capsys):
    assert main(["predict", "--model", "bogus"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\npreset = orsay-two-channel\nduration = 3.5  # seconds\nangles = 0 45 22.5 67.5\nseed = 4\n")
    c = config_from_args(["run", "--config", str(cfg), "--seed", "9"])
    assert c.preset == "orsay-two-channel" and c.duration == 3.5 and c.seed == 9
    assert c.angles == (0.0, 45.0, 22.5, 67.5)


def test_config_parse_errors():
    with pytest.raises(ConfigError):
        parse_config_text("nonsense line\n")
    with pytest.raises(ConfigError):
        parse_config_text("colour = blue\n")
    with pytest.raises(ConfigError):
        parse_config_text("angles = 1 2 3\n")
    with pytest.raises(ConfigError):
        parse_config_text("extrema = maybe\n")


def test_runconfig_roundtrip():
    c = RunConfig("run", preset="orsay-static", angles=(0, 45, 22.5, 67.5), duration=2.0, workers=4)
    d = c.to_dict()
    assert "workers" not in d
    assert RunConfig.from_dict(d) == RunConfig("run", preset="orsay-static", angles=(0, 45, 22.5, 67.5), duration=2.0)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"command": "run", "flux": 1})


@pytest.mark.parametrize(
    "config",
    [
        RunConfig("run", preset="orsay-timing", scheme="two-channel"),
        RunConfig("run", preset="orsay-static", scheme="two-channel"),
        RunConfig("run", preset="no-such-preset"),
        RunConfig("run"),
        RunConfig("run", scheme="two-channel", model="unknown"),
        RunConfig("run", scheme="two-channel", apparatus="unknown"),
        RunConfig("run", preset="orsay-timing", duration=-1.0),
    ],
)
def test_inconsistent_configs_fail_before_simulating(config):
    with pytest.raises(ConfigError):
        resolve_run(config)


def test_run_two_channel_writes_outputs(tmp_path, capsys):
    d = run_json(["run", "--preset", "orsay-two-channel", "--duration", "2", "--out", str(tmp_path)], capsys)
    assert d["chsh"]["bound"] == [-2.0, 2.0]
    assert len(d["runs"]) == 4
    assert d["prediction"]["value"] == pytest.approx(2.70, abs=0.005)
    assert (tmp_path / "report.json").exists() and (tmp_path / "counts.tsv").exists()
    assert "preset_notes" in d


def test_run_one_channel_custom_angles(capsys):
    d = run_json(["run", "--scheme", "one-channel", "--model", "qm-ideal", "--angles", "0", "45", "22.5", "67.5", "--duration", "1"], capsys)
    assert d["prediction"]["value"] == pytest.approx((math.sqrt(2) - 1) / 2)
    assert set(d["counts"]) == {"n_ab", "n_ab_prime", "n_aprime_b", "n_aprime_bprime", "n_aprime_inf", "n_inf_b", "n_inf_inf"}


def test_run_timing_and_audit(tmp_path, capsys):
    d = run_json(["run", "--preset", "orsay-timing", "--duration", "2", "--audit-duration", "0.001", "--out", str(tmp_path)], capsys)
    assert d["audit"]["fraction"] == 1.0
    assert set(d["run_durations_s"]) == {"switched", "remove_2", "remove_1", "remove_both"}
    a = run_json(["audit", str(tmp_path / "side_I.log"), str(tmp_path / "side_II.log")], capsys)
    assert a["audit"] == {k: v for k, v in d["audit"].items() if k != "duration_s"}


def test_audit_missing_file(capsys):
    assert main(["audit", "nope_I.log", "nope_II.log"]) == 2


def test_spectrum_command(tmp_path, capsys):
    d = run_json(["spectrum", "--duration", "2", "--out", str(tmp_path)], capsys)
    assert d["tau_ns"]["value"] == pytest.approx(5.0, rel=0.3)
    lines = (tmp_path / "spectrum.tsv").read_text().splitlines()
    assert lines[1] == "bin_lo_ns\tbin_hi_ns\tcounts"
    assert len(lines) == 2 + 200


def test_figure_command(tmp_path, capsys):
    d = run_json(["figure", "fig3", "--out", str(tmp_path)], capsys)
    assert d["rows"] == 181
    assert (tmp_path / "fig3.tsv").read_text().startswith("# figure: fig3")
    assert main(["figure", "fig99"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--preset", "orsay-two-channel", "--duration", "1.5"],
        ["run", "--preset", "orsay-static", "--duration", "0.5"],
        ["run", "--preset", "orsay-timing", "--duration", "0.5", "--audit-duration", "0.0005"],
    ],
)
def test_run_byte_identical_across_workers(argv):
    one = execute(config_from_args(argv + ["--workers", "1"]))
    many = execute(config_from_args(argv + ["--workers", "3"]))
    assert strip_timestamp(one[0]) == strip_timestamp(many[0])
    assert one[1] == many[1]


def test_timestamp_alone_on_its_line():
    report, _ = execute(RunConfig("predict", curve="s-theta", points=3), timestamp="T")
    stamped = [ln for ln in report.splitlines() if "timestamp" in ln]
    assert stamped == ['  "timestamp": "T"']


@pytest.mark.parametrize("command", ["predict", "run", "figure", "audit", "spectrum"])
def test_help_renders(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    assert "usage: eprlab" in capsys.readouterr().out
