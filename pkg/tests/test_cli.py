import csv
import json

import pytest

from conftest import SMALL_CONFIG
from cotdr import cli, measurement
from cotdr.peak_fit import PeakFitError


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_missing_config_exits_2(tmp_path, capsys):
    assert _run("skew", "--config", tmp_path / "nope.yaml", "--out", tmp_path / "o") == 2
    assert "not found" in capsys.readouterr().err


def test_schema_error_exits_2_with_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL_CONFIG.replace("n_traces: 200", "n_traces: lots"))
    assert _run("skew", "--config", bad, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "bad.yaml:13:" in err and "acquisition.n_traces" in err


def test_bad_trace_count_exits_2(small_config, tmp_path):
    assert _run("skew", "--config", small_config, "--out", tmp_path / "o", "--traces", 0) == 2


def test_selftest(capsys):
    assert _run("selftest") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "10/10 checks passed" in out


def test_skew_outputs(small_config, tmp_path):
    out = tmp_path / "skew"
    assert _run("skew", "--config", small_config, "--out", out, "--seed", 4) == 0
    rows = {r["core_id"]: r for r in _rows(out / "skew_table.csv")}
    assert float(rows["c"]["skew_ps"]) == 0.0
    assert float(rows["a"]["skew_ps"]) == pytest.approx(1500.0, abs=3.0)
    assert all(abs(float(r["skew_error_ps"])) < 3.0 for r in rows.values())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0
    assert set(manifest["outputs"]) == {"skew_report.json", "skew_table.csv"}
    assert manifest["options"]["seed"] == 4


def test_skew_consecutive_and_frontend_override(small_config, tmp_path):
    out = tmp_path / "cons"
    assert _run("skew", "--config", small_config, "--out", out, "--mode", "consecutive", "--frontend", "slicer1") == 0
    rows = _rows(out / "skew_table.csv")
    assert all(abs(float(r["skew_error_ps"])) < 3.0 for r in rows)
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["acquisition"]["frontend"] == "slicer1"


def test_outputs_are_byte_identical_and_rerun_matches(small_config, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("skew", "--config", small_config, "--out", out, "--seed", 9) == 0
    for name in ("skew_table.csv", "skew_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert _run("rerun", a / "manifest.json", "--out", tmp_path / "r") == 0
    assert "byte for byte" in capsys.readouterr().out


def test_rerun_detects_tampering(small_config, tmp_path):
    a = tmp_path / "a"
    assert _run("skew", "--config", small_config, "--out", a) == 0
    m = json.loads((a / "manifest.json").read_text())
    m["outputs"]["skew_table.csv"] = "0" * 64
    (a / "manifest.json").write_text(json.dumps(m))
    assert _run("rerun", a / "manifest.json", "--out", tmp_path / "r") == 1


def test_temp_sweep(small_config, tmp_path):
    out = tmp_path / "sweep"
    assert _run("temp-sweep", "--config", small_config, "--out", out, "--traces", 100) == 0
    tdc = {r["core_id"]: r for r in _rows(out / "tdc.csv")}
    assert float(tdc["a"]["tdc_ppm_per_k"]) == pytest.approx(7.1, abs=0.1)
    skews = _rows(out / "skew_vs_temperature.csv")
    assert [r["temperature_c"] for r in skews] == ["10", "30", "50"]
    assert (out / "group_delay.csv").exists()


def test_pmd(small_config, tmp_path):
    out = tmp_path / "pmd"
    assert _run("pmd", "--config", small_config, "--out", out) == 0
    rows = {r["core_id"]: r for r in _rows(out / "pmd_summary.csv")}
    assert set(rows) == {"c", "a"}
    for r in rows.values():
        assert float(r["pmd_mps_ps"]) <= float(r["pmd_jme_ps"]) + 1e-3
    assert len(_rows(out / "dgd_core_a.csv")) == 16


def test_trace(small_config, tmp_path):
    out = tmp_path / "trace"
    assert _run("trace", "--config", small_config, "--out", out, "--dump-raw") == 0
    peaks = {r["echo"]: r for r in _rows(out / "peaks.csv")}
    assert set(peaks) == {"reference", "c", "a", "b", "d"}
    assert all(float(p["peak_snr_db"]) > 20 for p in peaks.values())
    assert {r["echo"] for r in _rows(out / "correlation.csv")} == set(peaks)
    assert (out / "received.npy").exists()  # adc7 keeps the averaged samples
    out1 = tmp_path / "trace1"
    assert _run("trace", "--config", small_config, "--out", out1, "--frontend", "slicer1", "--dump-raw") == 0
    assert (out1 / "accumulated.bin").exists()


def test_simulation_error_exits_3(tmp_path):
    cfg = tmp_path / "close.yaml"
    cfg.write_text(SMALL_CONFIG.replace("skew_offset: -0.8e-9", "skew_offset: 0.05e-9"))
    out = tmp_path / "o"
    assert _run("skew", "--config", cfg, "--out", out) == 3
    m = json.loads((out / "manifest.json").read_text())
    assert m["exit_status"] == 3 and m["message"]


def test_fit_failure_exits_4_with_partial_outputs(tmp_path, monkeypatch):
    cfg = tmp_path / "two_groups.yaml"
    cores = "\n".join(
        f"    - {{core_id: '{i}', position: [{(i - 4) * 40}, 0], length: 300.0, skew_offset: {(i - 4) * 0.6}e-9}}"
        for i in range(1, 8)
    )
    cfg.write_text(
        "fiber:\n  center_core_id: '4'\n  cores:\n" + cores + "\nacquisition: {prbs_order: 9, n_traces: 100}\n"
    )
    calls = {"n": 0}
    real = measurement.fit_gaussian

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 5:
            raise PeakFitError("forced", estimate=0.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(measurement, "fit_gaussian", flaky)
    out = tmp_path / "o"
    assert _run("skew", "--config", cfg, "--out", out) == 4
    rows = _rows(out / "skew_table.csv")
    assert len(rows) == 4
    assert json.loads((out / "manifest.json").read_text())["exit_status"] == 4


def test_bundled_config_by_name(tmp_path):
    out = tmp_path / "b"
    assert _run("skew", "--config", "mcf4_5km", "--out", out, "--traces", 50) == 0
    assert len(_rows(out / "skew_table.csv")) == 4
