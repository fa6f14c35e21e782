import csv
import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from gridwatch.cli import main
from gridwatch.ingest import parse_csv

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def _write_yaml(path: Path, doc: dict) -> Path:
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return path


def _events(out: Path) -> list[dict]:
    with (out / "events.csv").open() as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def single_step_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("analyze") / "run"
    cfg = _write_yaml(out.parent / "run.yaml", {
        "scenario": str(SCENARIOS / "single_step_118.yaml"), "seed": 0, "noise": {"tau_snr": 500},
    })
    assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_analyze_reports_the_step(single_step_run):
    events = _events(single_step_run)
    assert len(events) == 1
    assert 501 <= int(events[0]["onset_tick"]) <= 700
    assert list(events[0]) == ["detection_tick", "onset_tick", "les_drop", "flagged_rows",
                               "flagged_devices", "mapping_rule"]
    manifest = json.loads((single_step_run / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 0
    assert "ticks.csv" in manifest["outputs"]
    assert (single_step_run / "spectra" / "tick_200" / "esd.csv").exists()


def test_eta_surface_and_les_files(single_step_run):
    with (single_step_run / "eta_surface.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tick", "row", "eta"]
    assert len(rows) == 1 + 801 * 118
    with (single_step_run / "les.csv").open() as fh:
        les_rows = list(csv.DictReader(fh))
    norm = [float(r["les_normalized"]) for r in les_rows]
    assert min(norm) == 0.0 and max(norm) == 1.0


def test_check_accepts_and_rejects(single_step_run, tmp_path, capsys):
    assert main(["check", str(single_step_run)]) == 0
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(single_step_run, broken)
    with (broken / "events.csv").open("a") as fh:
        fh.write("1,2\n")
    assert main(["check", str(broken)]) == 2
    err = capsys.readouterr().err
    assert "hash differs" in err and "fields" in err


def test_no_signal_gives_empty_events(tmp_path):
    out = tmp_path / "quiet"
    rc = main(["analyze", "--scenario", str(SCENARIOS / "no_signal_118.yaml"), "--seed", "0", "--out", str(out)])
    assert rc == 0
    assert _events(out) == []


def test_missing_input_exit_code(tmp_path, capsys):
    rc = main(["analyze", "--input", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "absent.csv" in err[0]


def test_config_errors_exit_3(tmp_path):
    bad = _write_yaml(tmp_path / "bad.yaml", {"scenario": "x.yaml", "detector": {"window": 1}})
    assert main(["analyze", "--config", str(bad), "--out", str(tmp_path / "o")]) == 3
    unknown = _write_yaml(tmp_path / "u.yaml", {"scenario": "x.yaml", "colour": "red"})
    assert main(["analyze", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 3
    assert main(["analyze", "--out", str(tmp_path / "o")]) == 3  # no source


def test_synth_table_two_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--spec", str(SCENARIOS / "single_step_30.yaml"), "--seed", "42", "--out", str(a)]) == 0
    assert main(["synth", "--spec", str(SCENARIOS / "single_step_30.yaml"), "--seed", "42", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    d = parse_csv(a)
    assert d.shape == (35, 1000)  # padded to whole devices
    row = d.values[19]
    assert abs(row[:500].mean() - 20) < 0.1 and abs(row[500:].mean() - 30) < 0.1
    assert row[499] < 25 < row[500]


def test_synth_rejects_zero_ticks(tmp_path):
    spec = _write_yaml(tmp_path / "s.yaml", {"rows": 7, "ticks": 0})
    assert main(["synth", "--spec", str(spec), "--seed", "1", "--out", str(tmp_path / "x.csv")]) == 3


@pytest.fixture(scope="module")
def case1_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("synth") / "case1.csv"
    assert main(["synth", "--spec", str(SCENARIOS / "single_step_118.yaml"), "--seed", "0", "--out", str(p)]) == 0
    return p


def _spectra_summary(capsys) -> dict:
    line = capsys.readouterr().out.strip().splitlines()[-1]
    return dict(kv.split("=") for kv in line.split(", "))


def test_spectra_before_step_is_quiet(case1_csv, tmp_path, capsys):
    assert main(["spectra", "--input", str(case1_csv), "--tick", "500", "--seed", "0", "--out", str(tmp_path / "s")]) == 0
    assert int(_spectra_summary(capsys)["outlier_count"]) == 0
    assert (tmp_path / "s" / "ring_reference.json").exists()


def test_spectra_inside_step_has_outlier(case1_csv, tmp_path, capsys):
    assert main(["spectra", "--input", str(case1_csv), "--tick", "600", "--seed", "0", "--out", str(tmp_path / "s")]) == 0
    assert int(_spectra_summary(capsys)["outlier_count"]) >= 1
    with (tmp_path / "s" / "esd.csv").open() as fh:
        assert sum(int(r["count"]) for r in csv.DictReader(fh)) == 119


def test_spectra_insufficient_history(case1_csv, tmp_path):
    assert main(["spectra", "--input", str(case1_csv), "--tick", "150", "--out", str(tmp_path / "s")]) == 2


def test_stream_follows_a_growing_file(tmp_path):
    src = tmp_path / "src.csv"
    assert main(["synth", "--spec", str(SCENARIOS / "single_step_30.yaml"), "--seed", "3", "--out", str(src)]) == 0
    lines = src.read_text().splitlines(keepends=True)
    live = tmp_path / "live.csv"
    live.write_text("".join(lines[: 1 + 5 * 600]))

    def writer():
        with live.open("a") as fh:
            for k in range(1 + 5 * 600, len(lines), 500):
                time.sleep(0.05)
                fh.write("".join(lines[k:k + 500]))
                fh.flush()

    th = threading.Thread(target=writer)
    th.start()
    cfg = _write_yaml(tmp_path / "stream.yaml", {"seed": 3, "noise": {"tau_snr": 500},
                                                 "calibration_ticks": 200, "detector": {"window": 200}})
    out = tmp_path / "stream_out"
    printed = []
    from gridwatch import cli, config

    rc = cli.cmd_stream(live, config.load(cfg), idle_timeout=1.0, out=out, emit=printed.append)
    th.join()
    assert rc == 0
    assert printed[0].startswith("detection_tick,")
    with (out / "ticks.csv").open() as fh:
        ticks = [int(r["tick"]) for r in csv.DictReader(fh)]
    assert ticks == list(range(200, 1001))
    events = _events(out)
    assert any(501 <= int(e["onset_tick"]) <= 510 for e in events)
    assert main(["check", str(out)]) == 0


def test_stream_too_short_for_calibration(tmp_path):
    p = tmp_path / "short.csv"
    p.write_text("timestamp,device_id,ua,ub,uc,ia,ib,ic,load\n0,a,1,2,3,4,5,6,7\n")
    assert main(["stream", "--follow", str(p), "--idle-timeout", "0"]) == 2


def test_cp_coefficients_from_command_line(tmp_path):
    out = tmp_path / "cp"
    spec = _write_yaml(tmp_path / "small.yaml", {"rows": 14, "ticks": 300})
    rc = main(["analyze", "--scenario", str(spec), "--test-function", "cp", "--cp-coeffs", "0 0 1",
               "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["detector"]["test_function"] == "cp"
    # constant polynomial: every window's statistic is the row count
    with (out / "les.csv").open() as fh:
        assert {float(r["les"]) for r in csv.DictReader(fh)} == {14.0}
    assert np.isnan(float(next(csv.DictReader((out / "les.csv").open()))["les_normalized"]))
