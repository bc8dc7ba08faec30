import json
import subprocess
import sys

import pytest

from conftest import ego, npc, scenario_doc
from nesywarn.cli import main


@pytest.fixture
def crash_scenario(tmp_path):
    doc = scenario_doc([ego(0, 0, 0, 10.0, route=[[100.0, 0.0]]), npc("n", 30.0, 0.0, 3.14159, 10.0,
                                                                      route=[[-100.0, 0.0]])],
                       duration_s=3.0, pass_fail={"require_alert": True})
    p = tmp_path / "crash.json"
    p.write_text(json.dumps(doc))
    return p


def test_run_pass_exit_zero(tmp_path):
    from importlib.resources import files

    sc = files("nesywarn.data").joinpath("scenarios", "benign.json")
    assert main(["run", "--scenario", str(sc), "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "verdict.txt").read_text().startswith("pass")


def test_run_fail_exit_one(tmp_path, crash_scenario):
    kb = tmp_path / "kb.nal"
    kb.write_text("(--,<{SELF} --> [crash]>)!\n")
    code = main(["run", "--scenario", str(crash_scenario), "--knowledge", str(kb), "--out", str(tmp_path / "o")])
    assert code == 1


@pytest.mark.parametrize("extra", [["--detector", "nope"], ["--crash-db", "/nonexistent.csv"],
                                   ["--knowledge", "BAD"], ["--profiles", "/nonexistent.json"]])
def test_config_errors_exit_two(tmp_path, crash_scenario, extra, capsys):
    if extra[-1] == "BAD":
        bad = tmp_path / "bad.nal"
        bad.write_text("<a --> .\n")
        extra = ["--knowledge", str(bad)]
    code = main(["run", "--scenario", str(crash_scenario), "--out", str(tmp_path / "o"), *extra])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_bad_scenario_exit_two(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text("{ nope")
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_label_writes_manifest(tmp_path, capsys):
    from importlib.resources import files

    sc = files("nesywarn.data").joinpath("scenarios", "intersection.json")
    assert main(["label", "--scenario", str(sc), "--frames", "10", "--out", str(tmp_path)]) == 0
    counts = json.loads(capsys.readouterr().out)
    assert counts["train"] == 8 and counts["test"] == 2
    assert (tmp_path / "manifest.json").exists()


def test_calibrate_prints_jitter(capsys):
    assert main(["calibrate", "--profile", "yolov4_retrained", "--samples", "2000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["target_iou"] == pytest.approx(0.65) and out["jitter_frac"] > 0


def test_calibrate_unknown_profile():
    assert main(["calibrate", "--profile", "nope"]) == 2


def test_metrics_of_written_trace(tmp_path, crash_scenario, capsys):
    main(["run", "--scenario", str(crash_scenario), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["metrics", "--trace", str(tmp_path / "o")]) == 0
    assert isinstance(json.loads(capsys.readouterr().out), dict)


def test_console_module_entry():
    r = subprocess.run([sys.executable, "-m", "nesywarn.cli", "calibrate", "--profile", "nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "unknown detector profile" in r.stderr
