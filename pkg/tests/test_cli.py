import json
import shutil
from pathlib import Path

import pytest

from trapsmooth.cli import main
from trapsmooth.config import COMMANDS, ConfigError, describe, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "demos" / "configs"


def _copy(tmp_path, *names):
    for n in names:
        shutil.copy(CONFIGS / n, tmp_path / n)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _outputs(d: Path):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())} if d.exists() else {}


# -- describe -------------------------------------------------------------------------------

def test_describe_trace_lists_start_smax_scene():
    text = describe("trace")
    for key in ("start_z", "start_zeta", "s_max", "scene"):
        assert key in text


def test_describe_scan_smoothing_lists_nlist_epsilon_weight():
    text = describe("scan-smoothing")
    for key in ("n_list", "epsilon", "weight"):
        assert key in text


def test_describe_is_deterministic_and_covers_every_command():
    for c in COMMANDS:
        assert describe(c) == describe(c)


def test_describe_unknown_lists_commands(capsys):
    assert main(["describe", "frobnicate"]) == 2
    err = capsys.readouterr().err
    assert all(c in err for c in COMMANDS)
    with pytest.raises(ConfigError):
        describe("frobnicate")


def test_describe_via_main(capsys):
    assert main(["describe", "trap"]) == 0
    assert "[trap]" in capsys.readouterr().out


# -- validation -----------------------------------------------------------------------------

def test_malformed_scene_exits_2_without_outputs(tmp_path):
    _copy(tmp_path, "malformed.ini", "malformed.scene.ini")
    out = tmp_path / "out"
    assert main(["validate", str(tmp_path / "malformed.ini"), "--out", str(out)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("body", [
    "[run]\ncommand = trace\n[trace]\nstart_z = 0, 0\nstart_zeta = 1, 0\n",            # missing s_max
    "[run]\ncommand = trace\n[trace]\nstart_z = 0\nstart_zeta = 1, 0\ns_max = 1\n",     # bad point
    "[run]\ncommand = trace\n[trace]\nstart_z = 0, 0\nstart_zeta = 1, 0\ns_max = -1\n",  # negative
    "[run]\ncommand = trace\n[trace]\nstart_z = 0, 0\nstart_zeta = 1, 0\ns_max = 1\nspeed = 2\n",  # unknown key
    "[run]\ncommand = teleport\n",
    "no sections at all",
    "[run]\ncommand = maxprinciple\n[maxprinciple]\nh_list = 0.1, 2\n",
    "[run]\ncommand = maxprinciple\n[maxprinciple]\nfamily = gaussian\n",
])
def test_invalid_configs_exit_2(tmp_path, body):
    cfg = _write(tmp_path, "c.ini", body)
    out = tmp_path / "out"
    cmd = "trace" if "trace" in body else "maxprinciple"
    assert main([cmd, str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_scene_file(tmp_path):
    cfg = _write(tmp_path, "c.ini", "[run]\ncommand = validate\nscene = nowhere.ini\n")
    assert main(["validate", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_command_mismatch(tmp_path):
    _copy(tmp_path, "maxprinciple.ini")
    assert main(["trace", str(tmp_path / "maxprinciple.ini"), "--out", str(tmp_path / "o")]) == 2


def test_overlapping_obstacles_rejected(tmp_path):
    _write(tmp_path, "s.ini", "[obstacle.0]\ncenter = 0, 0\nradius = 1\n[obstacle.1]\ncenter = 1.5, 0\nradius = 1\n")
    with pytest.raises(ConfigError, match="overlap"):
        parse_config("[run]\ncommand = validate\nscene = s.ini\n", base_dir=tmp_path)


def test_non_unit_covector_rejected(tmp_path):
    _copy(tmp_path, "two_disc.scene.ini")
    text = (CONFIGS / "evolve.ini").read_text().replace("zeta0 = 1, 0", "zeta0 = 2, 0")
    with pytest.raises(ConfigError, match="unit"):
        parse_config(text, base_dir=tmp_path)


def test_defaults_are_resolved():
    cfg = load_config(CONFIGS / "maxprinciple.ini")
    r = cfg.resolved()
    assert r["params"]["beta"] == 1.5 and r["params"]["samples"] == 1000
    assert r["seed"] == 0 and r["command"] == "maxprinciple"


def test_keys_are_case_sensitive():
    cfg = load_config(CONFIGS / "trap.ini")
    assert cfg.params["T"] == 100.0


# -- runs ---------------------------------------------------------------------------------

def test_validate_two_disc(tmp_path):
    _copy(tmp_path, "validate.ini", "two_disc.scene.ini")
    out = tmp_path / "out"
    assert main(["validate", str(tmp_path / "validate.ini"), "--out", str(out)]) == 0
    rep = json.loads((out / "geometry_report.json").read_text())
    assert rep["report"]["ikawa_ok"] is True
    assert rep["config"]["scene"]["obstacles"][1]["center"] == [4.0, 0.0]


def test_trap_two_disc_divergent(tmp_path):
    _copy(tmp_path, "trap.ini", "two_disc.scene.ini")
    out = tmp_path / "out"
    assert main(["trap", str(tmp_path / "trap.ini"), "--out", str(out)]) == 0
    rep = json.loads((out / "trap.json").read_text())
    assert rep["diagnosis"] == "divergent"
    lines = (out / "running_integral.csv").read_bytes().split(b"\n")
    assert lines[0] == b"s,integral" and b"\r" not in b"".join(lines)
    assert float(lines[-2].split(b",")[1]) == pytest.approx(100.0)


def test_numerical_failure_exits_3_with_diagnostics(tmp_path):
    _copy(tmp_path, "two_disc.scene.ini")
    # a packet launched 0.05 from the boundary overlaps the obstacle
    text = (CONFIGS / "evolve.ini").read_text().replace("z0 = 2, 0", "z0 = 1.05, 0")
    cfg = _write(tmp_path, "e.ini", text)
    out = tmp_path / "out"
    assert main(["evolve", str(cfg), "--out", str(out)]) == 3
    assert sorted(p.name for p in out.iterdir()) == ["error.json"]
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "EnvelopeOverlapError" and err["config"]["command"] == "evolve"


def test_success_clears_stale_error(tmp_path):
    _copy(tmp_path, "maxprinciple.ini")
    out = tmp_path / "out"
    out.mkdir()
    (out / "error.json").write_text("{}")
    assert main(["maxprinciple", str(tmp_path / "maxprinciple.ini"), "--out", str(out)]) == 0
    assert not (out / "error.json").exists()


@pytest.mark.parametrize("name,files", [
    ("validate.ini", ["two_disc.scene.ini"]),
    ("trace.ini", ["disc_ellipse.scene.ini"]),
    ("trap.ini", ["two_disc.scene.ini"]),
    ("orbit.ini", ["disc_ellipse.scene.ini"]),
    ("evolve.ini", ["two_disc.scene.ini"]),
    ("maxprinciple.ini", []),
    ("scan_resolvent_empty.ini", []),
])
def test_runs_are_byte_reproducible(tmp_path, name, files):
    _copy(tmp_path, name, *files)
    cmd = load_config(tmp_path / name).command
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cmd, str(tmp_path / name), "--out", str(a)]) == 0
    assert main([cmd, str(tmp_path / name), "--out", str(b)]) == 0
    oa, ob = _outputs(a), _outputs(b)
    assert oa and oa == ob
    for fname, data in oa.items():
        if fname.endswith(".json"):
            assert "config" in json.loads(data)


def test_resolvent_jobs_do_not_change_output(tmp_path):
    _copy(tmp_path, "scan_resolvent_empty.ini")
    cfg = tmp_path / "scan_resolvent_empty.ini"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["scan-resolvent", str(cfg), "--out", str(a)]) == 0
    assert main(["scan-resolvent", str(cfg), "--out", str(b), "--jobs", "3"]) == 0
    assert _outputs(a) == _outputs(b)


def test_evolve_snapshot_roundtrip(tmp_path):
    from trapsmooth.schrodinger import load_snapshot
    _copy(tmp_path, "evolve.ini", "two_disc.scene.ini")
    out = tmp_path / "out"
    assert main(["evolve", str(tmp_path / "evolve.ini"), "--out", str(out)]) == 0
    values, head = load_snapshot(out / "snapshot_000.bin")
    assert head["t"] == pytest.approx(0.05, abs=1e-3) and values.ndim == 2
