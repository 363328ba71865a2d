import json

import pytest

from reramdse.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_STALE, EXIT_USAGE, main
from reramdse.config import ConfigError, ToolkitConfig

SMALL = {
    "wire": {"r_seg": 2.0},
    "testbench": {"samples_per_segment": 5, "error_state": "LRS"},
    "surrogate": {"sizes": [8, 12, 16], "bits_list": [6, 8]},
    "dse": {"n_range": [8, 16, 1], "f_range": [10e6, 100e6, 10e6], "bits_range": [6, 8, 1]},
}


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="r_sge"):
        ToolkitConfig.from_dict({"wire": {"r_sge": 1.0}})
    with pytest.raises(ConfigError, match="wires"):
        ToolkitConfig.from_dict({"wires": {}})
    with pytest.raises(ConfigError):
        ToolkitConfig.from_dict({"wire": {"termination": "both"}})
    with pytest.raises(ConfigError):
        ToolkitConfig.from_dict({"dse": {"v_drive": 0.2, "drive_match": {"n": 1, "f": 1, "bits": 1, "power": 1}}})


def test_round_trip_and_fingerprint(tmp_path):
    cfg = ToolkitConfig.from_dict(SMALL)
    back = ToolkitConfig.load(cfg.save(tmp_path / "c.json"))
    assert back == cfg and back.fingerprint == cfg.fingerprint
    assert cfg.replace(dse={"ops_per_mac": 1.0}).fingerprint == cfg.fingerprint
    assert cfg.replace(wire={"r_seg": 2.5}).fingerprint != cfg.fingerprint
    assert cfg.crossbar(8).r_seg == 2.0 and cfg.device_params().g_lrs == 48e-6


@pytest.fixture
def workspace(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return tmp_path / "ws", path


def run(ws, cfg, *args):
    return main(["--workspace", str(ws), "--config", str(cfg), "--workers", "1", "-q", *args])


def test_usage_errors(workspace, tmp_path, capsys):
    ws, cfg = workspace
    empty = tmp_path / "a.json"
    empty.write_text('{"anchors": []}')
    assert run(ws, cfg, "calibrate", str(empty)) == EXIT_USAGE
    assert run(ws, cfg, "explore", "--fix-f", "1e8", "--f-range", "1e7:1e8:1e7", "--unconstrained") == EXIT_USAGE
    assert run(ws, cfg, "explore") == EXIT_USAGE
    assert main(["--no-such-flag"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"device": {"g_lrs": -1}}')
    assert run(ws, bad, "report") == EXIT_USAGE
    assert run(ws, cfg, "surrogate") == EXIT_STALE


def test_pipeline(workspace, capsys):
    ws, cfg = workspace
    assert run(ws, cfg, "characterize") == EXIT_OK
    assert sorted(p.name for p in (ws / "characterize").iterdir()) == ["N12", "N16", "N8"]
    capsys.readouterr()
    assert run(ws, cfg, "characterize") == EXIT_OK
    assert capsys.readouterr().out.count("up to date") == 3

    assert run(ws, cfg, "surrogate") == EXIT_OK
    assert "collapse" in capsys.readouterr().out
    assert run(ws, cfg, "explore", "--max-power", "1.0", "--run-id", "r1") == EXIT_OK
    out = capsys.readouterr().out
    assert "optimum: N=" in out and (ws / "explore" / "r1" / "summary.json").exists()
    assert run(ws, cfg, "explore", "--max-power", "1e-9") == EXIT_INFEASIBLE
    assert run(ws, cfg, "explore", "--unconstrained", "--fix-f", "5e7", "--fix-bits", "8") == EXIT_OK
    assert run(ws, cfg, "report") == EXIT_OK
    assert {"rmse_max.csv", "sum_g.csv", "profiles.csv", "collapse.json"} <= {
        p.name for p in (ws / "report").iterdir()}


def test_changed_wire_invalidates_results(workspace, tmp_path, capsys):
    ws, cfg = workspace
    assert run(ws, cfg, "characterize", "--sizes", "8") == EXIT_OK
    changed = tmp_path / "changed.json"
    changed.write_text(json.dumps({**SMALL, "wire": {"r_seg": 2.5}}))
    capsys.readouterr()
    assert run(ws, changed, "characterize", "--sizes", "8") == EXIT_OK
    assert "up to date" not in capsys.readouterr().out
    # the surrogate built for one wire refuses to serve another
    assert run(ws, changed, "characterize", "--sizes", "12,16") == EXIT_OK
    assert run(ws, changed, "surrogate") == EXIT_OK
    assert run(ws, cfg, "explore", "--unconstrained") == EXIT_STALE


def test_workspace_from_environment(workspace, monkeypatch):
    ws, cfg = workspace
    monkeypatch.setenv("RERAMDSE_WORKSPACE", str(ws))
    assert main(["--config", str(cfg), "--workers", "1", "-q", "characterize", "--sizes", "8"]) == EXIT_OK
    assert (ws / "characterize" / "N8" / "meta.json").exists()


def test_calibrate_command(workspace, tmp_path):
    ws, cfg = workspace
    anchors = tmp_path / "anchors.json"
    anchors.write_text(json.dumps({"anchors": [{"n": 8, "sum_g": 64 * 40e-6}, {"n": 16, "sum_g": 256 * 40e-6}]}))
    assert run(ws, cfg, "calibrate", str(anchors)) == EXIT_OK
    fitted = ToolkitConfig.load(ws / "calibrated.json")
    assert fitted.wire.r_seg == 0.0 and fitted.device.g_lrs == pytest.approx(40e-6)
