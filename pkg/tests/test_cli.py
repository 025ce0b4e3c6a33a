"""Command-line contract: exit codes, file outputs, streamed alerts."""

from __future__ import annotations

import json

from poet.cli import main
from poet.inventory import AssetInventory
from poet.synth import builtin_scenario, synthesize
from poet.tracker import AnomalyAlert


def _write_builtin(tmp_path, name: str) -> str:
    result = synthesize(builtin_scenario(name))
    prefix = str(tmp_path / name)
    result.write(prefix)
    return prefix


def test_analyze_clean_exit_zero(tmp_path, capsys):
    prefix = _write_builtin(tmp_path, "normal-startup")
    assert main(["analyze", prefix + ".pcap"]) == 0
    assert capsys.readouterr().out == ""


def test_analyze_rename_attack_exit_two_one_line(tmp_path, capsys):
    prefix = _write_builtin(tmp_path, "rename-attack")
    code = main(["analyze", prefix + ".pcap"])
    out = capsys.readouterr().out
    assert code == 2
    lines = [line for line in out.splitlines() if line]
    anomaly_lines = [
        line for line in lines if json.loads(line)["severity"] == "anomaly"
    ]
    assert len(anomaly_lines) == 1
    alert = AnomalyAlert.from_json(json.loads(anomaly_lines[0]))
    assert alert.offending_event == "name_set_requested"


def test_analyze_missing_file_exit_one(tmp_path, capsys):
    code = main(["analyze", str(tmp_path / "missing.pcap")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_analyze_report_and_alert_files(tmp_path):
    prefix = _write_builtin(tmp_path, "rename-attack")
    report_path = tmp_path / "report.json"
    alerts_path = tmp_path / "alerts.jsonl"
    code = main(
        ["analyze", prefix + ".pcap", "--report", str(report_path), "--alerts", str(alerts_path)]
    )
    assert code == 2
    report = json.loads(report_path.read_text())
    assert report["summary"]["anomalies"] == 1
    lines = [json.loads(line) for line in alerts_path.read_text().splitlines() if line]
    assert len(lines) == len(report["alerts"])


def test_synth_builtin_writes_pair(tmp_path):
    out = tmp_path / "scn"
    assert main(["synth", "--builtin", "rename-attack", "--out", str(out)]) == 0
    assert (tmp_path / "scn.pcap").exists()
    manifest = json.loads((tmp_path / "scn.manifest.json").read_text())
    assert manifest["expected"]["anomalies"]


def test_synth_invalid_spec_exit_one(tmp_path, capsys):
    spec_path = tmp_path / "bad.json"
    spec_path.write_text(
        json.dumps(
            {
                "controller": {"mac": "02:00:00:00:01:00", "name": "plc-1", "ip": "1.2.3.4"},
                "devices": [{"mac": "02:00:00:00:01:00", "name": "dup-mac", "ip": "1.2.3.5"}],
            }
        )
    )
    code = main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_synth_then_analyze_matches_manifest(tmp_path, capsys):
    for name, expected_code in (("normal-startup", 0), ("rogue-connect", 2)):
        out = tmp_path / name
        assert main(["synth", "--builtin", name, "--out", str(out)]) == 0
        manifest = json.loads((tmp_path / (name + ".manifest.json")).read_text())
        code = main(["analyze", str(tmp_path / (name + ".pcap"))])
        capsys.readouterr()
        assert code == expected_code
        assert (code == 2) == bool(manifest["expected"]["anomalies"])


def test_fsm_export_device_fifteen_states(tmp_path):
    out = tmp_path / "device.json"
    assert main(["fsm-export", "device", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["states"]) == 15
    empirical = [e for e in doc["edges"] if e["empirical"]]
    assert len(empirical) == 2


def test_fsm_export_connection_seven_states(tmp_path):
    out = tmp_path / "connection.json"
    assert main(["fsm-export", "connection", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["states"]) == 7
    assert doc["initial_state"] == "ConnectionCreation"
    assert set(doc["state_operations"]) == set(doc["states"])


def test_fsm_export_system_four_states(tmp_path):
    out = tmp_path / "system.json"
    assert main(["fsm-export", "system", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["states"]) == 4
    assert doc["initial_state"] == "Inactive"


def test_fsm_export_unknown_kind_exit_one(capsys):
    assert main(["fsm-export", "widget"]) == 1
    capsys.readouterr()


def test_inventory_command(tmp_path, capsys):
    prefix = _write_builtin(tmp_path, "normal-startup")
    out = tmp_path / "inv.json"
    assert main(["inventory", prefix + ".pcap", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    loaded = AssetInventory.load(doc)
    assert len(loaded) >= 3
    names = {r.name_of_station for r in loaded.records.values()}
    assert {"plc-1", "lift-motor", "turntable-motor"} <= names


def test_report_command_stdout(tmp_path, capsys):
    prefix = _write_builtin(tmp_path, "normal-startup-1")
    assert main(["report", prefix + ".pcap"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["final_states"]["system"]["state"] == "DataExchange"


def test_usage_error_exit_one(capsys):
    assert main(["analyze"]) == 1  # missing argument
    assert main([]) == 1
    capsys.readouterr()


def test_poet_log_env_controls_verbosity(tmp_path, capsys, monkeypatch):
    prefix = _write_builtin(tmp_path, "normal-startup-1")
    monkeypatch.setenv("POET_LOG", "debug")
    assert main(["analyze", prefix + ".pcap"]) == 0
    capsys.readouterr()


def test_custom_system_name(tmp_path, capsys):
    prefix = _write_builtin(tmp_path, "normal-startup-1")
    report_path = tmp_path / "named.json"
    main(["analyze", prefix + ".pcap", "--system-name", "paint-line", "--report", str(report_path)])
    doc = json.loads(report_path.read_text())
    assert doc["summary"]["system_name"] == "paint-line"
    assert doc["final_states"]["system"]["key"] == "paint-line"
