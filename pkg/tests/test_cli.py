import json

import pytest

from esdroop import cli
from esdroop.scenario import ScenarioError


def test_validate_ok(capsys):
    assert cli.main(["validate", "--feeder", "13bus.json"]) == 0
    assert "13 buses" in capsys.readouterr().out


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "runs"
    assert cli.main(["run", "--hours", "0.5", "--out", str(out)]) == 0
    assert (out / "4bus_es-adaptive.csv").exists()
    doc = json.loads((out / "4bus_es-adaptive.json").read_text())
    assert doc["steps"] == 60
    # second run without --force refuses to overwrite
    assert cli.main(["run", "--hours", "0.5", "--out", str(out)]) == 1
    assert cli.main(["run", "--hours", "0.5", "--out", str(out), "--force"]) == 0


def test_run_with_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hours": 0.25, "params": {"gain": 20.0}}))
    assert cli.main(["run", "--config", str(cfg), "--hours", "0.25", "--out", str(tmp_path),
                     "--controller", "fixed-droop", "--band", "0.88:1.12"]) == 0
    assert (tmp_path / "4bus_fixed-droop.csv").read_text().count("\n") == 31


def test_compare_and_oracle(tmp_path, capsys):
    assert cli.main(["compare", "--hours", "0.25", "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "4bus_compare.json").read_text())
    assert [r["controller"] for r in table] == ["oracle", "es-adaptive", "fixed-droop"]
    assert cli.main(["oracle", "--at-step", "5", "--points", "5", "--hours", "1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "4bus_oracle_step5.json").read_text())
    assert set(doc["dispatch_kvar"]) == {"pv3", "pv4"}


def test_check_convexity(tmp_path, capsys):
    assert cli.main(["check-convexity", "--hours", "0.25", "--out", str(tmp_path)]) == 0
    assert "D>0" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run", "--hours", "-1"],
    ["run", "--feeder", "missing.json"],
    ["run", "--band", "1.2:0.8"],
    ["run", "--controller", "pid"],
    ["oracle", "--at-step", "99999", "--hours", "1"],
    ["validate"],
    ["bogus"],
])
def test_usage_errors_exit_1(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        rc = cli.main(argv + ["--out", str(tmp_path)] if argv[0] in ("run", "oracle") else argv)
        raise SystemExit(rc)
    assert exc.value.code == 1


def test_simulation_failure_exits_2(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise ScenarioError("too many failed solves")
    monkeypatch.setattr(cli, "run_qsts", boom)
    assert cli.main(["run", "--hours", "0.25", "--out", str(tmp_path)]) == 2
