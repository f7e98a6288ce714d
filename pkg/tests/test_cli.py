import json
import subprocess
import sys
from pathlib import Path

import pytest

from peros.cli import main
from peros.storage.trace import gen_sequential, save_trace


def run_cli(*argv) -> int:
    return main(list(argv))


def test_eval_subcommand(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"home": str(tmp_path / "home")}))
    assert run_cli("--config", str(cfg), "eval") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["accuracy"] == 1.0
    assert out["recall"] == 1.0
    reports = list((tmp_path / "home" / "reports").glob("*.json"))
    assert len(reports) == 1


def test_sim_subcommand(tmp_path, capsys):
    trace_path = tmp_path / "seq.csv"
    save_trace(gen_sequential(runs=10, run_len=32, files=2, seed=1), trace_path)
    out_path = tmp_path / "report.json"
    assert run_cli("sim", "--trace", str(trace_path), "--out", str(out_path)) == 0
    report = json.loads(out_path.read_text())
    assert report["records"] == 320
    assert 0.0 <= report["prefetch_hit_ratio"] <= 1.0


def test_sim_with_config(tmp_path, capsys):
    trace_path = tmp_path / "t.csv"
    save_trace(gen_sequential(runs=4, run_len=16, files=1, seed=2), trace_path)
    sim_cfg = tmp_path / "sim.json"
    sim_cfg.write_text(json.dumps({"seed": 5, "candidates": [1, 2, 4]}))
    assert run_cli("sim", "--trace", str(trace_path),
                   "--config", str(sim_cfg)) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["chosen_window"] in (1, 2, 4)


def test_registry_add(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"home": str(tmp_path / "home")}))
    spec_file = tmp_path / "new_api.json"
    spec_file.write_text(json.dumps({
        "name": "net.ping",
        "effect": "read-only",
        "params": [{"name": "host", "kind": "string", "required": True}],
    }))
    assert run_cli("--config", str(cfg), "registry", "add", str(spec_file)) == 0
    saved = tmp_path / "home" / "registry.json"
    doc = json.loads(saved.read_text())
    assert doc["version"] == 21
    assert any(a["name"] == "net.ping" for a in doc["apis"])
    # the shipped data file is never rewritten
    from peros.config import data_path
    shipped = json.loads(data_path("registry.json").read_text())
    assert shipped["version"] == 20


def test_replay_prints_journal(tmp_path, capsys):
    from peros.actuator import Workspace, execute
    from peros.model import OperationPlan, PlanStep

    root = tmp_path / "ws"
    root.mkdir()
    (root / "a.txt").write_text("hello")
    ws = Workspace.attach(root)
    plan = OperationPlan(id="p-replay", steps=(
        PlanStep(1, "fs.write", {"path": "b.txt", "content": "bee"}),
        PlanStep(2, "fs.remove", {"pattern": "a.txt"}),
    ))
    _, journal = execute(plan, ws)
    path = journal.path(ws)

    assert run_cli("replay", "--journal", str(path)) == 0
    out = capsys.readouterr().out
    assert "p-replay" in out
    assert "fs.write" in out and "ok" in out

    assert run_cli("replay", "--journal", str(path), "--revert") == 0
    assert (root / "a.txt").exists()
    assert not (root / "b.txt").exists()


def test_cli_entrypoint_help():
    proc = subprocess.run([sys.executable, "-m", "peros.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("serve", "eval", "sim", "registry", "replay"):
        assert sub in proc.stdout
