from __future__ import annotations

import json
from importlib import resources

import pytest

from atmp.cli import main

FIX = resources.files("atmp").joinpath("fixtures")


def fx(name: str) -> str:
    return str(FIX.joinpath(name))


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check(capsys):
    code, out, _ = run(capsys, "check", fx("remote_data.tnuscr"))
    assert code == 0 and "ok" in out
    code, out, _ = run(capsys, "check", fx("bad.tnuscr"))
    assert code == 1 and "clock C_Sat is used by several roles" in out
    code, out, _ = run(capsys, "check", fx("bad.tnuscr"), "--json")
    data = json.loads(out)
    assert code == 1 and data["failures"][0]["kind"] == "ownership"


def test_project_role(capsys):
    code, out, _ = run(capsys, "project", fx("g_data.tnuscr"), "--role", "Sen")
    data = json.loads(out)
    assert code == 0 and data["partner"] == "Sat"
    code, out, _ = run(capsys, "project", fx("g_data.tnuscr"), "--role", "Nobody", "--json")
    assert code == 2 and json.loads(out)["error"] == "usage"


def test_project_out_dir(capsys, tmp_path):
    code, _, _ = run(capsys, "project", fx("remote_data.tnuscr"), "--out", str(tmp_path), "--dot")
    names = sorted(p.name for p in tmp_path.iterdir())
    assert code == 0 and "protocol.dot" in names and "Ser.cta.json" in names and "Sen.type.json" in names
    assert (tmp_path / "protocol.dot").read_text().startswith("digraph protocol")


def test_typecheck(capsys):
    code, out, _ = run(capsys, "typecheck", fx("remote_data.atmp"), "--protocol", fx("g_data.tnuscr"))
    assert code == 0 and "well-typed" in out


def test_typecheck_ill_typed(capsys, tmp_path):
    bad = tmp_path / "bad.atmp"
    bad.write_text(FIX.joinpath("remote_data.atmp").read_text().replace("Data 0.3 nil)\n", "Data 2 nil)\n", 1))
    code, out, _ = run(capsys, "typecheck", str(bad), "--protocol", fx("g_data.tnuscr"), "--json")
    assert code == 1 and json.loads(out)["error"]["rule"] == "T-Sel"


def test_simulate_trace(capsys):
    code, out, _ = run(capsys, "simulate", fx("remote_data.atmp"), "--trace")
    assert code == 0 and "deadlock-free" in out and "--R-" in out
    code, out, _ = run(capsys, "simulate", fx("remote_data.atmp"), "--trace", "--json")
    data = json.loads(out)
    assert data["deadlock_free"] and data["traces"][0]["labels"]


def test_simulate_grid_env(capsys, monkeypatch):
    monkeypatch.setenv("ATMP_GRID", "0,1")
    code, out, _ = run(capsys, "simulate", fx("remote_data.atmp"), "--json")
    assert code == 2 and json.loads(out)["error"] == "usage"


@pytest.mark.parametrize("theorem", ["association-sound", "association-complete", "safety",
                                     "deadlock-freedom", "subject-reduction"])
def test_verify_g_data(capsys, theorem):
    code, out, _ = run(capsys, "verify", fx("g_data.tnuscr"), "--theorem", theorem)
    assert code == 0 and "holds" in out


def test_verify_remote_data_deadlock(capsys):
    code, _, _ = run(capsys, "verify", fx("remote_data.tnuscr"), "--theorem", "deadlock-freedom", "--depth", "12")
    assert code == 0


def test_verify_generated(capsys):
    code, out, _ = run(capsys, "verify", "--seed", "3", "--limits", "roles=2,depth=2",
                       "--theorem", "subject-reduction", "--json")
    assert code == 0 and json.loads(out)["ok"]
    code, out, _ = run(capsys, "verify", "--seed", "3", "--limits", "colour=2", "--theorem", "safety", "--json")
    assert code == 2


def test_verify_rejected(capsys):
    code, out, _ = run(capsys, "verify", fx("bad.tnuscr"), "--theorem", "safety", "--json")
    assert code == 1 and json.loads(out)["ok"] is False


@pytest.mark.parametrize("argv", [
    ["check", "/nonexistent.tnuscr"],
    ["verify", "--theorem", "safety"],
    ["verify", "x", "--theorem", "nonsense"],
    ["simulate", "/nonexistent.atmp"],
    ["frobnicate"],
])
def test_failures_give_json(capsys, argv):
    code, out, _ = run(capsys, *argv, "--json")
    assert code == 2
    assert "error" in json.loads(out)


def test_parse_errors_give_json(capsys, tmp_path):
    f = tmp_path / "x.tnuscr"
    f.write_text("global protocol X(role p) {")
    code, out, _ = run(capsys, "check", str(f), "--json")
    data = json.loads(out)
    assert code == 2 and data["error"] == "parse" and data["line"] >= 1
    g = tmp_path / "x.atmp"
    g.write_text("(send")
    code, out, _ = run(capsys, "simulate", str(g), "--json")
    assert code == 2 and "error" in json.loads(out)
