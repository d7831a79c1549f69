import json
import random

import pytest

from asmsearch.cli import main
from asmsearch.codegen import emit
from asmsearch.ir import parse_ir
from asmsearch.machine import parse_asm
from asmsearch.search import initial_candidate

from conftest import fixture_path, read_fixture

EXAMPLE = fixture_path("example.ir")
SMALL = ["--budget", "300", "--bets", "3", "--bet-budget", "50"]


def optimize(tmp, *extra):
    return main(["optimize", EXAMPLE, "--out-dir", str(tmp), *SMALL, *extra])


def test_optimize_writes_artifacts(tmp_path, capsys):
    assert optimize(tmp_path, "--seed", "4") == 0
    out = capsys.readouterr().out
    assert "verdict Proven" in out
    asm = (tmp_path / "example.s").read_text()
    assert ".globl example" in asm
    trace = (tmp_path / "example.trace.csv").read_text().splitlines()
    assert trace[0] == "run,step,kind,PA,PB,accepted,cost"
    assert len(trace) == 301
    man = json.loads((tmp_path / "example.manifest.json").read_text())
    assert man["seed"] == 4
    assert man["verdict"]["accepted"] is True
    assert man["final_cost"] <= man["initial_cost"]
    assert man["config"]["bet_runs"] == 3
    # the emitted file checks out on its own
    assert main(["check", EXAMPLE, str(tmp_path / "example.s")]) == 0


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    optimize(a, "--seed", "9")
    optimize(b, "--seed", "9")
    for name in ("example.s", "example.trace.csv", "example.manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_budget_zero_returns_first_candidate(tmp_path):
    assert main(["optimize", EXAMPLE, "--out-dir", str(tmp_path), "--budget", "0", "--seed", "2"]) == 0
    prog = parse_ir(read_fixture("example.ir"))
    want = emit(prog, initial_candidate(prog, random.Random("2/0")))
    assert parse_asm((tmp_path / "example.s").read_text()) == want


def test_small_register_file(tmp_path):
    assert optimize(tmp_path, "--registers", "3") == 0
    text = (tmp_path / "example.s").read_text()
    for r in ("rax", "rcx", "rbx", "r10"):
        assert r not in text


def test_bad_register_count(tmp_path, capsys):
    assert optimize(tmp_path, "--registers", "2") == 1
    assert "registers" in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("seed = 5\nbudget = 200\nbets = 2\nbet_budget = 50\n")
    assert main(["optimize", EXAMPLE, "--config", str(cfg), "--out-dir", str(tmp_path / "x")]) == 0
    man = json.loads((tmp_path / "x" / "example.manifest.json").read_text())
    assert (man["seed"], man["config"]["total_budget"]) == (5, 200)
    assert main(["optimize", EXAMPLE, "--config", str(cfg), "--seed", "6",
                 "--out-dir", str(tmp_path / "y")]) == 0
    man = json.loads((tmp_path / "y" / "example.manifest.json").read_text())
    assert man["seed"] == 6 and man["config"]["bet_runs"] == 2


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("colour = 1\n")
    assert main(["optimize", EXAMPLE, "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1


def test_cost_model_flag(tmp_path):
    costs = tmp_path / "c.toml"
    costs.write_text("mulx = 40\n")
    assert optimize(tmp_path / "plain") == 0
    assert optimize(tmp_path / "slow", "--cost-model", str(costs)) == 0
    plain = json.loads((tmp_path / "plain" / "example.manifest.json").read_text())
    slow = json.loads((tmp_path / "slow" / "example.manifest.json").read_text())
    assert slow["initial_cost"] > plain["initial_cost"]
    assert slow["config"]["cost_model"] == str(costs)


def test_bad_ir(tmp_path, capsys):
    p = tmp_path / "bad.ir"
    p.write_text("fn f(a: u64) -> (u64) { return b; }")
    assert main(["optimize", str(p), "--out-dir", str(tmp_path)]) == 1
    assert "ValidationError" in capsys.readouterr().err


def test_missing_file(capsys):
    assert main(["optimize", "/nonexistent/x.ir"]) == 1


@pytest.mark.parametrize("asm, code, status", [
    ("first.s", 0, "Proven"),
    ("improved.s", 0, "Proven"),
    ("corrupted.s", 3, "Disproven"),
])
def test_check_exit_codes(asm, code, status, capsys):
    assert main(["check", EXAMPLE, fixture_path(asm)]) == code
    v = json.loads(capsys.readouterr().out)
    assert v["status"] == status


def test_check_rejects_jump(capsys):
    assert main(["check", EXAMPLE, fixture_path("jmp.s")]) == 3
    v = json.loads(capsys.readouterr().out)
    assert v["accepted"] is False and "jmp" in v["reason"]


def test_run_ir_and_asm(capsys):
    assert main(["run", EXAMPLE, "1", "2", "3"]) == 0
    ir_out = capsys.readouterr().out.split()
    assert main(["run", fixture_path("first.s"), "1", "2", "3", "--ir", EXAMPLE]) == 0
    asm_out = capsys.readouterr().out.split()
    assert ir_out == asm_out == ["0x0", "0x11"]


def test_run_asm_without_ir(capsys):
    assert main(["run", fixture_path("improved.s"), "1", "2", "3", "--outputs", "2"]) == 0
    assert capsys.readouterr().out.split() == ["0x0", "0x11"]


def test_run_bad_input(capsys):
    assert main(["run", EXAMPLE, "1", "two", "3"]) == 1


def test_bench(capsys):
    assert main(["bench", fixture_path("first.s"), fixture_path("improved.s"), "--ir", EXAMPLE]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["per_call_B"] < d["per_call_A"]
