from __future__ import annotations

import json

import pytest

from sigconcolic.cli import main
from sigconcolic.corpus import source


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "db.txt").write_text("Test:*:414243\n")
    (tmp_path / "two.asm").write_text("main:\n  const r0, 7\n  halt r0\n")
    return tmp_path


SEARCH = ["search", "corpus:scanner_inline", "--input", "db=db.txt@1000", "--input", "file=fill:8@10000",
          "--symbolic", "file", "--target", "DETECTED"]


def test_asm_writes_artifact(work):
    assert main(["asm", "two.asm", "-o", "out.asm"]) == 0
    assert (work / "out.asm").read_text() == "main:\n  const r0, 7\n  halt r0\n"


def test_asm_error_exit_2(work, capsys):
    (work / "bad.asm").write_text("main:\n  jmp nowhere\n")
    assert main(["asm", "bad.asm"]) == 2
    assert "undefined label 'nowhere' (line 2)" in capsys.readouterr().err


def test_run_and_trace(work, capsys):
    assert main(["run", "two.asm"]) == 0
    assert capsys.readouterr().out == "halted 7\n"
    assert main(["trace", "corpus:scanner_inline", "--input", "db=db.txt@1000",
                 "--input", "file=fill:5:41@10000", "-o", "t.trace"]) == 0
    assert (work / "t.trace").read_text().startswith("trace v1\nblock main:0\n")


def test_cfg(capsys):
    assert main(["cfg", "corpus:scanner_inline", "--dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph cfg {")
    assert main(["cfg", "corpus:scanner_inline"]) == 0
    assert capsys.readouterr().out.startswith("blocks 60\n")


def test_solve(work, capsys):
    (work / "c.txt").write_text("(= (var file 0) (const 8 0x41))\n")
    assert main(["solve", "c.txt"]) == 0
    assert capsys.readouterr().out == "sat\nvar file 0 = 0x41\n"
    (work / "bad.txt").write_text("(= (var file 0)\n")
    assert main(["solve", "bad.txt"]) == 2


def test_concolic(work, capsys):
    assert main(["concolic", "corpus:scanner_inline", "--input", "db=db.txt@1000", "--input",
                 "file=fill:3:41@10000", "--symbolic", "file", "--dump-constraints", "--debug"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("outcome: halted 0\nconstraints: 2\n")
    assert "(= (var file 0) (const 8 0x41))" in out


def test_concolic_mapped_needs_map(work):
    assert main(["concolic", "corpus:scanner_dylib", "--input", "db=db.txt@1000", "--input",
                 "file=fill:3@10000", "--symbolic", "file", "--policy", "mapped"]) == 1


def test_search_success_and_determinism(work, capsys):
    assert main(SEARCH + ["--report", "a.json"]) == 0
    assert main(SEARCH + ["--report", "b.json"]) == 0
    a, b = (work / "a.json").read_bytes(), (work / "b.json").read_bytes()
    assert a == b
    rep = json.loads(a)
    assert rep["verdict"] == "witness" and "414243" in rep["witness"]["file"]
    assert main(SEARCH + ["--stamp"]) == 0
    assert "stamp" in json.loads(capsys.readouterr().out)


def test_search_unknown_label_exit_2(work, capsys):
    argv = list(SEARCH)
    argv[argv.index("DETECTED")] = "NOPE"
    assert main(argv) == 2
    assert "NOPE" in capsys.readouterr().err


def test_search_not_reached_exit_3(work):
    argv = ["search", "corpus:scanner_dylib", "--input", "db=db.txt@1000", "--input", "file=fill:8@10000",
            "--symbolic", "file", "--target", "DETECTED", "--policy", "concretize"]
    assert main(argv) == 3


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["search", "corpus:scanner_inline", "--bogus"],
    ["run", "two.asm", "--fuel", "0"],
    ["extract", "corpus:scanner_inline", "--db", "db.txt", "--target", "DETECTED"],
])
def test_usage_errors_exit_1(work, argv):
    assert main(argv) == 1


@pytest.mark.parametrize("argv", [
    ["run", "missing.asm"],
    ["run", "corpus:nope"],
    ["run", "two.asm", "--input", "file=nofile@1000"],
    ["run", "two.asm", "--input", "file"],
    ["run", "two.asm", "--input", "file=fill:3@zz"],
    ["run", "two.asm", "--input", "a=fill:4@1000", "--input", "b=fill:4@1002"],
])
def test_input_errors_exit_2(work, argv):
    assert main(argv) == 2


def test_extract_happy_path(work):
    argv = ["extract", "corpus:scanner_inline", "--db", "db.txt", "--file-len", "8", "--target", "DETECTED",
            "--truth", "414243", "--report", "r.json"]
    assert main(argv) == 0
    rep = json.loads((work / "r.json").read_text())
    assert rep["equality"] == "pass" and rep["verification"] == "pass"
    assert rep["recovered_pattern_bytes"] == "414243"
    assert set(rep) >= {"target_endpoint", "policy_used", "witness_bytes", "recovered_pattern_bytes",
                        "verification", "equality", "statistics"}


def test_extract_policy_switch(work):
    (work / "pre.bin").write_bytes(b"ABC" + bytes(5))
    base = ["extract", "corpus:scanner_dylib", "--db", "db.txt", "--file-len", "8", "--target", "DETECTED"]
    assert main(base + ["--policy", "concretize", "--report", "c.json"]) == 3
    assert main(base + ["--policy", "mapped", "--prerun", "pre.bin", "--report", "m.json"]) == 0
    assert main(base + ["--policy", "mapped"]) == 1


def test_program_file_with_library(work, capsys):
    (work / "dylib.asm").write_text(source("scanner_dylib"))
    assert main(["run", "dylib.asm", "--input", "db=db.txt@1000", "--input", "file=fill:4:41@10000"]) == 0
    assert capsys.readouterr().out == "halted 0\n"


def test_internal_fault_exit_4(work, monkeypatch):
    import sigconcolic.cli as cli

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "execute", boom)
    assert main(["run", "two.asm"]) == 4
