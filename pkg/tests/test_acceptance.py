"""Acceptance criteria for the package, one test per criterion.

Each criterion prints a single ``PASS``/``FAIL`` line (collected into the
pytest terminal summary).  Run ``python tests/test_acceptance.py`` to
execute them outside pytest.
"""

from __future__ import annotations

import json
import os
import random
import sys
import tempfile
import time
from pathlib import Path

if __name__ == "__main__":  # allow running as a script from the repo root
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from sigconcolic.cli import main as cli_main
from sigconcolic.concolic import ConsistencyError, ExternalPolicy, SymbolicMarks, execute_concolic
from sigconcolic.corpus import corpus
from sigconcolic.interp import execute
from sigconcolic.search import (
    BudgetExceeded, Exhausted, SearchConfig, TargetSpec, Witness, branches_until, build_map,
    directed_search, dumps_report, search_report,
)
from sigconcolic.sigextract import extract_signature, gen_min_db, make_inputs
from sigconcolic.solver import check_assignment, solve
from tests.exprgen import brute_force_sat, random_path

RESULTS: dict[str, str] = {}
FILE = SymbolicMarks({"file"})
DB = "Test:*:414243"


def _record(n: int, title: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title} ({detail})"
    RESULTS[f"{n}"] = line
    print(line)
    return ok


class _Workdir:
    def __enter__(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.old = os.getcwd()
        os.chdir(self.tmp.name)
        Path("db.txt").write_text(DB + "\n")
        return Path(self.tmp.name)

    def __exit__(self, *exc):
        os.chdir(self.old)
        self.tmp.cleanup()


def _quiet(argv) -> int:
    import contextlib
    import io
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        return cli_main(argv)


# ---------------------------------------------------------------- criteria


def criterion_1() -> bool:
    """Signature recovery on scanner_inline, plus 50 random patterns."""
    with _Workdir() as d:
        t0 = time.perf_counter()
        code = _quiet(["extract", "corpus:scanner_inline", "--db", "db.txt", "--file-len", "8",
                       "--target", "DETECTED", "--truth", "414243", "--report", "r.json"])
        elapsed = time.perf_counter() - t0
        rep = json.loads((d / "r.json").read_text())
    ok = (code == 0 and elapsed < 10.0 and rep["verification"] == "pass"
          and rep["recovered_pattern_bytes"] == "414243" and rep["equality"] == "pass")
    rng = random.Random(20240601)
    scanner = corpus()["scanner_inline"]
    recovered = 0
    for _ in range(50):
        pat = bytes(rng.randrange(0x20, 0x7F) for _ in range(rng.randint(1, 6)))
        r = extract_signature(scanner, gen_min_db("R", pat.hex()), 8, truth=pat)
        if r.success and r.recovered_pattern_bytes == pat.hex():
            recovered += 1
    ok = ok and recovered == 50
    return _record(1, "signature recovery", ok,
                   f"exit {code}, {elapsed:.2f}s, recovered {rep['recovered_pattern_bytes']}, random {recovered}/50")


def criterion_2() -> bool:
    """CONCRETIZE fails, MAPPED succeeds; nothing else differs."""
    with _Workdir() as d:
        (d / "pre.bin").write_bytes(b"ABC" + bytes(5))
        base = ["extract", "corpus:scanner_dylib", "--db", "db.txt", "--file-len", "8", "--target", "DETECTED",
                "--prerun", "pre.bin"]
        c_code = _quiet(base + ["--policy", "concretize", "--report", "c.json"])
        m_code = _quiet(base + ["--policy", "mapped", "--report", "m.json"])
        c = json.loads((d / "c.json").read_text())
        m = json.loads((d / "m.json").read_text())
    ok = (c_code == 3 and c["witness_bytes"] is None and m_code == 0 and m["verification"] == "pass")
    return _record(2, "policy switch concretize->mapped", ok,
                   f"concretize exit {c_code} ({c['outcome']}), mapped exit {m_code} ({m['outcome']})")


def criterion_3() -> bool:
    """1000 random constraint sets agree with brute-force enumeration."""
    rng = random.Random(1000)
    mismatches = unknown = bad_models = sat = 0
    for _ in range(1000):
        pc = random_path(rng, rng.randint(1, 3), rng.randint(1, 16))
        r = solve(pc)
        if r.verdict == "unknown":
            unknown += 1
            continue
        if r.sat != brute_force_sat(pc):
            mismatches += 1
        if r.sat:
            sat += 1
            if not check_assignment(pc, r.assignment):
                bad_models += 1
    ok = mismatches == 0 and unknown == 0 and bad_models == 0
    return _record(3, "solver vs brute force", ok,
                   f"1000 sets, {sat} sat, {mismatches} mismatches, {unknown} unknown, {bad_models} bad models")


def _witnesses():
    progs = corpus()
    cases = []
    for name in ("scanner_inline", "scanner_loop"):
        for db in (DB, "A:2:5a5a\nB:*:616263", "T:0:00ff"):
            for seed in (b"X" * 8, bytes(8), b"\x01" * 8):
                cases.append((name, db, seed, None))
    dylib = progs["scanner_dylib"]
    emap = build_map([execute(dylib, make_inputs(DB, b"ABC" + bytes(5)))[1]], dylib)
    cases.append(("scanner_dylib", DB, b"X" * 8, ExternalPolicy.mapped(emap)))
    target = TargetSpec("DETECTED")
    for name, db, seed, policy in cases:
        p = progs[name]
        r = directed_search(p, make_inputs(db, seed), FILE, target, policy, SearchConfig())
        if isinstance(r, Witness):
            yield p, r, target.block(p)


def criterion_4() -> bool:
    """Every witness replays along its predicted branch records."""
    total = bad = 0
    for p, w, block in _witnesses():
        total += 1
        _, trace = execute(p, w.inputs)
        if not trace.entered(block) or branches_until(trace, block) != w.branch_path:
            bad += 1
    ok = bad == 0 and total > 0
    return _record(4, "witness replay soundness", ok, f"{total} witnesses, {bad} divergent")


def criterion_5() -> bool:
    """scanner_loop terminates under the default bounds, deterministically."""
    p = corpus()["scanner_loop"]
    config = SearchConfig(loop_bound=128, max_states=4096)
    target = TargetSpec("DETECTED")
    verdicts = []
    ok = True
    worst = 0.0
    for seed in (b"\x01" * 8, b"X" * 8):
        reports = []
        for _ in range(2):
            t0 = time.perf_counter()
            r = directed_search(p, make_inputs(DB, seed), FILE, target, None, config)
            dt = time.perf_counter() - t0
            worst = max(worst, dt)
            ok = ok and dt < 30.0 and isinstance(r, (Witness, Exhausted, BudgetExceeded))
            reports.append(dumps_report(search_report(r, target, FILE)))
        ok = ok and reports[0] == reports[1]
        verdicts.append(json.loads(reports[0])["verdict"])
    return _record(5, "path-explosion containment", ok, f"verdicts {verdicts}, slowest {worst:.2f}s")


def criterion_6() -> bool:
    """Debug-mode shadow checks hold at every step on every corpus program."""
    progs = corpus()
    rng = random.Random(6)
    violations = runs = steps = 0
    for name, p in progs.items():
        pre = execute(p, make_inputs(DB, b"ABC" + bytes(5)))[1]
        policies = [ExternalPolicy.halt(), ExternalPolicy.concretize(), ExternalPolicy.mapped(build_map([pre], p))]
        for policy in policies:
            for _ in range(8):
                data = bytes(rng.choice(b"ABCX\x00\x01") for _ in range(rng.randint(0, 8)))
                db = rng.choice([DB, "A:*:4142\nB:1:43", "# c\nT:0:58"])
                try:
                    run = execute_concolic(p, make_inputs(db, data), FILE, policy, debug=True,
                                           max_block_visits=256)
                except ConsistencyError:
                    violations += 1
                    continue
                runs += 1
                steps += run.steps
                if run.checks < run.steps:
                    violations += 1
    ok = violations == 0
    return _record(6, "concolic consistency", ok, f"{runs} runs, {steps} checked steps, {violations} violations")


def criterion_7() -> bool:
    """Two identical search invocations give byte-identical reports."""
    with _Workdir() as d:
        argv = ["search", "corpus:scanner_inline", "--input", "db=db.txt@1000", "--input", "file=fill:8@10000",
                "--symbolic", "file", "--target", "DETECTED"]
        a = _quiet(argv + ["--report", "a.json"])
        b = _quiet(argv + ["--report", "b.json"])
        same = (d / "a.json").read_bytes() == (d / "b.json").read_bytes()
    ok = a == 0 and b == 0 and same
    return _record(7, "search report determinism", ok, f"exits {a}/{b}, identical={same}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7]


def test_criterion_1_signature_recovery():
    assert criterion_1()


def test_criterion_2_policy_switch():
    assert criterion_2()


def test_criterion_3_solver_oracle():
    assert criterion_3()


def test_criterion_4_witness_replay():
    assert criterion_4()


def test_criterion_5_loop_containment():
    assert criterion_5()


def test_criterion_6_consistency():
    assert criterion_6()


def test_criterion_7_determinism():
    assert criterion_7()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
