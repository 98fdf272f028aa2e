from __future__ import annotations

import json
import math

import pytest

from sigconcolic.concolic import ExternalPolicy, SymbolicMarks
from sigconcolic.interp import execute, program_cfg, record_replay
from sigconcolic.isa import parse_program
from sigconcolic.search import (
    BudgetExceeded, Exhausted, SearchConfig, TargetError, TargetSpec, TraceMismatch,
    Witness, build_map, directed_search, distance_map, dumps_report, search_report,
)
from sigconcolic.solver import check_assignment
from tests.conftest import assert_witness_replays, scanner_inputs

FILE = SymbolicMarks({"file"})
DB = "Test:*:414243"
DETECTED = TargetSpec("DETECTED")

# Reverse-BFS distances to DETECTED for every scanner_inline block, frozen as
# a regression table (None = unreachable).
GOLDEN_DISTANCES = [
    13, 12, 9, 13, 13, 13, 14, 13, 12, 14, 12, 10, 9, 13, 12, 13, 12, 15, 15, 14, 13, 12, 15, 14,
    13, 12, 11, 11, 15, 12, 15, 13, 10, 9, 13, 8, 7, 6, 5, 5, 4, 4, 3, 2, 1, 3, 2, 4, 8, 0, None,
    None, 11, 10, 10, 14, 15, 15, 14, 13,
]


def _search(programs, name, seed, target=DETECTED, policy=None, **cfg):
    p = programs[name]
    result = directed_search(p, seed, FILE, target, policy, SearchConfig(**cfg))
    if isinstance(result, Witness):
        assert_witness_replays(p, result, target.block(p))
    return result


# ---------------------------------------------------------------- targets


def test_target_resolution(programs):
    p = programs["scanner_dylib"]
    assert TargetSpec("DETECTED").resolve(p) == ("main", p.main.labels["DETECTED"])
    assert TargetSpec("main:DETECTED").resolve(p) == TargetSpec("DETECTED").resolve(p)
    assert TargetSpec("str:match").resolve(p) == ("str", 0)
    assert TargetSpec(("main", 3)).resolve(p) == ("main", 3)
    assert TargetSpec("main:3").resolve(p) == ("main", 3)
    for bad in ("nowhere", "zzz:main", ("main", 10_000), ("nolib", 0)):
        with pytest.raises(TargetError):
            TargetSpec(bad).resolve(p)


# ---------------------------------------------------------------- distances


def test_distance_examples():
    p = parse_program("main:\n  const r0, 1\n  jmp a\na:\n  jmp b\nb:\n  jmp c\nc:\n  halt r0\nd:\n  halt r0\n")
    cfg = program_cfg(p)
    target = TargetSpec("c").block(p)
    d = distance_map(cfg, target)
    assert [d[b.id] for b in cfg.blocks] == [3, 2, 1, 0, math.inf]
    with pytest.raises(TargetError):
        distance_map(cfg, ("main", 1))


def test_scanner_inline_golden_distances(programs):
    p = programs["scanner_inline"]
    cfg = program_cfg(p)
    d = distance_map(cfg, DETECTED.block(p))
    got = [None if d[b.id] == math.inf else d[b.id] for b in cfg.blocks]
    assert got == GOLDEN_DISTANCES
    # a block's distance is one more than its best successor's
    for b in cfg.blocks:
        if 0 < d[b.id] < math.inf:
            assert d[b.id] == 1 + min(d[s] for s, _ in cfg.successors(b.id))


# ---------------------------------------------------------------- maps


def test_build_map_single_and_union(programs):
    p = programs["scanner_dylib"]
    t1 = execute(p, scanner_inputs(DB, b"ABC"))[1]
    t2 = execute(p, scanner_inputs(DB, b""))[1]
    m1 = build_map([t1], p)
    assert m1.blocks == set(t1.blocks) and m1.loads == {"str"}
    assert m1 == build_map([record_replay(p, scanner_inputs(DB, b"ABC"))], p)
    m2 = build_map([t2], p)
    assert build_map([t1, t2], p) == m1.merge(m2)
    assert m1.merge(m2).blocks == m1.blocks | m2.blocks
    assert m2.loads == set() and not m2.call_sites


def test_detection_map_covers_library(programs):
    p = programs["scanner_dylib"]
    m = build_map([execute(p, scanner_inputs(DB, b"ABC"))[1]], p)
    assert ("str", 0) in m
    site = next(iter(m.call_sites))
    assert site[1] == "str.match"
    assert m.covers_call(site[0], "str.match", "str")
    assert not m.covers_call(("main", 0), "str.match", "str")


def test_build_map_rejects_foreign_trace(programs):
    t = record_replay(programs["scanner_dylib"], scanner_inputs(DB, b"ABC"))
    with pytest.raises(TraceMismatch):
        build_map([t], programs["scanner_inline"])
    with pytest.raises(TraceMismatch):
        build_map(["trace v1\nblock main:1\n"], programs["scanner_inline"])


# ---------------------------------------------------------------- search


def test_inline_recovers_pattern_from_x_seed(programs):
    r = _search(programs, "scanner_inline", scanner_inputs(DB, b"X" * 8))
    data = r.inputs.region("file").data
    assert b"ABC" in data
    assert check_assignment(execute_path(programs, r), r.assignment)


def execute_path(programs, witness):
    from sigconcolic.concolic import execute_concolic
    return execute_concolic(programs["scanner_inline"], witness.inputs, FILE).path


def test_target_on_seed_path_returns_seed(programs):
    seed = scanner_inputs(DB, b"X" * 8)
    r = _search(programs, "scanner_inline", seed, target=TargetSpec("scan"))
    assert r.inputs == seed and r.stats.negations == 0 and r.stats.solver_calls == 0


def test_seed_already_detected(programs):
    seed = scanner_inputs(DB, b"xxABCxxx")
    r = _search(programs, "scanner_inline", seed)
    assert r.inputs == seed and r.stats.negations == 0


def test_directed_not_worse_than_fifo(programs):
    seed = scanner_inputs(DB, b"X" * 8)
    d = _search(programs, "scanner_inline", seed, order="directed")
    f = _search(programs, "scanner_inline", seed, order="fifo")
    assert isinstance(d, Witness) and isinstance(f, Witness)
    assert d.stats.solver_calls <= f.stats.solver_calls


def test_parallel_jobs_pick_same_witness(programs):
    seed = scanner_inputs("A:*:5a5a\nTest:*:414243", b"X" * 8)
    one = _search(programs, "scanner_inline", seed, jobs=1)
    many = _search(programs, "scanner_inline", seed, jobs=4)
    assert one.inputs == many.inputs and one.branch_path == many.branch_path


def test_loop_scanner_terminates(programs):
    for seed in (b"X" * 8, b"\x01" * 8, bytes(8)):
        r = _search(programs, "scanner_loop", scanner_inputs(DB, seed), loop_bound=128, max_states=4096)
        assert isinstance(r, (Witness, Exhausted, BudgetExceeded))


def test_loop_bound_cuts_spinning_seed(programs):
    from sigconcolic.concolic import execute_concolic
    seed = scanner_inputs(DB, b"\x01" * 4)
    # every byte odd: the retry loop spins until the visit bound stops the run
    run = execute_concolic(programs["scanner_loop"], seed, FILE, max_block_visits=40)
    assert run.outcome.kind == "loop-bound" and len(run.path) > 0
    r = _search(programs, "scanner_loop", seed, loop_bound=40)
    assert isinstance(r, Witness)


def test_concretize_dylib_cannot_reach_detection(programs):
    r = _search(programs, "scanner_dylib", scanner_inputs(DB, b"X" * 8), policy=ExternalPolicy.concretize())
    assert isinstance(r, Exhausted)


def test_mapped_dylib_reaches_detection(programs):
    p = programs["scanner_dylib"]
    emap = build_map([execute(p, scanner_inputs(DB, b"ABC" + bytes(5)))[1]], p)
    r = _search(programs, "scanner_dylib", scanner_inputs(DB, b"X" * 8), policy=ExternalPolicy.mapped(emap))
    assert b"ABC" in r.inputs.region("file").data


def test_restrict_to_map_monotonicity(programs):
    p = programs["scanner_dylib"]
    emap = build_map([execute(p, scanner_inputs(DB, b"ABC" + bytes(5)))[1]], p)
    explored: list = []
    target = DETECTED.block(p)
    r = directed_search(p, scanner_inputs(DB, bytes(8)), FILE, DETECTED, ExternalPolicy.mapped(emap),
                        SearchConfig(restrict_to_map=emap), explored=explored)
    assert isinstance(r, Witness)
    assert_witness_replays(p, r, target)
    assert explored
    allowed = emap.blocks | {target}
    for prefix, alt in explored:
        assert set(prefix) <= allowed and alt in allowed
    assert r.stats.pruned_map > 0


def test_budget_exceeded(programs):
    seed = scanner_inputs(DB, b"X" * 8)
    r = _search(programs, "scanner_inline", seed, max_solver_calls=1)
    assert isinstance(r, BudgetExceeded) and r.stats.solver_calls <= 1
    r = _search(programs, "scanner_inline", seed, max_states=1, max_solver_calls=2)
    assert isinstance(r, BudgetExceeded)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(loop_bound=0)
    with pytest.raises(ValueError):
        SearchConfig(order="random")


def test_report_is_deterministic(programs):
    seed = scanner_inputs(DB, b"X" * 8)
    texts = []
    for _ in range(2):
        r = _search(programs, "scanner_inline", seed)
        texts.append(dumps_report(search_report(r, DETECTED, FILE)))
    assert texts[0] == texts[1]
    data = json.loads(texts[0])
    assert data["verdict"] == "witness" and data["target"] == "DETECTED"
    assert bytes.fromhex(data["witness"]["file"]).find(b"ABC") >= 0
    assert data["branch_path_length"] > 0 and data["solver_calls"] == data["statistics"]["solver_calls"]
    assert "stamp" not in data
