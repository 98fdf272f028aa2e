"""Directed generational search toward a target block.

Each generation runs the program concolically on the current input.  If
the target block was entered, the input is replayed concretely and
returned as a :class:`Witness`.  Otherwise every branch constraint of the
new path becomes a negation candidate.  Candidates are ranked by the CFG
distance from the branch's untaken successor to the target, then by
prefix length, then by branch index.  The best candidate is solved, its
solution patched into the input, and the loop repeats.

Exploration is bounded by a per-block visit limit on candidate paths,
by the frontier size, and by the number of solver calls.  Given an
:class:`ExecutionMap` built from concrete pre-runs, it is also limited to
candidates whose path prefix stays inside the map.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

from .concolic import ExternalPolicy, SymbolicMarks, execute_concolic, negate_at
from .interp import (
    DEFAULT_FUEL, BlockEvent, BranchEvent, InputImage, Trace, XCallEvent, execute,
    parse_trace, program_cfg,
)
from .isa import Cfg, Opcode, Program
from .solver import SolverBudget, check_assignment, solve
from .symexpr import Var


class TargetError(ValueError):
    pass


class TraceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """A label (``DETECTED`` or ``lib:label``) or a ``(module, index)`` site."""

    site: object

    def resolve(self, program: Program) -> tuple[str, int]:
        site = self.site
        if isinstance(site, tuple):
            module, index = site
            try:
                image = program.module(module)
            except KeyError:
                raise TargetError(f"unknown module {module!r}") from None
            if not 0 <= index < len(image.instructions):
                raise TargetError(f"target index {index} outside module {module!r}")
            return module, index
        module, sep, label = str(site).rpartition(":")
        if not sep:
            module = program.main.name
        try:
            image = program.module(module)
        except KeyError:
            raise TargetError(f"unknown module {module!r}") from None
        if label.isdigit() and label not in image.labels:
            return TargetSpec((module, int(label))).resolve(program)
        if label not in image.labels:
            raise TargetError(f"unknown target label {label!r}")
        index = image.labels[label]
        if index >= len(image.instructions):
            raise TargetError(f"target label {label!r} marks no instruction")
        return module, index

    def block(self, program: Program) -> tuple[str, int]:
        """Key of the basic block containing the target site."""
        module, index = self.resolve(program)
        return program_cfg(program).block_at(module, index).key

    def __str__(self):
        if isinstance(self.site, tuple):
            return f"{self.site[0]}:{self.site[1]}"
        return str(self.site)


@dataclass(frozen=True)
class ExecutionMap:
    """Blocks, library loads and call sites seen in concrete pre-runs."""

    blocks: frozenset = frozenset()
    loads: frozenset = frozenset()
    call_sites: frozenset = frozenset()  # of ((module, index), symbol)

    def merge(self, other: "ExecutionMap") -> "ExecutionMap":
        return ExecutionMap(self.blocks | other.blocks, self.loads | other.loads,
                            self.call_sites | other.call_sites)

    def __contains__(self, block) -> bool:
        return block in self.blocks

    def covers_call(self, site: tuple, symbol: str, library: str) -> bool:
        return (site, symbol) in self.call_sites and library in self.loads


def build_map(traces: Iterable, program: Program) -> ExecutionMap:
    """Union the blocks, library loads and xcall sites of ``traces``.

    Traces may be :class:`Trace` objects or trace-file text.  Every block
    must start a basic block of ``program`` and every xcall must follow a
    block ending in a matching ``xcall``; otherwise :class:`TraceMismatch`.
    """
    cfg = program_cfg(program)
    out = ExecutionMap()
    for t in traces:
        trace = parse_trace(t) if isinstance(t, str) else t
        blocks, sites = set(), set()
        last = None
        for e in trace.events:
            if type(e) is BlockEvent:
                if not cfg.is_block_start(*e.block):
                    raise TraceMismatch(f"trace block {e.block[0]}:{e.block[1]} is not a block of this program")
                last = cfg.blocks[cfg.block_id(e.block)]
                blocks.add(e.block)
            elif type(e) is XCallEvent:
                if last is None:
                    raise TraceMismatch("xcall before any block")
                ins = program.module(last.module).instructions[last.last]
                if ins.opcode is not Opcode.XCALL or ins.operands[0].name != e.symbol:
                    raise TraceMismatch(f"xcall {e.symbol} does not match {last.module}:{last.last}")
                sites.add(((last.module, last.last), e.symbol))
        out = out.merge(ExecutionMap(frozenset(blocks), frozenset(trace.loads), frozenset(sites)))
    return out


def distance_map(cfg: Cfg, target) -> dict:
    """Edge count from every block to the target block (``math.inf`` if unreachable).

    ``target`` is a block id or a block key ``(module, start)``.
    """
    if isinstance(target, tuple):
        try:
            target = cfg.block_id(target)
        except KeyError:
            raise TargetError(f"no block starts at {target[0]}:{target[1]}") from None
    if not 0 <= target < len(cfg.blocks):
        raise TargetError(f"no block {target}")
    preds: dict = {b.id: [] for b in cfg.blocks}
    for s, d, _ in cfg.edges:
        preds[d].append(s)
    dist = {b.id: math.inf for b in cfg.blocks}
    dist[target] = 0
    queue = deque([target])
    while queue:
        x = queue.popleft()
        for p in sorted(preds[x]):
            if dist[p] == math.inf:
                dist[p] = dist[x] + 1
                queue.append(p)
    return dist


@dataclass(frozen=True)
class SearchConfig:
    loop_bound: int = 128
    max_states: int = 4096
    max_solver_calls: int = 512
    solver_budget: SolverBudget = field(default_factory=SolverBudget)
    restrict_to_map: ExecutionMap | None = None
    fuel: int = DEFAULT_FUEL
    order: str = "directed"  # or "fifo"
    jobs: int = 1

    def __post_init__(self):
        for name in ("loop_bound", "max_states", "max_solver_calls", "fuel", "jobs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.order not in ("directed", "fifo"):
            raise ValueError(f"unknown search order {self.order!r}")


@dataclass
class SearchStats:
    iterations: int = 0
    solver_calls: int = 0
    sat: int = 0
    unsat: int = 0
    unknown: int = 0
    negations: int = 0
    pruned_loop_bound: int = 0
    pruned_map: int = 0
    pruned_unreachable: int = 0
    duplicates: int = 0
    frontier_peak: int = 0
    dropped: int = 0
    divergences: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Witness:
    assignment: dict
    inputs: InputImage
    branch_path: tuple
    stats: SearchStats
    verdict: str = "witness"


@dataclass(frozen=True)
class Exhausted:
    stats: SearchStats
    verdict: str = "exhausted"


@dataclass(frozen=True)
class BudgetExceeded:
    stats: SearchStats
    reason: str = ""
    verdict: str = "budget-exceeded"


def branches_until(trace: Trace, block: tuple) -> tuple | None:
    """Branch records executed before ``block`` is first entered, or None."""
    out = []
    for e in trace.events:
        if type(e) is BlockEvent and e.block == block:
            return tuple(out)
        if type(e) is BranchEvent:
            out.append((e.site, e.taken))
    return None


def replay_reaches(program: Program, inputs: InputImage, target_block: tuple,
                   expected: tuple | None = None, fuel: int = DEFAULT_FUEL) -> bool:
    """Concrete replay: does the run enter ``target_block`` along ``expected`` branches?"""
    _, trace = execute(program, inputs, fuel)
    got = branches_until(trace, target_block)
    if got is None:
        return False
    return expected is None or got == tuple(expected)


@dataclass
class _Candidate:
    key: tuple
    path: object  # PathCondition
    predicted: tuple

    def __lt__(self, other):
        return self.key < other.key


def _alternate(program: Program, cfg: Cfg, site: tuple, taken: bool):
    module, index = site
    image = program.module(module)
    ins = image.instructions[index]
    if ins.opcode not in (Opcode.JZ, Opcode.JNZ):
        return None
    dest = image.labels[ins.target] if not taken else index + 1
    if dest >= len(image.instructions):
        return None
    return cfg.block_at(module, dest).key


def directed_search(program: Program, seeds: InputImage, marks: SymbolicMarks, target: TargetSpec,
                    policy: ExternalPolicy | None = None, config: SearchConfig | None = None, *,
                    explored: list | None = None):
    """Search for an input that drives ``program`` into the target block.

    Returns a :class:`Witness`, :class:`Exhausted` when no candidate is
    left, or :class:`BudgetExceeded` when frontier, solver-call or solver
    budgets cut the search short.  Deterministic for a fixed config.
    If ``explored`` is a list, each admitted candidate appends its
    predicted block prefix and alternate block to it.
    """
    policy = policy or ExternalPolicy.halt()
    config = config or SearchConfig()
    cfg = program_cfg(program)
    target_block = target.block(program)
    target_id = cfg.block_id(target_block)
    dist = distance_map(cfg, target_id)
    dist_by_key = {b.key: dist[b.id] for b in cfg.blocks}
    region_map = config.restrict_to_map
    stats = SearchStats()

    frontier: list = []
    tried: set = set()
    solved: dict = {}
    seq = 0
    truncated = False
    inputs = seeds
    expect = None

    while True:
        stats.iterations += 1
        run = execute_concolic(program, inputs, marks, policy, config.fuel,
                               max_block_visits=config.loop_bound)
        if expect is not None:
            got = tuple((c.site, c.taken) for c in run.path if c.branch)[: len(expect)]
            if got != expect:
                stats.divergences += 1

        predicted = branches_until(run.trace, target_block)
        if predicted is not None:
            values = {}
            for r in inputs.regions:
                if r.name in marks.regions:
                    for i, b in enumerate(r.data):
                        values[(r.name, i)] = b
            assignment = {v: values[(v.region, v.index)] for v in run.path.free_vars()}
            if check_assignment(run.path, assignment) and replay_reaches(
                program, inputs, target_block, predicted, config.fuel
            ):
                full = {}
                for (name, i), b in sorted(values.items()):
                    full[Var(name, i)] = b
                return Witness(full, inputs, predicted, stats)
            stats.divergences += 1

        blocks = run.trace.blocks
        outside = len(blocks)
        if region_map is not None:
            for j, b in enumerate(blocks):
                if b not in region_map.blocks and b != target_block:
                    outside = j
                    break
        for k, c in enumerate(run.path):
            if not c.branch:
                continue
            cand = negate_at(run.path, k)
            sig = tuple(x.cond for x in cand)
            if sig in tried:
                stats.duplicates += 1
                continue
            alt = _alternate(program, cfg, c.site, c.taken)
            d = dist_by_key.get(alt, math.inf) if alt is not None else math.inf
            if d == math.inf:
                stats.pruned_unreachable += 1
                continue
            pos = run.positions[k]
            prefix = blocks[:pos]
            counts: dict = {}
            for b in prefix:
                counts[b] = counts.get(b, 0) + 1
            counts[alt] = counts.get(alt, 0) + 1
            if max(counts.values()) > config.loop_bound:
                stats.pruned_loop_bound += 1
                continue
            if region_map is not None and (pos > outside or (alt not in region_map.blocks and alt != target_block)):
                stats.pruned_map += 1
                continue
            tried.add(sig)
            if explored is not None:
                explored.append((tuple(prefix), alt))
            seq += 1
            key = (d, pos, k, seq) if config.order == "directed" else (seq,)
            pred = tuple((x.site, x.taken) for x in cand if x.branch)
            heapq.heappush(frontier, _Candidate(key, cand, pred))
        if len(frontier) > config.max_states:
            keep = heapq.nsmallest(config.max_states, frontier)
            stats.dropped += len(frontier) - len(keep)
            frontier = keep
            heapq.heapify(frontier)
            truncated = True
        stats.frontier_peak = max(stats.frontier_peak, len(frontier))

        chosen = None
        while frontier and chosen is None:
            batch = [heapq.heappop(frontier) for _ in range(min(config.jobs, len(frontier)))]
            todo = [c for c in batch if id(c) not in solved]
            if stats.solver_calls + len(todo) > config.max_solver_calls:
                todo = todo[: config.max_solver_calls - stats.solver_calls]
                if not todo:
                    return BudgetExceeded(stats, "solver-call limit")
            if config.jobs > 1 and len(todo) > 1:
                with ThreadPoolExecutor(config.jobs) as pool:
                    results = list(pool.map(lambda c: solve(c.path, config.solver_budget), todo))
            else:
                results = [solve(c.path, config.solver_budget) for c in todo]
            for c, r in zip(todo, results):
                solved[id(c)] = r
                stats.solver_calls += 1
            for c in batch:
                r = solved.get(id(c))
                if r is None:
                    heapq.heappush(frontier, c)
                    continue
                if chosen is None and r.sat:
                    chosen = (c, r)
                elif r.sat:
                    heapq.heappush(frontier, c)
            for c in batch:
                r = solved.get(id(c))
                if r is not None and not r.sat:
                    if r.verdict == "unsat":
                        stats.unsat += 1
                    else:
                        stats.unknown += 1
        if chosen is None:
            if truncated or stats.unknown:
                return BudgetExceeded(stats, "frontier truncated" if truncated else "solver budget")
            return Exhausted(stats)
        cand, result = chosen
        stats.sat += 1
        stats.negations += 1
        inputs = inputs.patched({(v.region, v.index): b for v, b in result.assignment.items()})
        expect = cand.predicted


def search_report(result, target: TargetSpec, marks: SymbolicMarks, stamp: str | None = None) -> dict:
    """JSON-ready summary of a search result."""
    stats = result.stats
    report = {
        "target": str(target),
        "verdict": result.verdict,
        "iterations": stats.iterations,
        "solver_calls": stats.solver_calls,
        "witness": None,
        "branch_path_length": None,
        "statistics": stats.as_dict(),
    }
    if isinstance(result, Witness):
        report["witness"] = {
            r.name: r.data.hex() for r in result.inputs.regions if r.name in marks.regions
        }
        report["branch_path_length"] = len(result.branch_path)
    if isinstance(result, BudgetExceeded):
        report["reason"] = result.reason
    if stamp is not None:
        report["stamp"] = stamp
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
