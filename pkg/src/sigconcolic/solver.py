"""Bitvector satisfiability for path conditions.

Constraints are bit-blasted to CNF through Tseitin gates and decided by a
CDCL procedure (two watched literals, first-UIP learning, backjumping).
Decisions follow a fixed order: input bits by (region, byte index, bit
index), then auxiliary gates; each decision tries 0 before 1.  With no
randomness and no restarts, witnesses are a pure function of the input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

from .symexpr import (
    And, BoolToBv, Binop, Cmp, Concat, Const, Extract, Literal, Not, Or,
    PathCondition, Unop, Var, eval_expr, free_vars, simplify,
)

TRUE_LIT = 1
FALSE_LIT = -1


@dataclass(frozen=True)
class SolverBudget:
    max_decisions: int = 1_000_000
    max_seconds: float = 10.0

    def __post_init__(self):
        if self.max_decisions <= 0 or self.max_seconds <= 0:
            raise ValueError("solver budget must be positive")


@dataclass(frozen=True)
class SolveResult:
    verdict: str  # sat | unsat | unknown
    assignment: Mapping = field(default_factory=dict)
    decisions: int = 0
    conflicts: int = 0

    @property
    def sat(self) -> bool:
        return self.verdict == "sat"

    def bytes_for(self, region: str) -> dict[int, int]:
        return {v.index: b for v, b in self.assignment.items() if v.region == region}


# ---------------------------------------------------------------- bit-blasting


class BitBlaster:
    """Translates expressions to literals over a growing clause set.

    Literal 1 is constant true; gates fold constants and are hash-consed.
    """

    def __init__(self):
        self.nvars = 1
        self.clauses: list[list[int]] = [[TRUE_LIT]]
        self.inputs: dict[Var, list[int]] = {}
        self._gates: dict = {}
        self._exprs: dict = {}

    def fresh(self) -> int:
        self.nvars += 1
        return self.nvars

    def var_bits(self, v: Var) -> list[int]:
        bits = self.inputs.get(v)
        if bits is None:
            bits = [self.fresh() for _ in range(8)]
            self.inputs[v] = bits
        return bits

    # gates

    def and2(self, a: int, b: int) -> int:
        if a == FALSE_LIT or b == FALSE_LIT or a == -b:
            return FALSE_LIT
        if a == TRUE_LIT:
            return b
        if b == TRUE_LIT or a == b:
            return a
        if a > b:
            a, b = b, a
        key = ("and", a, b)
        g = self._gates.get(key)
        if g is None:
            g = self.fresh()
            self.clauses += [[-g, a], [-g, b], [g, -a, -b]]
            self._gates[key] = g
        return g

    def or2(self, a: int, b: int) -> int:
        return -self.and2(-a, -b)

    def xor2(self, a: int, b: int) -> int:
        if a == b:
            return FALSE_LIT
        if a == -b:
            return TRUE_LIT
        if a in (TRUE_LIT, FALSE_LIT):
            a, b = b, a
        if b == FALSE_LIT:
            return a
        if b == TRUE_LIT:
            return -a
        neg = False
        if a < 0:
            a, neg = -a, not neg
        if b < 0:
            b, neg = -b, not neg
        if a > b:
            a, b = b, a
        key = ("xor", a, b)
        g = self._gates.get(key)
        if g is None:
            g = self.fresh()
            self.clauses += [[-g, a, b], [-g, -a, -b], [g, -a, b], [g, a, -b]]
            self._gates[key] = g
        return -g if neg else g

    def mux(self, s: int, t: int, e: int) -> int:
        """``t`` if ``s`` else ``e``."""
        if s == TRUE_LIT or t == e:
            return t
        if s == FALSE_LIT:
            return e
        if t == TRUE_LIT and e == FALSE_LIT:
            return s
        if t == FALSE_LIT and e == TRUE_LIT:
            return -s
        key = ("mux", s, t, e)
        g = self._gates.get(key)
        if g is None:
            g = self.fresh()
            self.clauses += [[-s, -t, g], [-s, t, -g], [s, -e, g], [s, e, -g]]
            self._gates[key] = g
        return g

    def and_all(self, lits) -> int:
        out = TRUE_LIT
        for x in lits:
            out = self.and2(out, x)
        return out

    def or_all(self, lits) -> int:
        out = FALSE_LIT
        for x in lits:
            out = self.or2(out, x)
        return out

    # words (lists of literals, least significant bit first)

    def add(self, a: list, b: list, carry: int = FALSE_LIT) -> list:
        out = []
        for x, y in zip(a, b):
            t = self.xor2(x, y)
            out.append(self.xor2(t, carry))
            carry = self.or2(self.and2(x, y), self.and2(carry, t))
        return out

    def sub(self, a: list, b: list) -> list:
        return self.add(a, [-y for y in b], TRUE_LIT)

    def mul(self, a: list, b: list) -> list:
        w = len(a)
        acc = [FALSE_LIT] * w
        for i, bi in enumerate(b):
            if bi == FALSE_LIT:
                continue
            partial = [FALSE_LIT] * i + [self.and2(aj, bi) for aj in a[: w - i]]
            acc = self.add(acc, partial)
        return acc

    def shift(self, a: list, amount: list, left: bool) -> list:
        w = len(a)
        cur = list(a)
        for k in range(5):
            s = amount[k] if k < len(amount) else FALSE_LIT
            if s == FALSE_LIT:
                continue
            d = 1 << k
            if left:
                shifted = [FALSE_LIT] * min(d, w) + cur[: max(w - d, 0)]
            else:
                shifted = cur[d:] + [FALSE_LIT] * min(d, w)
            cur = [self.mux(s, x, y) for x, y in zip(shifted, cur)]
        return cur

    def eq(self, a: list, b: list) -> int:
        return self.and_all(-self.xor2(x, y) for x, y in zip(a, b))

    def ult(self, a: list, b: list) -> int:
        lt = FALSE_LIT
        for x, y in zip(a, b):
            # at this bit: a<b if (x=0,y=1), else carry lower result when x==y
            lt = self.or2(self.and2(-x, y), self.and2(-self.xor2(x, y), lt))
        return lt

    # expressions

    def word(self, e) -> list:
        hit = self._exprs.get(e)
        if hit is not None:
            return hit
        t = type(e)
        if t is Const:
            out = [TRUE_LIT if (e.value >> i) & 1 else FALSE_LIT for i in range(e.width)]
        elif t is Var:
            out = list(self.var_bits(e))
        elif t is Unop:
            out = [-x for x in self.word(e.arg)]
        elif t is Binop:
            a, b = self.word(e.lhs), self.word(e.rhs)
            op = e.op
            if op == "add":
                out = self.add(a, b)
            elif op == "sub":
                out = self.sub(a, b)
            elif op == "mul":
                out = self.mul(a, b)
            elif op == "and":
                out = [self.and2(x, y) for x, y in zip(a, b)]
            elif op == "or":
                out = [self.or2(x, y) for x, y in zip(a, b)]
            elif op == "xor":
                out = [self.xor2(x, y) for x, y in zip(a, b)]
            elif op == "shl":
                out = self.shift(a, b, True)
            else:
                out = self.shift(a, b, False)
        elif t is Extract:
            out = self.word(e.arg)[e.lo: e.lo + e.width]
        elif t is Concat:
            out = self.word(e.lo) + self.word(e.hi)
        elif t is BoolToBv:
            out = [self.bool(e.cond)] + [FALSE_LIT] * (e.width - 1)
        else:
            raise TypeError(f"not a bitvector expression: {e!r}")
        self._exprs[e] = out
        return out

    def bool(self, b) -> int:
        hit = self._exprs.get(b)
        if hit is not None:
            return hit
        t = type(b)
        if t is Literal:
            out = TRUE_LIT if b.value else FALSE_LIT
        elif t is Cmp:
            x, y = self.word(b.lhs), self.word(b.rhs)
            if b.op == "eq":
                out = self.eq(x, y)
            elif b.op == "ne":
                out = -self.eq(x, y)
            elif b.op == "ult":
                out = self.ult(x, y)
            else:
                out = -self.ult(y, x)
        elif t is Not:
            out = -self.bool(b.arg)
        elif t is And:
            out = self.and_all(self.bool(x) for x in b.args)
        elif t is Or:
            out = self.or_all(self.bool(x) for x in b.args)
        else:
            raise TypeError(f"not a boolean expression: {b!r}")
        self._exprs[b] = out
        return out


# ---------------------------------------------------------------- CDCL


class _Budget(Exception):
    pass


class Cdcl:
    def __init__(self, nvars: int, clauses: list, order: list, budget: SolverBudget):
        self.n = nvars
        self.value = [0] * (nvars + 1)  # 1 true, -1 false, 0 unassigned
        self.level = [0] * (nvars + 1)
        self.reason: list = [None] * (nvars + 1)
        self.trail: list[int] = []
        self.lim: list[int] = []
        self.qhead = 0
        self.watches: dict[int, list] = {}
        self.clauses: list = []
        self.units: list[int] = []
        self.order = order
        self.budget = budget
        self.decisions = 0
        self.conflicts = 0
        self.deadline = time.monotonic() + budget.max_seconds
        self.ok = True
        for c in clauses:
            self._add_input(c)

    def _add_input(self, lits):
        c = []
        seen = set()
        for x in lits:
            if -x in seen:
                return  # tautology
            if x not in seen:
                seen.add(x)
                c.append(x)
        if not c:
            self.ok = False
        elif len(c) == 1:
            self.units.append(c[0])
        else:
            self._attach(c)

    def _attach(self, c):
        self.clauses.append(c)
        self.watches.setdefault(c[0], []).append(c)
        self.watches.setdefault(c[1], []).append(c)

    def lit_value(self, x: int) -> int:
        v = self.value[abs(x)]
        return v if x > 0 else -v

    def assign(self, x: int, reason) -> None:
        v = abs(x)
        self.value[v] = 1 if x > 0 else -1
        self.level[v] = len(self.lim)
        self.reason[v] = reason
        self.trail.append(x)

    def propagate(self):
        """Unit propagation; returns a conflicting clause or None."""
        value = self.value
        watches = self.watches
        trail = self.trail
        while self.qhead < len(trail):
            p = trail[self.qhead]
            self.qhead += 1
            falsified = -p
            ws = watches.get(falsified)
            if not ws:
                continue
            keep = []
            i = 0
            n = len(ws)
            while i < n:
                c = ws[i]
                i += 1
                if c[0] == falsified:
                    c[0], c[1] = c[1], c[0]
                first = c[0]
                fv = value[abs(first)]
                if (fv > 0) == (first > 0) and fv != 0:
                    keep.append(c)
                    continue
                found = False
                for k in range(2, len(c)):
                    x = c[k]
                    xv = value[abs(x)]
                    if xv == 0 or (xv > 0) == (x > 0):
                        c[1], c[k] = x, c[1]
                        watches.setdefault(x, []).append(c)
                        found = True
                        break
                if found:
                    continue
                keep.append(c)
                if fv == 0:
                    self.assign(first, c)
                else:
                    keep.extend(ws[i:])
                    watches[falsified] = keep
                    return c
            watches[falsified] = keep
        return None

    def analyze(self, conflict):
        seen = set()
        learnt = [0]
        counter = 0
        p = None
        idx = len(self.trail) - 1
        cur = len(self.lim)
        clause = conflict
        while True:
            for q in clause:
                if p is not None and q == p:
                    continue
                v = abs(q)
                if v not in seen and self.level[v] > 0:
                    seen.add(v)
                    if self.level[v] >= cur:
                        counter += 1
                    else:
                        learnt.append(q)
            while abs(self.trail[idx]) not in seen:
                idx -= 1
            p = self.trail[idx]
            idx -= 1
            seen.discard(abs(p))
            counter -= 1
            if counter == 0:
                break
            clause = self.reason[abs(p)]
        learnt[0] = -p
        if len(learnt) == 1:
            return learnt, 0
        # put the highest-level remaining literal second so it is watched
        best = max(range(1, len(learnt)), key=lambda k: self.level[abs(learnt[k])])
        learnt[1], learnt[best] = learnt[best], learnt[1]
        return learnt, self.level[abs(learnt[1])]

    def backtrack(self, lvl: int) -> None:
        if len(self.lim) <= lvl:
            return
        cut = self.lim[lvl]
        for x in self.trail[cut:]:
            v = abs(x)
            self.value[v] = 0
            self.reason[v] = None
        del self.trail[cut:]
        del self.lim[lvl:]
        self.qhead = cut

    def solve(self) -> str:
        if not self.ok:
            return "unsat"
        for u in self.units:
            lv = self.lit_value(u)
            if lv < 0:
                return "unsat"
            if lv == 0:
                self.assign(u, None)
        pos = 0
        order = self.order
        while True:
            conflict = self.propagate()
            if conflict is not None:
                self.conflicts += 1
                if not self.lim:
                    return "unsat"
                learnt, lvl = self.analyze(conflict)
                self.backtrack(lvl)
                pos = 0
                if len(learnt) == 1:
                    self.assign(learnt[0], None)
                else:
                    self._attach(learnt)
                    self.assign(learnt[0], learnt)
                if self.conflicts & 255 == 0 and time.monotonic() > self.deadline:
                    raise _Budget()
                continue
            while pos < len(order) and self.value[order[pos]] != 0:
                pos += 1
            if pos == len(order):
                return "sat"
            self.decisions += 1
            if self.decisions > self.budget.max_decisions:
                raise _Budget()
            if self.decisions & 1023 == 0 and time.monotonic() > self.deadline:
                raise _Budget()
            self.lim.append(len(self.trail))
            self.assign(-order[pos], None)


# ---------------------------------------------------------------- API


def _conditions(pc) -> list:
    if isinstance(pc, PathCondition):
        return pc.conditions
    return [c.cond if hasattr(c, "cond") else c for c in pc]


def solve(pc, budget: SolverBudget | None = None) -> SolveResult:
    """Decide the conjunction of ``pc`` and return a witness when satisfiable.

    The result is SAT with a total assignment over the free variables,
    UNSAT, or UNKNOWN when the decision or time budget runs out.
    """
    budget = budget or SolverBudget()
    conds = [simplify(c) for c in _conditions(pc)]
    variables = set()
    for c in _conditions(pc):
        variables |= free_vars(c)

    bb = BitBlaster()
    for v in sorted(variables):
        bb.var_bits(v)
    roots = []
    for c in conds:
        lit = bb.bool(c)
        if lit == FALSE_LIT:
            return SolveResult("unsat")
        if lit != TRUE_LIT:
            roots.append(lit)
    clauses = bb.clauses + [[r] for r in roots]

    order = [b for v in sorted(bb.inputs) for b in bb.inputs[v]]
    in_order = set(order)
    order += [x for x in range(2, bb.nvars + 1) if x not in in_order]

    engine = Cdcl(bb.nvars, clauses, order, budget)
    try:
        verdict = engine.solve()
    except _Budget:
        return SolveResult("unknown", decisions=engine.decisions, conflicts=engine.conflicts)
    if verdict == "unsat":
        return SolveResult("unsat", decisions=engine.decisions, conflicts=engine.conflicts)
    assignment = {}
    for v in sorted(variables):
        byte = 0
        for i, lit in enumerate(bb.inputs[v]):
            if engine.value[lit] > 0:
                byte |= 1 << i
        assignment[v] = byte
    return SolveResult("sat", assignment, engine.decisions, engine.conflicts)


class PartialAssignment(ValueError):
    pass


def check_assignment(pc, assignment: Mapping) -> bool:
    """True iff every constraint of ``pc`` evaluates true under ``assignment``.

    Works directly on the unsimplified constraints through the reference
    evaluator, independent of the solver.
    """
    conds = _conditions(pc)
    needed = set()
    for c in conds:
        needed |= free_vars(c)
    missing = [v for v in needed if v not in assignment]
    if missing:
        v = sorted(missing)[0]
        raise PartialAssignment(f"assignment lacks {v.region}[{v.index}]")
    return all(eval_expr(c, assignment) for c in conds)


def format_result(result: SolveResult) -> str:
    lines = [result.verdict]
    for v in sorted(result.assignment):
        lines.append(f"var {v.region} {v.index} = {result.assignment[v]:#04x}")
    return "\n".join(lines) + "\n"
