"""Concolic execution: one concrete path plus symbolic shadow state.

The concrete machine from :mod:`interp` drives execution, so the concrete
path is exactly the one ``interp.run`` takes.  Alongside it each register
and memory byte may carry a shadow :class:`~sigconcolic.symexpr.Expr` over
the marked input bytes, and every conditional branch whose condition has a
shadow appends a constraint to the path condition.

External calls follow an :class:`ExternalPolicy`:

``halt``
    stop with ``policy-halt`` when a symbolic argument reaches the call;
    concrete calls run as an opaque black box.
``concretize``
    drop the symbolic arguments and run the callee as a black box.  No
    constraint pins the dropped values, so constraints the callee would
    have imposed are silently lost.
``mapped``
    when the execution map recorded this call site, run the library
    bytecode inline with full shadow propagation; otherwise ``policy-halt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .interp import (
    ARG_REGS, DEFAULT_FUEL, MASK, BlockEvent, Fault, InputImage, Machine,
    MachineState, Trace, load_image,
)
from .isa import ALU_OPS, BRANCHES, Opcode, Program
from .symexpr import (
    BoolToBv, Binop, Cmp, Concat, Const, Constraint, Extract, Literal,
    PathCondition, Var, eval_expr, format_constraints, negate, simplify, zext,
)

POLICY_MODES = ("halt", "concretize", "mapped")


@dataclass(frozen=True)
class SymbolicMarks:
    regions: frozenset = frozenset()

    def __post_init__(self):
        if isinstance(self.regions, str):
            object.__setattr__(self, "regions", frozenset([self.regions]))
        else:
            object.__setattr__(self, "regions", frozenset(self.regions))


@dataclass(frozen=True)
class ExternalPolicy:
    mode: str = "halt"
    map: object = None  # ExecutionMap for mode "mapped"

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown policy {self.mode!r}")
        if self.mode == "mapped" and self.map is None:
            raise ValueError("mapped policy needs an execution map")

    @classmethod
    def halt(cls) -> "ExternalPolicy":
        return cls("halt")

    @classmethod
    def concretize(cls) -> "ExternalPolicy":
        return cls("concretize")

    @classmethod
    def mapped(cls, execution_map) -> "ExternalPolicy":
        return cls("mapped", execution_map)


@dataclass(frozen=True)
class Outcome:
    kind: str  # halted | fault | fuel-exhausted | policy-halt | loop-bound
    code: int | None = None
    symbol: str | None = None
    reason: str | None = None

    def __str__(self):
        if self.kind == "halted":
            return f"halted {self.code}"
        if self.kind == "policy-halt":
            return f"policy-halt {self.symbol}"
        if self.kind == "fault":
            return f"fault {self.reason}"
        return self.kind


class ConsistencyError(AssertionError):
    """A shadow expression disagreed with the concrete value it shadows."""


@dataclass
class ConcolicRun:
    trace: Trace
    path: PathCondition
    outcome: Outcome
    state: MachineState
    # number of blocks entered before each path entry was recorded
    positions: list = field(default_factory=list)
    steps: int = 0
    checks: int = 0

    def __iter__(self) -> Iterator:
        return iter((self.trace, self.path, self.outcome))


class _Stop(Exception):
    def __init__(self, outcome: Outcome):
        self.outcome = outcome


class ConcolicState:
    """Concrete machine state plus shadow registers, shadow memory and path."""

    def __init__(self, program: Program, inputs: InputImage, marks: SymbolicMarks,
                 policy: ExternalPolicy, *, debug: bool = False, check_every: int = 4096,
                 max_block_visits: int | None = None):
        for name in marks.regions:
            if name not in inputs.names():
                raise ValueError(f"marked region {name!r} is not an input region")
        self.program = program
        self.machine = Machine(load_image(program, inputs))
        self.policy = policy
        self.regs: list = [None] * 8
        self.mem: dict = {}
        self.path: list = []
        self.positions: list = []
        self.assignment: dict = {}
        for r in inputs.regions:
            if r.name in marks.regions:
                for i, b in enumerate(r.data):
                    v = Var(r.name, i)
                    self.mem[r.base + i] = v
                    self.assignment[v] = b
        self.debug = debug
        self.check_every = check_every
        self.checks = 0
        self.max_block_visits = max_block_visits
        self.visits: dict = {}
        self.blocks_entered = 0
        self._blackbox_depth: int | None = None
        self.stopped: Outcome | None = None

    @property
    def concrete(self) -> MachineState:
        return self.machine.state

    @property
    def trace(self) -> Trace:
        return self.machine.trace

    # -- helpers

    def _reg_expr(self, n: int):
        e = self.regs[n]
        return e if e is not None else Const(32, self.concrete.registers[n])

    def _set_reg(self, n: int, e) -> None:
        if e is not None:
            e = simplify(e)
            if type(e) is Const:
                e = None
        self.regs[n] = e

    def _set_mem(self, addr: int, e) -> None:
        if e is not None:
            e = simplify(e)
            if type(e) is Const:
                e = None
        if e is None:
            self.mem.pop(addr, None)
        else:
            self.mem[addr] = e

    def _record(self, cond, site, taken, branch=True) -> None:
        cond = simplify(cond)
        if type(cond) is Literal:
            if not cond.value:
                raise ConsistencyError(f"constraint at {site} is false on its own path")
            return
        self.path.append(Constraint(cond, site, taken, branch))
        self.positions.append(self.blocks_entered)

    def _address(self, mem_op, site) -> int:
        _, base, off = mem_op
        addr = (self.concrete.registers[base] + off) & MASK
        sh = self.regs[base]
        if sh is not None:
            # pin the concretized address so replayed witnesses take the same path
            e = Binop("add", sh, Const(32, off))
            self._record(Cmp("eq", e, Const(32, addr)), site, True, branch=False)
        return addr

    def _byte_expr(self, addr: int):
        e = self.mem.get(addr)
        if e is not None:
            return e
        return Const(8, self.concrete.memory.get(addr, 0))

    # -- stepping

    def step(self) -> None:
        m = self.machine
        st = m.state
        try:
            op, ops = m.current()
        except Fault:
            m.step()
            return
        site = st.pc
        if self._blackbox_depth is not None:
            self._blackbox_step(op, ops)
            return

        updates: list = []  # deferred (kind, slot, expr) applied after the concrete step
        regs = st.registers
        if op is Opcode.CONST:
            updates.append(("r", ops[0][1], None))
        elif op is Opcode.MOV:
            updates.append(("r", ops[0][1], self.regs[ops[1][1]]))
        elif op in ALU_OPS:
            a_sh = self.regs[ops[1][1]]
            b_sh = self.regs[ops[2][1]] if ops[2][0] == "r" else None
            if a_sh is None and b_sh is None:
                updates.append(("r", ops[0][1], None))
            else:
                a = self._reg_expr(ops[1][1])
                b = self._reg_expr(ops[2][1]) if ops[2][0] == "r" else Const(32, ops[2][1])
                if op is Opcode.EQ:
                    e = BoolToBv(Cmp("eq", a, b), 32)
                elif op is Opcode.LT:
                    e = BoolToBv(Cmp("ult", a, b), 32)
                else:
                    e = Binop(op.value, a, b)
                updates.append(("r", ops[0][1], e))
        elif op is Opcode.LOAD8:
            addr = self._address(ops[1], site)
            sh = self.mem.get(addr)
            updates.append(("r", ops[0][1], zext(sh, 32) if sh is not None else None))
        elif op is Opcode.LOAD32:
            addr = self._address(ops[1], site)
            parts = [self.mem.get((addr + k) & MASK) for k in range(4)]
            if any(p is not None for p in parts):
                b = [self._byte_expr((addr + k) & MASK) for k in range(4)]
                e = Concat(Concat(b[3], b[2]), Concat(b[1], b[0]))
                updates.append(("r", ops[0][1], e))
            else:
                updates.append(("r", ops[0][1], None))
        elif op is Opcode.STORE8:
            addr = self._address(ops[0], site)
            sh = self.regs[ops[1][1]]
            updates.append(("m", addr, Extract(0, 8, sh) if sh is not None else None))
        elif op is Opcode.STORE32:
            addr = self._address(ops[0], site)
            sh = self.regs[ops[1][1]]
            for k in range(4):
                updates.append(("m", (addr + k) & MASK, Extract(8 * k, 8, sh) if sh is not None else None))
        elif op in BRANCHES:
            sh = self.regs[ops[0][1]]
            if sh is not None:
                v = regs[ops[0][1]]
                zero = Const(sh.width, 0)
                if op is Opcode.JZ:
                    taken = v == 0
                    cond = Cmp("eq", sh, zero)
                else:
                    taken = v != 0
                    cond = Cmp("ne", sh, zero)
                self._record(cond if taken else negate(cond), site, taken)
        elif op is Opcode.XCALL:
            self.apply_external(ops[0][1])
            return

        m.step()
        if st.status.kind == "fault":
            return
        for kind, slot, e in updates:
            if kind == "r":
                self._set_reg(slot, e)
            else:
                self._set_mem(slot, e)

    def _blackbox_step(self, op, ops) -> None:
        m = self.machine
        st = m.state
        written_regs: list = []
        written_mem: list = []
        if op in ALU_OPS or op in (Opcode.CONST, Opcode.MOV, Opcode.LOAD8, Opcode.LOAD32):
            written_regs.append(ops[0][1])
        elif op in (Opcode.STORE8, Opcode.STORE32):
            _, base, off = ops[0]
            addr = (st.registers[base] + off) & MASK
            n = 1 if op is Opcode.STORE8 else 4
            written_mem.extend((addr + k) & MASK for k in range(n))
        elif op is Opcode.XCALL:
            written_regs.append(0)
        m.step()
        for r in written_regs:
            self.regs[r] = None
        for a in written_mem:
            self.mem.pop(a, None)
        if len(st.stack) < self._blackbox_depth:
            self._blackbox_depth = None

    def apply_external(self, symbol: str) -> None:
        """Execute the ``xcall`` at the current pc under the external policy."""
        m = self.machine
        st = m.state
        site = st.pc
        symbolic = any(self.regs[k] is not None for k in range(ARG_REGS))
        entry = self.program.resolve(symbol)
        mode = self.policy.mode

        if mode == "halt" and symbolic:
            raise _Stop(Outcome("policy-halt", symbol=symbol))
        if mode == "mapped":
            lib = entry[0] if entry is not None else None
            if lib is None or not self.policy.map.covers_call(site, symbol, lib):
                raise _Stop(Outcome("policy-halt", symbol=symbol))
            m.step()  # enter the library; its bytecode runs with shadows
            return
        if mode == "concretize":
            for k in range(ARG_REGS):
                self.regs[k] = None
        depth = len(st.stack)
        m.step()
        if st.status.kind == "fault":
            return
        if len(st.stack) > depth:
            self._blackbox_depth = len(st.stack)
        else:
            self.regs[0] = None  # native result

    # -- checks

    def check_consistency(self) -> None:
        st = self.concrete
        for n, e in enumerate(self.regs):
            if e is not None and eval_expr(e, self.assignment) != st.registers[n]:
                raise ConsistencyError(f"r{n} shadow disagrees at {st.pc}")
        for addr, e in self.mem.items():
            if eval_expr(e, self.assignment) != st.memory.get(addr):
                raise ConsistencyError(f"memory {addr:#x} shadow disagrees at {st.pc}")
        self.checks += 1

    def run(self, fuel: int = DEFAULT_FUEL) -> Outcome:
        m = self.machine
        st = m.state
        events = m.trace.events
        m.note_entry()
        self._count_blocks(0)
        steps = 0
        try:
            while st.status.kind == "running":
                if steps >= fuel:
                    return Outcome("fuel-exhausted")
                before = len(events)
                self.step()
                steps += 1
                if self.debug or steps % self.check_every == 0:
                    self.check_consistency()
                if len(events) != before:
                    self._count_blocks(before)
        except _Stop as stop:
            return stop.outcome
        finally:
            self.steps = steps
        if st.status.kind == "halted":
            return Outcome("halted", code=st.status.code)
        return Outcome("fault", reason=st.status.reason)

    def _count_blocks(self, start: int) -> None:
        for e in self.machine.trace.events[start:]:
            if type(e) is BlockEvent:
                self.blocks_entered += 1
                n = self.visits.get(e.block, 0) + 1
                self.visits[e.block] = n
                if self.max_block_visits is not None and n > self.max_block_visits:
                    raise _Stop(Outcome("loop-bound"))


def execute_concolic(program: Program, inputs: InputImage, marks: SymbolicMarks,
                     policy: ExternalPolicy | None = None, fuel: int = DEFAULT_FUEL, *,
                     debug: bool = False, max_block_visits: int | None = None,
                     dump=None) -> ConcolicRun:
    """Run ``program`` concretely on ``inputs`` while collecting the path condition.

    ``debug`` checks shadow/concrete agreement after every step; otherwise it
    is sampled every 4096 steps and once at the end.  ``max_block_visits``
    stops the run with outcome ``loop-bound`` once any block is entered more
    often than that.  ``dump``, if given, is a writable stream that receives
    the path condition in constraint text form.
    """
    policy = policy or ExternalPolicy.halt()
    cs = ConcolicState(program, inputs, marks, policy, debug=debug,
                       max_block_visits=max_block_visits)
    try:
        outcome = cs.run(fuel)
    except _Stop as stop:  # loop bound hit on the entry block
        outcome = stop.outcome
    cs.check_consistency()
    pc = PathCondition(cs.path)
    if dump is not None:
        dump.write(format_constraints(pc, with_sites=True))
    return ConcolicRun(cs.trace, pc, outcome, cs.concrete, list(cs.positions), cs.steps, cs.checks)


def apply_external(state: ConcolicState, symbol: str) -> ConcolicState:
    """Apply the state's external-call policy to the ``xcall`` at its pc.

    Returns the same (mutated) state; raises nothing for policy stops, which
    are reported through :meth:`ConcolicState.run`.
    """
    try:
        state.apply_external(symbol)
    except _Stop as stop:
        state.stopped = stop.outcome
    return state


def negate_at(pc: PathCondition, k: int) -> PathCondition:
    """Keep ``pc[:k]``, negate ``pc[k]`` and drop the rest."""
    if not 0 <= k < len(pc):
        raise IndexError(f"branch index {k} out of range for path of length {len(pc)}")
    c = pc[k]
    flipped = Constraint(negate(c.cond), c.site, not c.taken, c.branch)
    return PathCondition(tuple(pc[:k]) + (flipped,))
