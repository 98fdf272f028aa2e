"""Concrete execution of linked programs.

Input regions are mapped into memory at their base addresses and described
by a header table at ``HEADER_BASE``: for region ``i`` the little-endian
words at ``HEADER_BASE + 8*i`` hold ``(base, length)``, and a ``(0, 0)``
pair terminates the table.

``run`` executes until ``halt``, a fault, or fuel exhaustion and returns the
final state plus a :class:`Trace` of blocks entered, branch decisions,
external calls and library loads.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

from .isa import BRANCHES, Cfg, Imm, LabelRef, Mem, Opcode, Program, Reg, build_cfg

HEADER_BASE = 0x0F00
HEADER_END = 0x1000
MAX_REGIONS = (HEADER_END - HEADER_BASE) // 8 - 1
NULL_PAGE = 0x100
DEFAULT_FUEL = 1_000_000
DEFAULT_MAX_STACK = 1024
ARG_REGS = 4
MASK = 0xFFFFFFFF


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    name: str
    base: int
    data: bytes

    @property
    def end(self) -> int:
        return self.base + len(self.data)


@dataclass(frozen=True)
class InputImage:
    regions: tuple = ()

    def __post_init__(self):
        regs = tuple(r if isinstance(r, Region) else Region(*r) for r in self.regions)
        object.__setattr__(self, "regions", regs)
        names = [r.name for r in regs]
        if len(set(names)) != len(names):
            raise ImageError("duplicate region name")
        if len(regs) > MAX_REGIONS:
            raise ImageError(f"at most {MAX_REGIONS} regions")
        for r in regs:
            if not 0 <= r.base <= MASK or r.end > MASK + 1:
                raise ImageError(f"region {r.name!r} does not fit in 32-bit memory")
            if r.data and r.base < HEADER_END and r.end > HEADER_BASE:
                raise ImageError(f"region {r.name!r} overlaps the input header")
        spans = sorted((r.base, r.end, r.name) for r in regs if r.data)
        for (b1, e1, n1), (b2, e2, n2) in zip(spans, spans[1:]):
            if b2 < e1:
                raise ImageError(f"regions {n1!r} and {n2!r} overlap")

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.regions]

    def replace(self, name: str, data: bytes) -> "InputImage":
        return InputImage(tuple(
            Region(r.name, r.base, bytes(data)) if r.name == name else r for r in self.regions
        ))

    def patched(self, values: dict) -> "InputImage":
        """Copy with ``{(region, index): byte}`` overwritten."""
        out = []
        for r in self.regions:
            data = bytearray(r.data)
            for (name, idx), v in values.items():
                if name == r.name:
                    data[idx] = v
            out.append(Region(r.name, r.base, bytes(data)))
        return InputImage(tuple(out))


# ---------------------------------------------------------------- state


@dataclass(frozen=True)
class Status:
    kind: str  # running | halted | fault | fuel-exhausted
    code: int | None = None
    reason: str | None = None
    pc: tuple | None = None

    def __str__(self):
        if self.kind == "halted":
            return f"halted {self.code}"
        if self.kind == "fault":
            return f"fault {self.reason} at {self.pc[0]}:{self.pc[1]}"
        return self.kind


RUNNING = Status("running")


@dataclass
class MachineState:
    program: Program
    registers: list = field(default_factory=lambda: [0] * 8)
    pc: tuple = ("main", 0)
    memory: dict = field(default_factory=dict)
    stack: list = field(default_factory=list)
    status: Status = RUNNING
    max_stack: int = DEFAULT_MAX_STACK
    loaded: set = field(default_factory=set)

    def clone(self) -> "MachineState":
        return MachineState(
            self.program, list(self.registers), self.pc, dict(self.memory),
            copy.copy(self.stack), self.status, self.max_stack, set(self.loaded),
        )

    def read_word(self, addr: int) -> int:
        m = self.memory
        return m[addr] | m[addr + 1] << 8 | m[addr + 2] << 16 | m[addr + 3] << 24


def load_image(program: Program, inputs: InputImage, max_stack: int = DEFAULT_MAX_STACK) -> MachineState:
    mem: dict[int, int] = {}
    for i, r in enumerate(inputs.regions):
        for j, b in enumerate(r.data):
            mem[r.base + j] = b
        _put_word(mem, HEADER_BASE + 8 * i, r.base)
        _put_word(mem, HEADER_BASE + 8 * i + 4, len(r.data))
    end = HEADER_BASE + 8 * len(inputs.regions)
    _put_word(mem, end, 0)
    _put_word(mem, end + 4, 0)
    return MachineState(program, [0] * 8, program.entry(), mem, [], RUNNING, max_stack)


def _put_word(mem, addr, value):
    for k in range(4):
        mem[(addr + k) & MASK] = (value >> (8 * k)) & 0xFF


# ---------------------------------------------------------------- trace


@dataclass(frozen=True)
class BlockEvent:
    block: tuple


@dataclass(frozen=True)
class BranchEvent:
    site: tuple
    taken: bool


@dataclass
class XCallEvent:
    symbol: str
    args: tuple
    result: int | None
    via: str
    site: tuple | None = None


@dataclass(frozen=True)
class LoadEvent:
    library: str


@dataclass
class Trace:
    events: list = field(default_factory=list)

    @property
    def blocks(self) -> list:
        return [e.block for e in self.events if type(e) is BlockEvent]

    @property
    def branches(self) -> list:
        return [(e.site, e.taken) for e in self.events if type(e) is BranchEvent]

    @property
    def xcalls(self) -> list:
        return [e for e in self.events if type(e) is XCallEvent]

    @property
    def loads(self) -> list:
        return [e.library for e in self.events if type(e) is LoadEvent]

    def entered(self, block: tuple) -> bool:
        return any(type(e) is BlockEvent and e.block == block for e in self.events)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return format_trace(self) == format_trace(other)


TRACE_HEADER = "trace v1"


def format_trace(trace: Trace) -> str:
    lines = [TRACE_HEADER]
    for e in trace.events:
        t = type(e)
        if t is BlockEvent:
            lines.append(f"block {e.block[0]}:{e.block[1]}")
        elif t is BranchEvent:
            lines.append(f"branch {e.site[0]}:{e.site[1]} {int(e.taken)}")
        elif t is XCallEvent:
            args = ",".join(f"{a:08x}" for a in e.args)
            res = "?" if e.result is None else f"{e.result:08x}"
            lines.append(f"xcall {e.symbol} {args} -> {res} via {e.via}")
        else:
            lines.append(f"load {e.library}")
    return "\n".join(lines) + "\n"


class TraceFormatError(ValueError):
    pass


def _site(tok: str, lineno: int) -> tuple:
    mod, sep, idx = tok.rpartition(":")
    if not sep or not idx.isdigit():
        raise TraceFormatError(f"bad site {tok!r} (line {lineno})")
    return mod, int(idx)


def parse_trace(text: str) -> Trace:
    lines = text.split("\n")
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise TraceFormatError(f"missing '{TRACE_HEADER}' header (line 1)")
    events: list = []
    for lineno, raw in enumerate(lines[1:], 2):
        parts = raw.split()
        if not parts:
            continue
        kind = parts[0]
        try:
            if kind == "block" and len(parts) == 2:
                events.append(BlockEvent(_site(parts[1], lineno)))
            elif kind == "branch" and len(parts) == 3 and parts[2] in ("0", "1"):
                events.append(BranchEvent(_site(parts[1], lineno), parts[2] == "1"))
            elif kind == "xcall" and len(parts) == 7 and parts[3] == "->" and parts[5] == "via":
                args = tuple(int(a, 16) for a in parts[2].split(",")) if parts[2] else ()
                res = None if parts[4] == "?" else int(parts[4], 16)
                events.append(XCallEvent(parts[1], args, res, parts[6]))
            elif kind == "load" and len(parts) == 2:
                events.append(LoadEvent(parts[1]))
            else:
                raise TraceFormatError(f"malformed trace line {raw!r} (line {lineno})")
        except ValueError as exc:
            if isinstance(exc, TraceFormatError):
                raise
            raise TraceFormatError(f"malformed trace line {raw!r} (line {lineno})") from None
    return Trace(events)


# ---------------------------------------------------------------- natives


def _native_memcmp(args, read):
    a, b, n = args[0], args[1], args[2]
    for k in range(n):
        if read(a + k) != read(b + k):
            return 1
    return 0


def _native_byte_eq(args, read):
    return int(args[0] & 0xFF == args[1] & 0xFF)


# Helpers bound to xcall symbols that no linked library provides.
NATIVES: dict[str, Callable] = {
    "native.memcmp": _native_memcmp,
    "native.byte_eq": _native_byte_eq,
}


# ---------------------------------------------------------------- execution


class Fault(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def program_cfg(program: Program) -> Cfg:
    """CFG of ``program``, memoized on the program object."""
    cfg = program.__dict__.get("_cfg")
    if cfg is None:
        cfg = build_cfg(program)
        object.__setattr__(program, "_cfg", cfg)
    return cfg


def _decoded(program: Program) -> dict:
    dec = program.__dict__.get("_decoded")
    if dec is not None:
        return dec
    dec = {}
    for m in program.modules:
        rows = []
        for ins in m.instructions:
            ops = []
            for o in ins.operands:
                if isinstance(o, Reg):
                    ops.append(("r", o.n))
                elif isinstance(o, Imm):
                    ops.append(("i", o.value))
                elif isinstance(o, Mem):
                    ops.append(("m", o.base, o.offset))
                elif isinstance(o, LabelRef):
                    ops.append(("l", m.labels[o.name]))
                else:
                    ops.append(("s", o.name))
            rows.append((ins.opcode, tuple(ops)))
        dec[m.name] = rows
    object.__setattr__(program, "_decoded", dec)
    return dec


class Machine:
    """Steps a :class:`MachineState` one instruction at a time, recording a trace."""

    def __init__(self, state: MachineState, trace: Trace | None = None):
        self.state = state
        self.trace = trace if trace is not None else Trace()
        self.program = state.program
        self.cfg = program_cfg(self.program)
        self.code = _decoded(self.program)
        self.steps = 0
        self._frames: list = []  # xcall event per stack entry, or None

    def note_entry(self) -> None:
        """Record the current block if the pc sits on a block start."""
        m, i = self.state.pc
        if self.cfg.is_block_start(m, i):
            self.trace.events.append(BlockEvent((m, i)))

    def operand(self, op) -> int:
        if op[0] == "r":
            return self.state.registers[op[1]]
        return op[1]

    def address(self, op) -> int:
        return (self.state.registers[op[1]] + op[2]) & MASK

    def load(self, addr: int) -> int:
        try:
            return self.state.memory[addr]
        except KeyError:
            raise Fault(f"invalid address {addr:#x}") from None

    def store(self, addr: int, value: int) -> None:
        if addr < NULL_PAGE:
            raise Fault(f"invalid address {addr:#x}")
        self.state.memory[addr] = value & 0xFF

    def current(self):
        m, i = self.state.pc
        rows = self.code[m]
        if not 0 <= i < len(rows):
            raise Fault("pc out of range")
        return rows[i]

    def step(self) -> None:
        """Execute one instruction; sets ``state.status`` on halt or fault."""
        st = self.state
        try:
            self._step()
        except Fault as f:
            st.status = Status("fault", reason=f.reason, pc=st.pc)
            return
        self.steps += 1
        if st.status.kind == "running":
            self.note_entry()

    def _step(self) -> None:
        st = self.state
        regs = st.registers
        mod, idx = st.pc
        op, ops = self.current()
        nxt = (mod, idx + 1)

        if op is Opcode.CONST:
            regs[ops[0][1]] = ops[1][1]
        elif op is Opcode.MOV:
            regs[ops[0][1]] = regs[ops[1][1]]
        elif op in _ALU:
            a = regs[ops[1][1]]
            b = self.operand(ops[2])
            regs[ops[0][1]] = _ALU[op](a, b)
        elif op is Opcode.LOAD8:
            regs[ops[0][1]] = self.load(self.address(ops[1]))
        elif op is Opcode.LOAD32:
            a = self.address(ops[1])
            regs[ops[0][1]] = (
                self.load(a) | self.load((a + 1) & MASK) << 8
                | self.load((a + 2) & MASK) << 16 | self.load((a + 3) & MASK) << 24
            )
        elif op is Opcode.STORE8:
            self.store(self.address(ops[0]), regs[ops[1][1]])
        elif op is Opcode.STORE32:
            a = self.address(ops[0])
            v = regs[ops[1][1]]
            for k in range(4):
                self.store((a + k) & MASK, v >> (8 * k))
        elif op is Opcode.JMP:
            nxt = (mod, ops[0][1])
        elif op in BRANCHES:
            v = regs[ops[0][1]]
            taken = (v == 0) if op is Opcode.JZ else (v != 0)
            self.trace.events.append(BranchEvent((mod, idx), taken))
            if taken:
                nxt = (mod, ops[1][1])
        elif op is Opcode.CALL:
            self.push(nxt, None)
            nxt = (mod, ops[0][1])
        elif op is Opcode.RET:
            if not st.stack:
                raise Fault("return with empty call stack")
            nxt = st.stack.pop()
            ev = self._frames.pop() if self._frames else None
            if ev is not None:
                ev.result = regs[0]
        elif op is Opcode.XCALL:
            nxt = self.xcall(ops[0][1], nxt)
        elif op is Opcode.HALT:
            st.status = Status("halted", code=regs[ops[0][1]])
            return
        st.pc = nxt

    def push(self, ret: tuple, event) -> None:
        if len(self.state.stack) >= self.state.max_stack:
            raise Fault("stack overflow")
        self.state.stack.append(ret)
        self._frames.append(event)

    def xcall(self, symbol: str, ret: tuple) -> tuple:
        st = self.state
        args = tuple(st.registers[:ARG_REGS])
        entry = self.program.resolve(symbol)
        if entry is not None:
            lib = entry[0]
            ev = XCallEvent(symbol, args, None, lib, st.pc)
            self.push(ret, ev)
            self.trace.events.append(ev)
            if lib not in st.loaded:
                st.loaded.add(lib)
                self.trace.events.append(LoadEvent(lib))
            return entry
        native = NATIVES.get(symbol)
        if native is None:
            raise Fault(f"unresolved external {symbol}")
        result = native(args, lambda a: self.load(a & MASK)) & MASK
        st.registers[0] = result
        self.trace.events.append(XCallEvent(symbol, args, result, "native", st.pc))
        return ret

    def run(self, fuel: int) -> None:
        st = self.state
        while st.status.kind == "running":
            if fuel <= 0:
                st.status = Status("fuel-exhausted", pc=st.pc)
                return
            fuel -= 1
            self.step()


_ALU = {
    Opcode.ADD: lambda a, b: (a + b) & MASK,
    Opcode.SUB: lambda a, b: (a - b) & MASK,
    Opcode.MUL: lambda a, b: (a * b) & MASK,
    Opcode.AND: lambda a, b: a & b,
    Opcode.OR: lambda a, b: a | b,
    Opcode.XOR: lambda a, b: a ^ b,
    Opcode.SHL: lambda a, b: (a << (b & 31)) & MASK,
    Opcode.SHR: lambda a, b: a >> (b & 31),
    Opcode.EQ: lambda a, b: int(a == b),
    Opcode.LT: lambda a, b: int(a < b),
}


def run(state: MachineState, fuel: int = DEFAULT_FUEL) -> tuple[MachineState, Trace]:
    """Execute a copy of ``state``; the argument is left untouched."""
    m = Machine(state.clone())
    if m.state.status.kind == "running":
        m.note_entry()
        m.run(fuel)
    return m.state, m.trace


def execute(program: Program, inputs: InputImage, fuel: int = DEFAULT_FUEL) -> tuple[MachineState, Trace]:
    return run(load_image(program, inputs), fuel)


def record_replay(program: Program, inputs: InputImage, fuel: int = DEFAULT_FUEL) -> str:
    """Run concretely and serialize the trace.  Faulting runs still produce a trace."""
    _, trace = execute(program, inputs, fuel)
    return format_trace(trace)
