"""Bytecode ISA: instructions, textual assembly, linking and basic-block CFGs.

The machine is a 32-bit register machine with eight registers ``r0``-``r7``
and byte-addressable memory.  A program is one main module plus named
library modules reached through ``xcall lib.fn``; library symbols are
resolved lazily, so a missing library is legal until the call executes.

Assembly text, one instruction per line::

    main:
      const r0, 7        ; comments start with ';'
      load8 r1, [r2+4]
      xcall str.match
      halt r0
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

NUM_REGS = 8
WORD_MASK = 0xFFFFFFFF


class Opcode(enum.Enum):
    CONST = "const"
    MOV = "mov"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    AND = "and"
    OR = "or"
    XOR = "xor"
    SHL = "shl"
    SHR = "shr"
    EQ = "eq"
    LT = "lt"
    LOAD8 = "load8"
    LOAD32 = "load32"
    STORE8 = "store8"
    STORE32 = "store32"
    JMP = "jmp"
    JZ = "jz"
    JNZ = "jnz"
    CALL = "call"
    RET = "ret"
    XCALL = "xcall"
    HALT = "halt"


ALU_OPS = frozenset(
    {Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.AND, Opcode.OR, Opcode.XOR,
     Opcode.SHL, Opcode.SHR, Opcode.EQ, Opcode.LT}
)
BRANCHES = frozenset({Opcode.JZ, Opcode.JNZ})
# instructions that end a basic block
TERMINATORS = frozenset(
    {Opcode.JMP, Opcode.JZ, Opcode.JNZ, Opcode.CALL, Opcode.RET, Opcode.XCALL, Opcode.HALT}
)


@dataclass(frozen=True)
class Reg:
    n: int

    def __str__(self):
        return f"r{self.n}"


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self):
        return str(self.value) if self.value < 0x10000 else f"{self.value:#x}"


@dataclass(frozen=True)
class LabelRef:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Sym:
    """External symbol ``lib.fn``."""

    name: str

    @property
    def library(self) -> str:
        return self.name.split(".", 1)[0]

    @property
    def function(self) -> str:
        return self.name.split(".", 1)[1]

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Mem:
    base: int
    offset: int

    def __str__(self):
        if self.offset == 0:
            return f"[r{self.base}]"
        return f"[r{self.base}+{Imm(self.offset)}]"


# operand kinds: r=register, x=register or immediate, i=immediate,
# m=memory, l=label, s=symbol
SIGNATURES: dict[Opcode, str] = {
    Opcode.CONST: "ri",
    Opcode.MOV: "rr",
    **{op: "rrx" for op in ALU_OPS},
    Opcode.LOAD8: "rm",
    Opcode.LOAD32: "rm",
    Opcode.STORE8: "mr",
    Opcode.STORE32: "mr",
    Opcode.JMP: "l",
    Opcode.JZ: "rl",
    Opcode.JNZ: "rl",
    Opcode.CALL: "l",
    Opcode.RET: "",
    Opcode.XCALL: "s",
    Opcode.HALT: "r",
}


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    operands: tuple = ()

    def __post_init__(self):
        sig = SIGNATURES[self.opcode]
        if len(sig) != len(self.operands):
            raise ValueError(f"{self.opcode.value} takes {len(sig)} operands, got {len(self.operands)}")
        for kind, op in zip(sig, self.operands):
            ok = {
                "r": isinstance(op, Reg),
                "x": isinstance(op, (Reg, Imm)),
                "i": isinstance(op, Imm),
                "m": isinstance(op, Mem),
                "l": isinstance(op, LabelRef),
                "s": isinstance(op, Sym),
            }[kind]
            if not ok:
                raise ValueError(f"{self.opcode.value}: bad operand {op!r}")
            if isinstance(op, Reg) and not 0 <= op.n < NUM_REGS:
                raise ValueError(f"register r{op.n} out of range")
            if isinstance(op, Mem) and not 0 <= op.base < NUM_REGS:
                raise ValueError(f"register r{op.base} out of range")
            if isinstance(op, (Imm,)) and not 0 <= op.value <= WORD_MASK:
                raise ValueError(f"immediate {op.value} not normalized to 32 bits")
            if isinstance(op, Mem) and not 0 <= op.offset <= WORD_MASK:
                raise ValueError(f"offset {op.offset} not normalized to 32 bits")

    @property
    def target(self) -> str | None:
        for op in self.operands:
            if isinstance(op, LabelRef):
                return op.name
        return None

    def __str__(self):
        if not self.operands:
            return self.opcode.value
        return f"{self.opcode.value} " + ", ".join(str(o) for o in self.operands)


@dataclass(frozen=True)
class ModuleImage:
    """An assembled module.  ``labels`` maps names to instruction indices."""

    name: str
    instructions: tuple
    labels: Mapping[str, int] = field(default_factory=dict)
    exports: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "labels", dict(self.labels))
        object.__setattr__(self, "exports", frozenset(self.exports))
        n = len(self.instructions)
        for name, idx in self.labels.items():
            if not 0 <= idx <= n:
                raise ValueError(f"label {name!r} index {idx} out of range")
        for ins in self.instructions:
            t = ins.target
            if t is not None and t not in self.labels:
                raise ValueError(f"undefined label {t!r} in module {self.name!r}")
        for name in self.exports:
            if name not in self.labels:
                raise ValueError(f"exported label {name!r} not defined in module {self.name!r}")

    def resolve(self, label: str) -> int:
        return self.labels[label]

    def __len__(self):
        return len(self.instructions)


# ---------------------------------------------------------------- assembler


class AsmError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


_LABEL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_SYMBOL = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*\.[A-Za-z_][A-Za-z0-9_]*$")
_REG = re.compile(r"^r(\d+)$", re.IGNORECASE)
_MEM = re.compile(r"^\[\s*(r\d+)\s*(?:([+-])\s*([^\]\s]+))?\s*\]$", re.IGNORECASE)


def _parse_int(tok: str, lineno: int) -> int:
    try:
        v = int(tok, 0)
    except ValueError:
        raise AsmError(f"bad immediate {tok!r}", lineno) from None
    if not -(1 << 31) <= v <= WORD_MASK:
        raise AsmError(f"immediate {tok} does not fit in 32 bits", lineno)
    return v & WORD_MASK


def _parse_reg(tok: str, lineno: int) -> int:
    m = _REG.match(tok)
    if not m:
        raise AsmError(f"expected register, got {tok!r}", lineno)
    n = int(m.group(1))
    if n >= NUM_REGS:
        raise AsmError(f"register {tok} out of range", lineno)
    return n


def _parse_operand(kind: str, tok: str, lineno: int):
    if kind == "r":
        return Reg(_parse_reg(tok, lineno))
    if kind == "x":
        if _REG.match(tok):
            return Reg(_parse_reg(tok, lineno))
        return Imm(_parse_int(tok, lineno))
    if kind == "i":
        return Imm(_parse_int(tok, lineno))
    if kind == "m":
        m = _MEM.match(tok)
        if not m:
            raise AsmError(f"expected memory operand [rN+imm], got {tok!r}", lineno)
        base = _parse_reg(m.group(1), lineno)
        off = _parse_int(m.group(3), lineno) if m.group(3) else 0
        if m.group(2) == "-":
            off = -off & WORD_MASK
        return Mem(base, off)
    if kind == "l":
        if not _IDENT.match(tok):
            raise AsmError(f"bad label name {tok!r}", lineno)
        return LabelRef(tok)
    if kind == "s":
        if not _SYMBOL.match(tok):
            raise AsmError(f"bad external symbol {tok!r} (expected lib.fn)", lineno)
        return Sym(tok)
    raise AssertionError(kind)


_MNEMONICS = {op.value: op for op in Opcode}


def assemble(source: str, name: str = "main") -> ModuleImage:
    """Assemble one module from text.

    Besides instructions and ``label:`` lines, ``.export <label>`` marks a
    label callable from other modules.  Errors carry 1-based line numbers.
    """
    instructions: list[Instruction] = []
    labels: dict[str, int] = {}
    exports: list[tuple[str, int]] = []
    uses: list[tuple[str, int]] = []

    for lineno, raw in enumerate(source.split("\n"), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _LABEL.match(line)
        if m:
            label = m.group(1)
            if label in labels:
                raise AsmError(f"duplicate label {label!r}", lineno)
            labels[label] = len(instructions)
            continue
        if line.startswith("."):
            parts = line.split()
            if parts[0] == ".export" and len(parts) == 2 and _IDENT.match(parts[1]):
                exports.append((parts[1], lineno))
                continue
            raise AsmError(f"bad directive {line!r}", lineno)
        parts = line.split(None, 1)
        mnemonic = parts[0].lower()
        op = _MNEMONICS.get(mnemonic)
        if op is None:
            raise AsmError(f"unknown instruction {parts[0]!r}", lineno)
        toks = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []
        sig = SIGNATURES[op]
        if len(toks) != len(sig) or any(not t for t in toks):
            raise AsmError(f"{mnemonic} expects {len(sig)} operand(s)", lineno)
        operands = tuple(_parse_operand(k, t, lineno) for k, t in zip(sig, toks))
        ins = Instruction(op, operands)
        if ins.target is not None:
            uses.append((ins.target, lineno))
        instructions.append(ins)

    for label, lineno in uses:
        if label not in labels:
            raise AsmError(f"undefined label {label!r}", lineno)
    for label, lineno in exports:
        if label not in labels:
            raise AsmError(f"exported label {label!r} is not defined", lineno)
    return ModuleImage(name, tuple(instructions), labels, frozenset(e for e, _ in exports))


def disassemble(module: ModuleImage) -> str:
    """Render a module as assembly text that re-assembles to an equal module."""
    by_index: dict[int, list[str]] = {}
    for label, idx in module.labels.items():
        by_index.setdefault(idx, []).append(label)
    lines = [f".export {e}" for e in sorted(module.exports)]
    for idx in range(len(module.instructions) + 1):
        for label in sorted(by_index.get(idx, ())):
            lines.append(f"{label}:")
        if idx < len(module.instructions):
            lines.append(f"  {module.instructions[idx]}")
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------- linking


class LinkError(ValueError):
    pass


@dataclass(frozen=True)
class Program:
    main: ModuleImage
    libraries: Mapping[str, ModuleImage] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "libraries", dict(self.libraries))

    def module(self, name: str) -> ModuleImage:
        if name == self.main.name:
            return self.main
        return self.libraries[name]

    @property
    def modules(self) -> list[ModuleImage]:
        """Main module first, then libraries in link order."""
        return [self.main, *self.libraries.values()]

    def resolve(self, symbol: str) -> tuple[str, int] | None:
        """Entry ``(module, index)`` of ``lib.fn``, or None if unresolved."""
        lib, _, fn = symbol.partition(".")
        image = self.libraries.get(lib)
        if image is None or fn not in image.exports:
            return None
        return lib, image.labels[fn]

    def symbols(self) -> list[str]:
        out = []
        for m in self.modules:
            for ins in m.instructions:
                if ins.opcode is Opcode.XCALL and ins.operands[0].name not in out:
                    out.append(ins.operands[0].name)
        return out

    @property
    def resolved(self) -> frozenset:
        return frozenset(s for s in self.symbols() if self.resolve(s) is not None)

    @property
    def unresolved(self) -> frozenset:
        return frozenset(s for s in self.symbols() if self.resolve(s) is None)

    def entry(self) -> tuple[str, int]:
        return self.main.name, self.main.labels["main"]


def link(main: ModuleImage, libs: Sequence[ModuleImage] = ()) -> Program:
    """Bind a main module to its libraries.

    Unresolvable ``xcall`` symbols are allowed; they fail (or bind to a
    native helper) only when executed.
    """
    if "main" not in main.labels:
        raise LinkError(f"main module {main.name!r} has no 'main' label")
    libraries: dict[str, ModuleImage] = {}
    for lib in libs:
        if lib.name in libraries or lib.name == main.name:
            raise LinkError(f"duplicate library name {lib.name!r}")
        libraries[lib.name] = lib
    return Program(main, libraries)


def parse_program(text: str) -> Program:
    """Parse a program file: the main module, then ``.library <name>`` sections."""
    sections: list[tuple[str, int, list[str]]] = [("main", 1, [])]
    for lineno, raw in enumerate(text.split("\n"), 1):
        stripped = raw.split(";", 1)[0].strip()
        if stripped.startswith(".library"):
            parts = stripped.split()
            if len(parts) != 2 or not _IDENT.match(parts[1]):
                raise AsmError("expected '.library <name>'", lineno)
            # pad so error line numbers refer to the whole file
            sections.append((parts[1], lineno, [""] * lineno))
            continue
        sections[-1][2].append(raw)
    main_name, _, main_lines = sections[0]
    main = assemble("\n".join(main_lines), main_name)
    libs = [assemble("\n".join(lines), name) for name, _, lines in sections[1:]]
    try:
        return link(main, libs)
    except LinkError as exc:
        raise AsmError(str(exc)) from None


def format_program(program: Program) -> str:
    parts = [disassemble(program.main)]
    for name, lib in program.libraries.items():
        parts.append(f".library {name}\n" + disassemble(lib))
    return "".join(parts)


# ---------------------------------------------------------------- CFG


@dataclass(frozen=True)
class Block:
    id: int
    module: str
    start: int
    end: int  # exclusive

    @property
    def key(self) -> tuple[str, int]:
        return self.module, self.start

    @property
    def last(self) -> int:
        return self.end - 1


FALLTHROUGH, TAKEN, CALL_EDGE, RETURN_EDGE = "fallthrough", "taken", "call", "return"


@dataclass(frozen=True)
class Cfg:
    blocks: tuple
    edges: frozenset
    _by_key: Mapping = field(default_factory=dict, repr=False, compare=False)
    _by_index: Mapping = field(default_factory=dict, repr=False, compare=False)

    def block_at(self, module: str, index: int) -> Block:
        """The block containing instruction ``index`` of ``module``."""
        return self.blocks[self._by_index[(module, index)]]

    def block_id(self, key: tuple[str, int]) -> int:
        return self._by_key[key]

    def is_block_start(self, module: str, index: int) -> bool:
        return (module, index) in self._by_key

    def successors(self, block_id: int) -> list[tuple[int, str]]:
        return sorted((d, k) for s, d, k in self.edges if s == block_id)

    def predecessors(self, block_id: int) -> list[tuple[int, str]]:
        return sorted((s, k) for s, d, k in self.edges if d == block_id)

    def has_edge(self, src: int, dst: int) -> bool:
        return any(s == src and d == dst for s, d, _ in self.edges)

    def to_dot(self) -> str:
        lines = ["digraph cfg {", "  node [shape=box];"]
        for b in self.blocks:
            lines.append(f'  b{b.id} [label="{b.module}:{b.start}-{b.end - 1}"];')
        styles = {FALLTHROUGH: "solid", TAKEN: "bold", CALL_EDGE: "dashed", RETURN_EDGE: "dotted"}
        for s, d, k in sorted(self.edges):
            lines.append(f'  b{s} -> b{d} [label="{k}", style={styles[k]}];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"blocks {len(self.blocks)}"]
        for b in self.blocks:
            lines.append(f"block {b.id} {b.module}:{b.start}-{b.end - 1}")
        lines.append(f"edges {len(self.edges)}")
        for s, d, k in sorted(self.edges):
            lines.append(f"edge {s} {d} {k}")
        return "\n".join(lines) + "\n"


def _leaders(program: Program, module: ModuleImage) -> list[int]:
    n = len(module.instructions)
    leaders = {0} if n else set()
    if module is program.main:
        leaders.add(module.labels["main"])
    leaders.update(module.labels[e] for e in module.exports)
    for i, ins in enumerate(module.instructions):
        if ins.target is not None:
            leaders.add(module.labels[ins.target])
        if ins.opcode in TERMINATORS:
            leaders.add(i + 1)
    return sorted(x for x in leaders if x < n)


def build_cfg(program: Program) -> Cfg:
    """Basic-block graph of all modules, with call and return edges.

    Blocks follow the leader algorithm: they start at entry points, branch
    targets and after every terminator.  Block ids count up by module (main,
    then libraries in link order) and start index.
    """
    blocks: list[Block] = []
    for m in program.modules:
        starts = _leaders(program, m)
        for j, s in enumerate(starts):
            end = starts[j + 1] if j + 1 < len(starts) else len(m.instructions)
            blocks.append(Block(len(blocks), m.name, s, end))
    by_key = {b.key: b.id for b in blocks}
    by_index = {(b.module, i): b.id for b in blocks for i in range(b.start, b.end)}

    edges: set = set()
    calls: list[tuple[int, int, int | None]] = []  # (caller block, callee block, return-site block)
    intra: dict[int, list[int]] = {b.id: [] for b in blocks}

    for b in blocks:
        m = program.module(b.module)
        ins = m.instructions[b.last]
        nxt = by_key.get((b.module, b.end))
        op = ins.opcode
        if op is Opcode.JMP:
            t = by_key.get((b.module, m.labels[ins.target]))
            if t is not None:
                edges.add((b.id, t, TAKEN))
                intra[b.id].append(t)
        elif op in BRANCHES:
            idx = m.labels[ins.target]
            if idx < len(m.instructions):
                t = by_key[(b.module, idx)]
                edges.add((b.id, t, TAKEN))
                intra[b.id].append(t)
            if nxt is not None:
                edges.add((b.id, nxt, FALLTHROUGH))
                intra[b.id].append(nxt)
        elif op is Opcode.CALL or op is Opcode.XCALL:
            if op is Opcode.CALL:
                idx = m.labels[ins.target]
                callee = by_key.get((b.module, idx))
            else:
                entry = program.resolve(ins.operands[0].name)
                callee = by_key.get(entry) if entry else None
            if callee is not None:
                edges.add((b.id, callee, CALL_EDGE))
                calls.append((b.id, callee, nxt))
            elif op is Opcode.XCALL and nxt is not None:
                # native helper: control continues in place
                edges.add((b.id, nxt, FALLTHROUGH))
            if nxt is not None:
                intra[b.id].append(nxt)
        elif op in (Opcode.RET, Opcode.HALT):
            pass
        elif nxt is not None:
            edges.add((b.id, nxt, FALLTHROUGH))
            intra[b.id].append(nxt)

    ret_blocks = {
        b.id for b in blocks
        if program.module(b.module).instructions[b.last].opcode is Opcode.RET
    }
    returns_of: dict[int, list[int]] = {}
    for _, callee, site in calls:
        if site is None:
            continue
        if callee not in returns_of:
            seen = {callee}
            stack = [callee]
            while stack:
                x = stack.pop()
                for y in intra[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            returns_of[callee] = sorted(seen & ret_blocks)
        for r in returns_of[callee]:
            edges.add((r, site, RETURN_EDGE))

    return Cfg(tuple(blocks), frozenset(edges), by_key, by_index)
