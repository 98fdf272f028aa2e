"""Symbolic bitvector expressions over input bytes, and path conditions.

Every symbolic input byte is a :class:`Var` naming an input region and an
offset into it.  Wider values are built with :class:`Concat`; comparison
results flow back into arithmetic through :class:`BoolToBv`.  Expressions
are immutable and compare structurally.

A :class:`PathCondition` is the ordered conjunction of constraints
collected along one concrete path.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Union

WIDTHS = (1, 8, 16, 32)

BINOPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "shr")
CMPOPS = ("eq", "ne", "ult", "ule")


class WidthError(ValueError):
    """An expression node was built with incompatible widths."""


class MissingVariable(KeyError):
    pass


def _mask(width: int) -> int:
    return (1 << width) - 1


def _check_width(width: int) -> None:
    if width not in WIDTHS:
        raise WidthError(f"unsupported width {width}")


class Expr:
    """Base class of bitvector-valued nodes."""

    width: int
    __slots__ = ()


class BoolExpr:
    """Base class of boolean-valued nodes."""

    __slots__ = ()


def _cache_hash(obj, *parts) -> None:
    object.__setattr__(obj, "_hash", hash((type(obj).__name__,) + parts))


@dataclass(frozen=True, eq=True)
class Const(Expr):
    width: int
    value: int
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_width(self.width)
        if not 0 <= self.value <= _mask(self.width):
            raise WidthError(f"constant {self.value:#x} does not fit in {self.width} bits")
        _cache_hash(self, self.width, self.value)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Var(Expr):
    """One unknown input byte: ``region[index]``."""

    region: str
    index: int
    width: int = field(init=False, default=8)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("variable index must be non-negative")
        _cache_hash(self, self.region, self.index)

    def __hash__(self):
        return self._hash

    def __lt__(self, other: "Var") -> bool:
        return (self.region, self.index) < (other.region, other.index)


@dataclass(frozen=True, eq=True)
class Unop(Expr):
    op: str
    arg: Expr
    width: int = field(init=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op != "not":
            raise ValueError(f"unknown unary operator {self.op!r}")
        object.__setattr__(self, "width", self.arg.width)
        _cache_hash(self, self.op, self.arg)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Binop(Expr):
    op: str
    lhs: Expr
    rhs: Expr
    width: int = field(init=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in BINOPS:
            raise ValueError(f"unknown binary operator {self.op!r}")
        if self.lhs.width != self.rhs.width:
            raise WidthError(f"{self.op}: operand widths {self.lhs.width} and {self.rhs.width} differ")
        object.__setattr__(self, "width", self.lhs.width)
        _cache_hash(self, self.op, self.lhs, self.rhs)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Extract(Expr):
    """Bits ``[lo, lo + width)`` of ``arg``."""

    lo: int
    width: int
    arg: Expr
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_width(self.width)
        if self.lo < 0 or self.lo + self.width > self.arg.width:
            raise WidthError(f"extract [{self.lo}, {self.lo + self.width}) out of {self.arg.width}-bit operand")
        _cache_hash(self, self.lo, self.width, self.arg)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Concat(Expr):
    hi: Expr
    lo: Expr
    width: int = field(init=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = self.hi.width + self.lo.width
        _check_width(w)
        object.__setattr__(self, "width", w)
        _cache_hash(self, self.hi, self.lo)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class BoolToBv(Expr):
    """1 if ``cond`` holds, else 0, at the given width."""

    cond: BoolExpr
    width: int
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_width(self.width)
        _cache_hash(self, self.cond, self.width)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Literal(BoolExpr):
    value: bool

    def __hash__(self):
        return hash(("Literal", self.value))


TRUE = Literal(True)
FALSE = Literal(False)


@dataclass(frozen=True, eq=True)
class Cmp(BoolExpr):
    op: str
    lhs: Expr
    rhs: Expr
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.op not in CMPOPS:
            raise ValueError(f"unknown comparison {self.op!r}")
        if self.lhs.width != self.rhs.width:
            raise WidthError(f"{self.op}: operand widths {self.lhs.width} and {self.rhs.width} differ")
        _cache_hash(self, self.op, self.lhs, self.rhs)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Not(BoolExpr):
    arg: BoolExpr
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _cache_hash(self, self.arg)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class And(BoolExpr):
    args: tuple
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        _cache_hash(self, self.args)

    def __hash__(self):
        return self._hash


@dataclass(frozen=True, eq=True)
class Or(BoolExpr):
    args: tuple
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        _cache_hash(self, self.args)

    def __hash__(self):
        return self._hash


AnyExpr = Union[Expr, BoolExpr]
Assignment = Mapping[Var, int]


def zext(e: Expr, width: int) -> Expr:
    """Zero-extend ``e`` to ``width`` bits by doubling steps."""
    while e.width < width:
        pad = e.width if e.width >= 8 else None
        if pad is None:
            raise WidthError(f"cannot zero-extend a {e.width}-bit value")
        e = Concat(Const(pad, 0), e)
    if e.width != width:
        raise WidthError(f"cannot zero-extend {e.width} bits to {width}")
    return e


# ---------------------------------------------------------------- evaluation


def eval_expr(e: AnyExpr, assignment: Assignment):
    """Evaluate ``e`` under ``assignment``.

    Bitvector nodes give an ``int`` reduced modulo their width; boolean nodes
    give a ``bool``.  Raises :class:`MissingVariable` if a variable is absent.
    """
    return _Evaluator(assignment).run(e)


class _Evaluator:
    def __init__(self, assignment: Assignment):
        self.a = assignment
        self.memo: dict = {}

    def run(self, e):
        key = id(e)
        hit = self.memo.get(key)
        if hit is not None and hit[0] is e:
            return hit[1]
        v = self._eval(e)
        self.memo[key] = (e, v)
        return v

    def _eval(self, e):
        t = type(e)
        if t is Const:
            return e.value
        if t is Var:
            try:
                v = self.a[e]
            except KeyError:
                raise MissingVariable(f"no value for {e.region}[{e.index}]") from None
            return v & 0xFF
        if t is Binop:
            return _binop_value(e.op, self.run(e.lhs), self.run(e.rhs), e.width)
        if t is Unop:
            return ~self.run(e.arg) & _mask(e.width)
        if t is Extract:
            return (self.run(e.arg) >> e.lo) & _mask(e.width)
        if t is Concat:
            return (self.run(e.hi) << e.lo.width) | self.run(e.lo)
        if t is BoolToBv:
            return 1 if self.run(e.cond) else 0
        if t is Cmp:
            return _cmp_value(e.op, self.run(e.lhs), self.run(e.rhs))
        if t is Not:
            return not self.run(e.arg)
        if t is And:
            return all(self.run(x) for x in e.args)
        if t is Or:
            return any(self.run(x) for x in e.args)
        if t is Literal:
            return e.value
        raise TypeError(f"not an expression: {e!r}")


def _binop_value(op: str, a: int, b: int, width: int) -> int:
    m = _mask(width)
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return (a << (b & 31)) & m
    if op == "shr":
        return a >> (b & 31)
    raise ValueError(op)


def _cmp_value(op: str, a: int, b: int) -> bool:
    if op == "eq":
        return a == b
    if op == "ne":
        return a != b
    if op == "ult":
        return a < b
    return a <= b


# ---------------------------------------------------------------- variables


def free_vars(e: AnyExpr) -> frozenset:
    out: set = set()
    seen: set = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        t = type(n)
        if t is Var:
            out.add(n)
        elif t in (Binop, Cmp):
            stack.append(n.lhs)
            stack.append(n.rhs)
        elif t in (Unop, Extract, Not):
            stack.append(n.arg)
        elif t is Concat:
            stack.append(n.hi)
            stack.append(n.lo)
        elif t is BoolToBv:
            stack.append(n.cond)
        elif t in (And, Or):
            stack.extend(n.args)
    return frozenset(out)


# ---------------------------------------------------------------- simplifier


def simplify(e: AnyExpr) -> AnyExpr:
    """Rewrite ``e`` into an equivalent, usually smaller, expression.

    Folds constants and applies identity rules (``x ^ x = 0``, ``x & 0 = 0``,
    ``x | 0 = x``, extraction through concatenation, comparisons of
    zero-extended values, and so on).  Semantics are preserved for every
    assignment.
    """
    return _Simplifier().run(e)


class _Simplifier:
    def __init__(self):
        self.memo: dict = {}

    def run(self, e):
        hit = self.memo.get(e)
        if hit is not None:
            return hit
        out = self._simp(e)
        self.memo[e] = out
        return out

    def _simp(self, e):
        t = type(e)
        if t in (Const, Var, Literal):
            return e
        if t is Unop:
            return self.unop(self.run(e.arg))
        if t is Binop:
            return self.binop(e.op, self.run(e.lhs), self.run(e.rhs))
        if t is Extract:
            return self.extract(e.lo, e.width, self.run(e.arg))
        if t is Concat:
            return self.concat(self.run(e.hi), self.run(e.lo))
        if t is BoolToBv:
            c = self.run(e.cond)
            if type(c) is Literal:
                return Const(e.width, int(c.value))
            return BoolToBv(c, e.width)
        if t is Cmp:
            return self.cmp(e.op, self.run(e.lhs), self.run(e.rhs))
        if t is Not:
            return self.negate(self.run(e.arg))
        if t is And:
            return self.conj([self.run(x) for x in e.args])
        if t is Or:
            return self.disj([self.run(x) for x in e.args])
        raise TypeError(f"not an expression: {e!r}")

    # bitvector rules

    def unop(self, a):
        if type(a) is Const:
            return Const(a.width, ~a.value & _mask(a.width))
        if type(a) is Unop:
            return a.arg
        return Unop("not", a)

    def binop(self, op, a, b):
        w = a.width
        m = _mask(w)
        ca = type(a) is Const
        cb = type(b) is Const
        if ca and cb:
            return Const(w, _binop_value(op, a.value, b.value, w))
        if op in ("add", "mul", "and", "or", "xor") and ca:
            a, b, ca, cb = b, a, cb, ca
        if op == "xor":
            if a == b:
                return Const(w, 0)
            if cb and b.value == 0:
                return a
        elif op == "and":
            if a == b:
                return a
            if cb and b.value == 0:
                return b
            if cb and b.value == m:
                return a
        elif op == "or":
            if a == b:
                return a
            if cb and b.value == 0:
                return a
            if cb and b.value == m:
                return b
        elif op == "add":
            if cb and b.value == 0:
                return a
        elif op == "sub":
            if a == b:
                return Const(w, 0)
            if cb and b.value == 0:
                return a
        elif op == "mul":
            if cb and b.value == 0:
                return b
            if cb and b.value == 1:
                return a
        elif op in ("shl", "shr"):
            if cb and b.value & 31 == 0:
                return a
            if cb and b.value & 31 >= w:
                return Const(w, 0)
            if ca and a.value == 0:
                return a
        # bitwise ops with a constant distribute over concatenation
        if op in ("and", "or", "xor") and cb and type(a) is Concat:
            lw = a.lo.width
            hi = self.binop(op, a.hi, Const(a.hi.width, b.value >> lw))
            lo = self.binop(op, a.lo, Const(lw, b.value & _mask(lw)))
            return self.concat(hi, lo)
        return Binop(op, a, b)

    def extract(self, lo, width, a):
        if lo == 0 and width == a.width:
            return a
        t = type(a)
        if t is Const:
            return Const(width, (a.value >> lo) & _mask(width))
        if t is Extract:
            return self.extract(a.lo + lo, width, a.arg)
        if t is Concat:
            lw = a.lo.width
            if lo + width <= lw:
                return self.extract(lo, width, a.lo)
            if lo >= lw:
                return self.extract(lo - lw, width, a.hi)
        if t is BoolToBv:
            if lo == 0:
                return BoolToBv(a.cond, width)
            return Const(width, 0)
        if t in (Binop,) and a.op in ("and", "or", "xor"):
            return self.binop(a.op, self.extract(lo, width, a.lhs), self.extract(lo, width, a.rhs))
        if t in (Binop,) and a.op in ("add", "sub", "mul") and lo == 0:
            # low bits of ring operations depend only on low bits of operands
            return self.binop(a.op, self.extract(0, width, a.lhs), self.extract(0, width, a.rhs))
        return Extract(lo, width, a)

    def concat(self, hi, lo):
        if type(hi) is Const and type(lo) is Const:
            return Const(hi.width + lo.width, (hi.value << lo.width) | lo.value)
        if (
            type(hi) is Extract
            and type(lo) is Extract
            and hi.arg == lo.arg
            and hi.lo == lo.lo + lo.width
            and hi.width + lo.width in WIDTHS
        ):
            return self.extract(lo.lo, hi.width + lo.width, lo.arg)
        return Concat(hi, lo)

    # boolean rules

    def cmp(self, op, a, b):
        if type(a) is Const and type(b) is Const:
            return Literal(_cmp_value(op, a.value, b.value))
        if a == b:
            return Literal(op in ("eq", "ule"))
        if op in ("eq", "ne"):
            if type(a) is Const:
                a, b = b, a
            if type(b) is Const:
                return self.eq_const(op == "eq", a, b)
            return Cmp(op, a, b)
        if op == "ult":
            if type(b) is Const and b.value == 0:
                return FALSE
            if type(a) is Const and a.value == _mask(a.width):
                return FALSE
        if op == "ule":
            if type(a) is Const and a.value == 0:
                return TRUE
            if type(b) is Const and b.value == _mask(b.width):
                return TRUE
        if type(a) is Concat and type(b) is Const and type(a.hi) is Const:
            lw = a.lo.width
            bh, bl = b.value >> lw, b.value & _mask(lw)
            if a.hi.value != bh:
                return Literal(a.hi.value < bh)
            return self.cmp(op, a.lo, Const(lw, bl))
        if type(b) is Concat and type(a) is Const and type(b.hi) is Const:
            lw = b.lo.width
            ah, al = a.value >> lw, a.value & _mask(lw)
            if b.hi.value != ah:
                return Literal(ah < b.hi.value)
            return self.cmp(op, Const(lw, al), b.lo)
        return Cmp(op, a, b)

    def eq_const(self, positive, a, c):
        """Simplify ``a == c`` (or ``a != c`` when not ``positive``)."""
        t = type(a)
        if t is BoolToBv:
            if c.value == 0:
                return a.cond if not positive else self.negate(a.cond)
            if c.value == 1:
                return a.cond if positive else self.negate(a.cond)
            return Literal(not positive)
        if t is Concat:
            lw = a.lo.width
            parts = [
                self.eq_const(positive, a.hi, Const(a.hi.width, c.value >> lw)),
                self.eq_const(positive, a.lo, Const(lw, c.value & _mask(lw))),
            ]
            return self.conj(parts) if positive else self.disj(parts)
        if t is Binop and type(a.rhs) is Const:
            if a.op == "xor":
                return self.eq_const(positive, a.lhs, Const(c.width, c.value ^ a.rhs.value))
            if a.op == "add":
                return self.eq_const(positive, a.lhs, Const(c.width, (c.value - a.rhs.value) & _mask(c.width)))
            if a.op == "sub":
                return self.eq_const(positive, a.lhs, Const(c.width, (c.value + a.rhs.value) & _mask(c.width)))
        if t is Unop:
            return self.eq_const(positive, a.arg, Const(c.width, ~c.value & _mask(c.width)))
        return Cmp("eq" if positive else "ne", a, c)

    def negate(self, b):
        t = type(b)
        if t is Literal:
            return Literal(not b.value)
        if t is Not:
            return b.arg
        if t is Cmp:
            if b.op == "eq":
                return Cmp("ne", b.lhs, b.rhs)
            if b.op == "ne":
                return Cmp("eq", b.lhs, b.rhs)
            if b.op == "ult":
                return Cmp("ule", b.rhs, b.lhs)
            return Cmp("ult", b.rhs, b.lhs)
        if t is And:
            return self.disj([self.negate(x) for x in b.args])
        if t is Or:
            return self.conj([self.negate(x) for x in b.args])
        return Not(b)

    def _junction(self, args, cls, unit, zero):
        out = []
        seen = set()
        for x in args:
            if type(x) is cls:
                items = x.args
            else:
                items = (x,)
            for y in items:
                if type(y) is Literal:
                    if y.value == zero:
                        return Literal(zero)
                    continue
                if y in seen:
                    continue
                seen.add(y)
                out.append(y)
        if not out:
            return Literal(unit)
        if len(out) == 1:
            return out[0]
        return cls(tuple(out))

    def conj(self, args):
        return self._junction(args, And, True, False)

    def disj(self, args):
        return self._junction(args, Or, False, True)


def negate(b: BoolExpr) -> BoolExpr:
    """Logical negation, pushed inward where it is free to do so."""
    return _Simplifier().negate(b)


# ---------------------------------------------------------------- path conditions


@dataclass(frozen=True)
class Constraint:
    """One conjunct of a path condition.

    ``site`` is the ``(module, index)`` of the instruction that produced it.
    ``branch`` is false for address-pinning constraints, which record a
    concretized symbolic address rather than a branch decision.
    """

    cond: BoolExpr
    site: tuple
    taken: bool
    branch: bool = True


class PathCondition(tuple):
    """Ordered conjunction of :class:`Constraint` entries."""

    def __new__(cls, items: Iterable[Constraint] = ()):
        return super().__new__(cls, tuple(items))

    @property
    def conditions(self) -> list:
        return [c.cond for c in self]

    def free_vars(self) -> frozenset:
        out: set = set()
        for c in self:
            out |= free_vars(c.cond)
        return frozenset(out)

    def holds(self, assignment: Assignment) -> bool:
        return all(eval_expr(c.cond, assignment) for c in self)

    def branches(self) -> list:
        """Indices of the entries that came from conditional branches."""
        return [i for i, c in enumerate(self) if c.branch]

    def __add__(self, other):
        return PathCondition(tuple(self) + tuple(other))

    def __getitem__(self, k):
        r = super().__getitem__(k)
        if isinstance(k, slice):
            return PathCondition(r)
        return r

    def __repr__(self):
        return f"PathCondition({list(self)!r})"


# ---------------------------------------------------------------- text format

_BINOP_NAMES = {op: "bv" + op for op in BINOPS}
_BINOP_BY_NAME = {v: k for k, v in _BINOP_NAMES.items()}
_CMP_NAMES = {"eq": "=", "ne": "!=", "ult": "ult", "ule": "ule"}
_CMP_BY_NAME = {v: k for k, v in _CMP_NAMES.items()}


def to_text(e: AnyExpr) -> str:
    """Render ``e`` as prefix s-expression text, e.g. ``(= (var file 0) (const 8 0x41))``."""
    t = type(e)
    if t is Const:
        return f"(const {e.width} {e.value:#x})"
    if t is Var:
        return f"(var {e.region} {e.index})"
    if t is Unop:
        return f"(bvnot {to_text(e.arg)})"
    if t is Binop:
        return f"({_BINOP_NAMES[e.op]} {to_text(e.lhs)} {to_text(e.rhs)})"
    if t is Extract:
        return f"(extract {e.lo} {e.width} {to_text(e.arg)})"
    if t is Concat:
        return f"(concat {to_text(e.hi)} {to_text(e.lo)})"
    if t is BoolToBv:
        return f"(bool2bv {e.width} {to_text(e.cond)})"
    if t is Literal:
        return "true" if e.value else "false"
    if t is Cmp:
        return f"({_CMP_NAMES[e.op]} {to_text(e.lhs)} {to_text(e.rhs)})"
    if t is Not:
        return f"(not {to_text(e.arg)})"
    if t in (And, Or):
        name = "and" if t is And else "or"
        return f"({name} {' '.join(to_text(x) for x in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


class ConstraintSyntaxError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")


def _tokens(text: str) -> Iterator[str]:
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                return
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r}")
        pos = m.end()
        tok = m.group(1) or m.group(2) or m.group(3)
        if tok:
            yield tok


def _int(tok: str) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ConstraintSyntaxError(f"expected integer, got {tok!r}") from None


def parse_expr(text: str) -> AnyExpr:
    """Parse one expression written in the prefix text format."""
    toks = list(_tokens(text))
    if not toks:
        raise ConstraintSyntaxError("empty expression")
    pos, e = _parse(toks, 0)
    if pos != len(toks):
        raise ConstraintSyntaxError(f"trailing tokens after expression: {' '.join(toks[pos:])}")
    return e


def _parse(toks, pos):
    if pos >= len(toks):
        raise ConstraintSyntaxError("unexpected end of expression")
    tok = toks[pos]
    if tok == "true":
        return pos + 1, TRUE
    if tok == "false":
        return pos + 1, FALSE
    if tok != "(":
        raise ConstraintSyntaxError(f"unexpected token {tok!r}")
    if pos + 1 >= len(toks):
        raise ConstraintSyntaxError("unexpected end of expression")
    head = toks[pos + 1]
    pos += 2

    def sub():
        nonlocal pos
        pos, x = _parse(toks, pos)
        return x

    def atom():
        nonlocal pos
        if pos >= len(toks) or toks[pos] in "()":
            raise ConstraintSyntaxError(f"{head}: expected atom")
        pos += 1
        return toks[pos - 1]

    try:
        if head == "const":
            w = _int(atom())
            e = Const(w, _int(atom()))
        elif head == "var":
            region = atom()
            e = Var(region, _int(atom()))
        elif head == "bvnot":
            e = Unop("not", sub())
        elif head in _BINOP_BY_NAME:
            a = sub()
            e = Binop(_BINOP_BY_NAME[head], a, sub())
        elif head == "extract":
            lo = _int(atom())
            w = _int(atom())
            e = Extract(lo, w, sub())
        elif head == "concat":
            h = sub()
            e = Concat(h, sub())
        elif head == "bool2bv":
            w = _int(atom())
            e = BoolToBv(sub(), w)
        elif head in _CMP_BY_NAME:
            a = sub()
            e = Cmp(_CMP_BY_NAME[head], a, sub())
        elif head == "not":
            e = Not(sub())
        elif head in ("and", "or"):
            args = []
            while pos < len(toks) and toks[pos] != ")":
                args.append(sub())
            e = (And if head == "and" else Or)(tuple(args))
        else:
            raise ConstraintSyntaxError(f"unknown operator {head!r}")
    except (WidthError, ValueError) as exc:
        if isinstance(exc, ConstraintSyntaxError):
            raise
        raise ConstraintSyntaxError(str(exc)) from None
    if pos >= len(toks) or toks[pos] != ")":
        raise ConstraintSyntaxError(f"{head}: expected ')'")
    return pos + 1, e


def parse_constraints(text: str) -> PathCondition:
    """Parse one boolean constraint per line; ``;`` starts a comment."""
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        try:
            e = parse_expr(line)
        except ConstraintSyntaxError as exc:
            raise ConstraintSyntaxError(str(exc).split(" (line")[0], lineno) from None
        if not isinstance(e, BoolExpr):
            raise ConstraintSyntaxError("constraint must be boolean", lineno)
        items.append(Constraint(e, ("input", lineno), True))
    return PathCondition(items)


def format_constraints(pc: PathCondition, with_sites: bool = False) -> str:
    lines = []
    for c in pc:
        if with_sites:
            kind = "branch" if c.branch else "pin"
            lines.append(f"; {kind} {c.site[0]}:{c.site[1]} taken={int(c.taken)}")
        lines.append(to_text(c.cond))
    return "".join(line + "\n" for line in lines)
