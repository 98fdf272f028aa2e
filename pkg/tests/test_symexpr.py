from __future__ import annotations

import random

import numpy as np
import pytest

from sigconcolic.symexpr import (
    FALSE, TRUE, And, Binop, BoolToBv, Cmp, Concat, Const, ConstraintSyntaxError, Extract, Literal,
    MissingVariable, Not, Or, Unop, Var, WidthError, eval_expr, format_constraints, free_vars,
    negate, parse_constraints, parse_expr, simplify, to_text, zext,
)
from tests.exprgen import WIDTHS, np_eval, random_bool, random_expr, random_path

F0, F1, F2 = Var("f", 0), Var("f", 1), Var("f", 2)


def test_simplify_identities():
    assert simplify(Binop("xor", F0, F0)) == Const(8, 0)
    assert simplify(Cmp("eq", Const(8, 0x41), Const(8, 0x41))) == TRUE
    assert simplify(Binop("and", F0, Const(8, 0))) == Const(8, 0)
    assert simplify(Binop("or", F0, Const(8, 0))) == F0
    assert simplify(Extract(8, 8, Const(16, 0x1234))) == Const(8, 0x12)
    assert simplify(Cmp("ne", Const(8, 1), Const(8, 1))) == FALSE


def test_eval_examples():
    assert eval_expr(Binop("add", Const(8, 0xFF), Const(8, 1)), {}) == 0
    assert eval_expr(F2, {F2: 0x43}) == 0x43
    c = Concat(Const(8, 0x12), Const(8, 0x34))
    assert c.width == 16 and eval_expr(c, {}) == 0x1234
    assert eval_expr(Binop("shl", Const(32, 1), Const(32, 33)), {}) == 2  # amount masked to 31
    with pytest.raises(MissingVariable):
        eval_expr(F0, {})


def test_free_vars_examples():
    assert free_vars(Const(8, 5)) == frozenset()
    assert free_vars(Cmp("eq", F0, Const(8, 0x41))) == {F0}


@pytest.mark.parametrize("build", [
    lambda: Binop("add", F0, Const(16, 1)),
    lambda: Cmp("eq", F0, Const(32, 1)),
    lambda: Const(8, 256),
    lambda: Const(24, 0),
    lambda: Extract(4, 8, F0),
    lambda: Concat(Const(32, 0), F0),
    lambda: Concat(Const(16, 0), F0),
])
def test_width_discipline(build):
    with pytest.raises(WidthError):
        build()


def test_var_width_is_8_and_zext():
    assert F0.width == 8
    for w in (8, 16, 32):
        z = zext(F0, w)
        assert z.width == w and eval_expr(z, {F0: 0xAB}) == 0xAB


def test_structural_equality_and_hash():
    a = Binop("add", Var("f", 0), Const(8, 1))
    b = Binop("add", Var("f", 0), Const(8, 1))
    assert a == b and hash(a) == hash(b) and len({a, b}) == 1


# ---------------------------------------------------------------- soundness


def test_simplify_sound_on_random_expressions():
    rng = random.Random(2024)
    vs = [F0, F1, F2]
    n = 0
    for i in range(10_000):
        if i % 2:
            e = random_bool(rng, vs, 3)
        else:
            e = random_expr(rng, rng.choice(WIDTHS), vs, 4)
        s = simplify(e)
        assert free_vars(s) <= free_vars(e)
        for _ in range(2):
            a = {v: rng.randrange(256) for v in vs}
            assert eval_expr(s, a) == eval_expr(e, a), (to_text(e), to_text(s), a)
        n += 1
    assert n >= 10_000


def test_eval_agrees_with_numpy_oracle():
    rng = random.Random(99)
    vs = [F0, F1]
    for _ in range(500):
        e = random_expr(rng, rng.choice(WIDTHS), vs, 3)
        a = {v: rng.randrange(256) for v in vs}
        assert eval_expr(e, a) == int(np_eval(e, {v: np.uint64(x) for v, x in a.items()}))


def test_negate_is_complement():
    rng = random.Random(5)
    vs = [F0, F1]
    for _ in range(2000):
        b = random_bool(rng, vs, 3)
        nb = negate(b)
        a = {v: rng.randrange(256) for v in vs}
        assert eval_expr(nb, a) == (not eval_expr(b, a))


# ---------------------------------------------------------------- text format


def test_text_example():
    e = Cmp("eq", Var("file", 0), Const(8, 0x41))
    assert to_text(e) == "(= (var file 0) (const 8 0x41))"
    assert parse_expr("(= (var file 0) (const 8 0x41))") == e


def test_text_round_trip_random():
    rng = random.Random(11)
    for _ in range(2000):
        e = random_bool(rng, [F0, F1, F2], 3)
        assert parse_expr(to_text(e)) == e
    for node in (Literal(True), Not(Cmp("ult", F0, F1)), And((TRUE, FALSE)), Or(()),
                 BoolToBv(TRUE, 32), Unop("not", F0)):
        assert parse_expr(to_text(node)) == node


def test_constraints_file_round_trip():
    pc = random_path(random.Random(1), 3, 6)
    text = format_constraints(pc, with_sites=True)
    back = parse_constraints(text)
    assert [c.cond for c in back] == [c.cond for c in pc]


@pytest.mark.parametrize("text, line", [
    ("(= (var f 0) (const 8 0x41))\n(= (var f 0)", 2),
    ("; comment\n(bvadd (var f 0) (const 8 1))", 2),
    ("(frob 1 2)", 1),
    ("(= (var f 0) (const 16 1))", 1),
    ("(const 8 zz)", 1),
])
def test_constraint_syntax_errors(text, line):
    with pytest.raises(ConstraintSyntaxError) as exc:
        parse_constraints(text)
    assert exc.value.line == line
