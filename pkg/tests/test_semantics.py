import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzyc import lang
from fuzzyc.grounding import EXHAUSTIVE, evaluate_constraint, ground
from fuzzyc.semantics import (TNORMS, ConnectiveNode, DomainError, MissingEqualityBinding, QuantifierNode,
                              SemanticsError, Slot, compile_formula, compile_spec, connective,
                              eval_connective, eval_quantifier, tnorm_name)

import oracle

# dyadic grid: every sum/product/difference below is exact in binary floating point
DYADIC = [i / 8 for i in range(9)]
GRID = [i / 10 for i in range(11)]


def test_connective_examples():
    assert eval_connective("and", [0.5, 0.4], "product") == pytest.approx(0.2, abs=1e-15)
    assert eval_connective("implies", [0.9, 0.3], "lukasiewicz") == pytest.approx(0.4, abs=1e-15)
    assert eval_connective("iff", [0.7, 0.7], "goedel") == 1.0
    assert eval_connective("iff", [0.7, 0.2], "goedel") == 0.2
    assert eval_connective("implies", [0.0, 0.0], "product") == 1.0


@pytest.mark.parametrize("tnorm", TNORMS)
@pytest.mark.parametrize("op", ["not", "and", "or", "implies", "iff"])
def test_table_against_closed_form(tnorm, op):
    for x, y in itertools.product(GRID, GRID):
        if op == "not":
            assert eval_connective("not", [x], tnorm) == 1.0 - x
            continue
        want = oracle.CONNECTIVE[op](tnorm, x, y)
        assert abs(eval_connective(op, [x, y], tnorm) - want) <= 1e-12


@pytest.mark.parametrize("tnorm", TNORMS)
def test_classical_boundary(tnorm):
    boolean = {"and": lambda a, b: a and b, "or": lambda a, b: a or b,
               "implies": lambda a, b: (not a) or b, "iff": lambda a, b: a == b}
    for a, b in itertools.product([0.0, 1.0], repeat=2):
        for op, fn in boolean.items():
            assert eval_connective(op, [a, b], tnorm) == float(fn(bool(a), bool(b)))
        assert eval_connective("not", [a], tnorm) == 1.0 - a


@pytest.mark.parametrize("tnorm", TNORMS)
def test_tnorm_axioms_on_dyadic_grid(tnorm):
    T = lambda a, b: eval_connective("and", [a, b], tnorm)  # noqa: E731
    for x in DYADIC:
        assert T(x, 1.0) == x
        assert T(x, 0.0) == 0.0
        for y in DYADIC:
            assert T(x, y) == T(y, x)
            for z in DYADIC:
                assert T(T(x, y), z) == T(x, T(y, z))
                if y <= z:
                    assert T(x, y) <= T(x, z)


@pytest.mark.parametrize("tnorm", ["lukasiewicz", "product"])
def test_de_morgan_exact(tnorm):
    for x, y in itertools.product(DYADIC, DYADIC):
        lhs = eval_connective("or", [x, y], tnorm)
        rhs = 1.0 - eval_connective("and", [1.0 - x, 1.0 - y], tnorm)
        assert lhs == rhs


def test_domain_error_and_clamping():
    with pytest.raises(DomainError):
        eval_connective("and", [1.1, 0.5], "product")
    with pytest.raises(DomainError):
        eval_connective("not", [-0.01], "goedel")
    assert eval_connective("and", [1.0 + 5e-10, 0.5], "product") == 0.5
    with pytest.raises(SemanticsError):
        eval_connective("and", [0.5], "product")
    with pytest.raises(SemanticsError):
        eval_connective("xor", [0.5, 0.5], "product")


def test_tnorm_aliases():
    assert tnorm_name("Gödel") == "goedel"
    assert tnorm_name("luk") == "lukasiewicz"
    with pytest.raises(SemanticsError):
        tnorm_name("hamacher")


def test_quantifier_examples():
    assert eval_quantifier("forall", [0.9, 0.8, 1.0], "product") == pytest.approx(0.72, abs=1e-15)
    assert eval_quantifier("exists", [0.1, 0.7, 0.3], "goedel") == 0.7
    for t in TNORMS:
        assert eval_quantifier("forall", [], t) == 1.0
        assert eval_quantifier("exists", [], t) == 0.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.sampled_from(TNORMS))
def test_quantifiers_match_closed_form(vals, tnorm):
    assert abs(eval_quantifier("forall", vals, tnorm) - oracle.forall(tnorm, vals)) <= 1e-12
    assert abs(eval_quantifier("exists", vals, tnorm) - oracle.exists(tnorm, vals)) <= 1e-12


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.sampled_from(TNORMS))
def test_forall_monotone_in_rows(vals, tnorm):
    assert eval_quantifier("forall", vals, tnorm) <= eval_quantifier("forall", vals[:-1], tnorm) + 1e-15


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.sampled_from(TNORMS))
def test_template_stays_in_unit_interval(vals, tnorm):
    f = lang.parse("forall x: (P(x) implies Q(x) iff not R(x)) or (P(x) and Q(x))")
    c = compile_formula(lang.validate(f, lang.infer_signature([f])), tnorm)
    body = replace(c, template=c.template.body)  # drop the quantifier
    out = body.evaluate_template(vals[:len(c.slots)])
    assert 0.0 <= out <= 1.0


def _sig():
    return lang.Signature(
        predicates={"S": lang.PredicateSig(1, "given"), "d": lang.PredicateSig(1),
                    "Married": lang.PredicateSig(2, "given"), "Republican": lang.PredicateSig(1)},
        functions={"g": lang.FunctionSig(("D",), "D")},
        domains={"D": lang.DomainSig((2,))},
    )


def test_compile_supervision_rule():
    c = compile_formula(lang.validate(lang.parse("forall x: S(x) implies d(x)"), _sig()), "product")
    assert [s.atom.symbol for s in c.slots] == ["S", "d"]
    assert isinstance(c.template, QuantifierNode) and c.template.aggregation == "product"
    assert c.template.body == ConnectiveNode("implies", (Slot(0), Slot(1)))
    assert [(p.variable, p.kind) for p in c.plan] == [("x", "forall")]


def test_compile_single_atom():
    c = compile_formula(lang.validate(lang.parse("forall x: d(g(x))"), _sig()), "product")
    assert c.template.body == Slot(0) and len(c.slots) == 1


def test_compile_married_rule_structure():
    f = lang.validate(lang.parse("forall x: forall y: Married(x,y) implies (Republican(x) iff Republican(y))"),
                      _sig())
    c = compile_formula(f, "product")
    assert [p.variable for p in c.plan] == ["x", "y"]
    imp = c.template.body.body
    assert imp.op == "implies" and imp.children[1].op == "iff"
    # slot values (M, Rx, Ry) reproduce min{1, min{Rx/Ry, Ry/Rx}/M}
    for m, a, b in [(1.0, 0.8, 0.4), (0.5, 0.3, 0.9), (0.0, 0.2, 0.7)]:
        inner = ConnectiveNode("implies", (Slot(0), ConnectiveNode("iff", (Slot(1), Slot(2)))))
        c.template = inner
        got = c.evaluate_template([m, a, b])
        want = min(1.0, min(a / b, b / a) / m) if m > 0 else 1.0
        assert got == pytest.approx(want, rel=1e-12)


def test_missing_equality_binding():
    f = lang.validate(lang.parse("forall x: g(x) = x"), _sig())
    with pytest.raises(MissingEqualityBinding):
        compile_formula(f, "product")
    assert compile_formula(f, "product", "pixel").equality.name == "pixel"


def test_mixed_aggregations_via_options():
    spec = lang.parse_constraints("[exists=goedel] forall x: exists y: d(x) and d(y)")[0]
    c = compile_spec(spec, _sig(), "product")
    assert [p.aggregation for p in c.plan] == ["product", "goedel"]
    assert c.tnorm == "product"


def test_per_constraint_tnorm_override():
    spec = lang.parse_constraints("[tnorm=lukasiewicz] forall x: d(x)")[0]
    assert compile_spec(spec, _sig(), "product").tnorm == "lukasiewicz"


def test_connective_works_on_arrays():
    x = np.array([0.0, 0.3, 0.9])
    y = np.array([0.0, 0.6, 0.3])
    out = connective("implies", [x, y], "product")
    np.testing.assert_allclose(out, [1.0, 1.0, 1.0 / 3.0], rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60)
def test_compiled_equals_interpreter(seed):
    rng = np.random.default_rng(seed)
    f = oracle.random_formula(rng)
    world = oracle.World(int(rng.integers(1, 7)), rng)
    typed = lang.validate(f, world.signature())
    tn, ex = (str(rng.choice(TNORMS)) for _ in range(2))
    c = compile_formula(typed, tn, world.equality(), exists=ex)
    want = world.truth(typed, {}, tn, {"forall": tn, "exists": ex})
    table = ground(c, world.domains(), EXHAUSTIVE)
    got, _ = evaluate_constraint(c, table, world.bindings(), world.domains())
    assert abs(float(got.value) - want) <= 1e-12
