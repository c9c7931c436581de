import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsynth.errors import AmbiguousParse, GrammarError, SubstitutionError
from mmsynth.expr import (Grammar, SyntaxRule, apply_substitution, mknode, mkvar, preorder_symbols,
                          reachable, serialize_preorder)

from toy import TC, brute_reachable, subst, terms, to_expr, toy_grammar


def arith():
    """Equality over + and * of class terms."""
    g = Grammar()
    c = {"A": "class", "B": "class"}
    g.add(SyntaxRule("weq", "wff", ("A", "=", "B"), ("A", "B"), c))
    g.add(SyntaxRule("cpl", "class", ("(", "A", "+", "B", ")"), ("A", "B"), c))
    g.add(SyntaxRule("cmul", "class", ("(", "A", "*", "B", ")"), ("A", "B"), c))
    for d in "12":
        g.add(SyntaxRule("c" + d, "class", (d,), (), {}))
    vt = {v: "class" for v in "ABCDEF"}
    return g, vt


def test_interning_identity():
    a = mknode("f", "t", [mkvar("x", "t")])
    b = mknode("f", "t", [mkvar("x", "t")])
    assert a is b
    assert hash(a) == hash(b)
    assert mkvar("x", "t") is not mkvar("x", "s")


def test_parse_equation_root():
    g, vt = arith()
    e = g.parse("( 2 + 2 ) = ( ( 1 + 1 ) + 2 )".split(), "wff", vt)
    assert e.symbol == "weq"
    assert e.children[1].children[0].symbol == "cpl"
    assert g.render(e) == "( 2 + 2 ) = ( ( 1 + 1 ) + 2 )".split()


def test_parse_single_variable():
    g, vt = arith()
    e = g.parse(["A"], "class", vt)
    assert e.is_var and e.symbol == "A" and e.size == 1


def test_parse_failure_and_ambiguity():
    g, vt = arith()
    with pytest.raises(GrammarError):
        g.parse("( 1 + ".split(), "class", vt)
    amb = Grammar()
    amb.add(SyntaxRule("pair", "t", ("(", "A", "B", ")"), ("A", "B"), {"A": "t", "B": "t"}))
    amb.add(SyntaxRule("one", "t", ("1",), (), {}))
    amb.add(SyntaxRule("two", "t", ("1", "1"), (), {}))
    with pytest.raises(AmbiguousParse):
        amb.parse("( 1 1 1 )".split(), "t", {})


def test_substitution_worked_example():
    g, vt = arith()
    hyp = g.parse("A = B".split(), "wff", vt)
    assertion = g.parse("( A + C ) = ( B + C )".split(), "wff", vt)
    phi = {"A": g.parse(["2"], "class", vt), "B": g.parse("( 1 + 1 )".split(), "class", vt),
           "C": g.parse(["2"], "class", vt)}
    assert g.render(apply_substitution(hyp, phi)) == "2 = ( 1 + 1 )".split()
    assert g.render(apply_substitution(assertion, phi)) == "( 2 + 2 ) = ( ( 1 + 1 ) + 2 )".split()


def test_substitution_empty_and_total():
    g, vt = arith()
    e = g.parse("( 1 + 2 )".split(), "class", vt)
    assert apply_substitution(e, {}) is e
    with pytest.raises(SubstitutionError):
        apply_substitution(g.parse("A = B".split(), "wff", vt), {"A": e})
    part = apply_substitution(g.parse("A = B".split(), "wff", vt), {"A": e}, partial=True)
    assert g.render(part) == "( 1 + 2 ) = B".split()


def test_reachable_worked_example():
    g, vt = arith()
    b = g.parse("A = B".split(), "wff", vt)
    a = g.parse("( E + F ) = ( C * D )".split(), "wff", vt)
    phi = reachable(a, b)
    assert g.render(phi["A"]) == "( E + F )".split()
    assert g.render(phi["B"]) == "( C * D )".split()
    assert reachable(b, a) is None


def test_reachable_self_maps_variables_to_themselves():
    g, vt = arith()
    e = g.parse("( A + B ) = A".split(), "wff", vt)
    assert reachable(e, e) == {"A": mkvar("A", "class"), "B": mkvar("B", "class")}


def test_reachable_respects_typecodes():
    x = mkvar("x", "s")
    a = mknode("f", "t", [mkvar("y", "t")])
    b = mknode("f", "t", [x])
    assert reachable(a, b) is None


def test_reachable_exhaustive_small():
    ts = terms(5)
    es = [to_expr(t) for t in ts]
    for ta, ea in zip(ts, es):
        for tb, eb in zip(ts, es):
            got = reachable(ea, eb)
            want = brute_reachable(ta, tb)
            assert (got is None) == (want is None), (ta, tb)
            if got is not None:
                assert apply_substitution(eb, got) is ea


_TERMS = terms(7)


@given(st.sampled_from(_TERMS), st.sampled_from(_TERMS), st.sampled_from(_TERMS))
@settings(max_examples=300, deadline=None)
def test_reachable_finds_instances(b, s1, s2):
    a = subst(b, {"x": s1, "y": s2})
    phi = reachable(to_expr(a), to_expr(b))
    assert phi is not None
    assert apply_substitution(to_expr(b), phi) is to_expr(a)


def test_serialize_worked_example():
    g, vt = arith()
    e = g.parse("( 1 + 1 ) = 2".split(), "wff", vt)
    ser = serialize_preorder(e)
    assert [s.symbol for s in ser] == ["weq", "cpl", "c1", "c1", "c2"]
    assert [s.depth for s in ser] == [0, 1, 2, 2, 1]
    assert [s.degree for s in ser] == [2, 2, 0, 0, 0]
    assert [s.child_index for s in ser] == [0, 0, 0, 1, 1]
    leaf = serialize_preorder(mkvar("x", "t"))
    assert len(leaf) == 1 and leaf[0].depth == 0 and leaf[0].degree == 0


@given(st.sampled_from(_TERMS))
@settings(max_examples=200, deadline=None)
def test_serialize_roundtrip(t):
    g = toy_grammar()
    e = to_expr(t)
    assert g.deserialize(serialize_preorder(e), {"x": TC, "y": TC}) is e
    assert g.parse(g.render(e), TC, {"x": TC, "y": TC}) is e


def test_corpus_parse_render_roundtrip(mini):
    n = 0
    for f in mini.frames.values():
        for e in (f.assertion, *f.hypotheses):
            toks = mini.grammar.render(e)
            tc = mini.provable_syntax if f.typecode == mini.provable_typecode else f.typecode
            assert mini.parse_expr(toks, tc) is e
            assert mini.grammar.deserialize(preorder_symbols(e), mini.float_types) is e
            n += 1
    assert n > 60
