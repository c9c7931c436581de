import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsynth.expr import Grammar, SyntaxRule
from mmsynth.ngram import ConstrainedDecoder, NGramModel, fit_on_frames, start_marker


def toy_model():
    return NGramModel(2, (0.1, 0.3, 0.6)).fit([["<t>", "a", "b"], ["<t>", "a", "a"]])


def test_hand_computed_probabilities():
    m = toy_model()
    # unigram counts a:3 b:1, bigram after "a": a:1 b:1
    assert m.prob(["<t>", "a"], "a", ["a", "b"]) == pytest.approx(0.575)
    assert m.prob(["<t>", "a"], "b", ["a", "b"]) == pytest.approx(0.425)
    # an unseen symbol only gets the floor share
    assert m.prob(["<t>", "a"], "b", ["b", "c"]) == pytest.approx(0.425 / 0.475)
    assert m.prob(["<t>", "a"], "c", ["b", "c"]) == pytest.approx(0.05 / 0.475)
    assert m.prob(["<t>", "a"], "z", ["b", "c"]) == 0.0


def test_bad_model_arguments():
    with pytest.raises(ValueError):
        NGramModel(0)
    with pytest.raises(ValueError):
        NGramModel(3, (0.5, 0.5))


@pytest.fixture(scope="module")
def decoder(mini):
    model = fit_on_frames(mini.axioms + mini.theorems, 3)
    return ConstrainedDecoder(mini.grammar, model, mini.float_types, max_tokens=24)


def _symbols(mini):
    return sorted(set(mini.grammar.rules) | set(mini.float_types)) + ["<class>", "<wff>"]


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_distribution_normalized(mini, decoder, data):
    syms = _symbols(mini)
    hist = data.draw(st.lists(st.sampled_from(syms), max_size=4))
    allowed = data.draw(st.lists(st.sampled_from(syms), min_size=1, max_size=10, unique=True))
    d = decoder.model.distribution(hist, allowed)
    assert sum(d.prob(w) for w in allowed) == pytest.approx(1.0)
    assert all(d.prob(w) > 0.0 for w in allowed)


@pytest.mark.parametrize("tc", ["class", "wff"])
@pytest.mark.parametrize("beam", [1, 3, 8])
def test_beam_outputs_parse_and_are_ranked(mini, decoder, tc, beam):
    out = decoder.beam_search(tc, beam)
    assert 1 <= len(out) <= beam
    assert len({e for e, _ in out}) == len(out)
    lps = [lp for _, lp in out]
    assert lps == sorted(lps, reverse=True)
    for e, lp in out:
        assert e.typecode == tc and lp <= 0.0
        assert e.size <= decoder.max_tokens
        assert mini.parse_expr(mini.grammar.render(e), tc) is e


def test_beam_one_picks_most_frequent_unigram():
    g = Grammar()
    for d in "012":
        g.add(SyntaxRule("c" + d, "class", (d,), (), {}))
    seqs = [["<class>", "c0"]] * 5 + [["<class>", "c1"]] * 2 + [["<class>", "c2"]]
    dec = ConstrainedDecoder(g, NGramModel(1, (0.1, 0.9)).fit(seqs), {})
    (e, lp), = dec.beam_search("class", 1)
    assert e.symbol == "c0"
    assert lp == pytest.approx(math.log(0.1 / 3 + 0.9 * 5 / 8))


def test_single_production_typecode():
    g = Grammar()
    g.add(SyntaxRule("uu", "u", ("*",), (), {}))
    dec = ConstrainedDecoder(g, NGramModel(3), {})
    (e, lp), = dec.beam_search("u", 4)
    assert e.symbol == "uu" and lp == pytest.approx(0.0)
    assert dec.sample("u", random.Random(0)) is e


def test_variable_restriction(mini, decoder):
    out = decoder.beam_search("class", 20, variables=["A"])
    for e, _ in out:
        vs = {s.symbol for s in e.subexprs() if s.is_var}
        assert vs <= {"A"}


def test_sampling_is_valid_and_seeded(mini, decoder):
    a = [decoder.sample("wff", random.Random(i)) for i in range(30)]
    b = [decoder.sample("wff", random.Random(i)) for i in range(30)]
    assert a == b
    for e in a:
        if e is None:
            continue
        assert e.size <= decoder.max_tokens
        assert mini.parse_expr(mini.grammar.render(e), "wff") is e


def test_token_cap(mini):
    model = fit_on_frames(mini.axioms + mini.theorems, 3)
    tight = ConstrainedDecoder(mini.grammar, model, mini.float_types, max_tokens=3)
    for e, _ in tight.beam_search("wff", 10):
        assert e.size <= 3
    for i in range(20):
        e = tight.sample("wff", random.Random(i))
        assert e is None or e.size <= 3
    assert ConstrainedDecoder(mini.grammar, model, mini.float_types, max_tokens=0).beam_search("wff", 5) == []


def test_start_marker():
    assert start_marker("wff") == "<wff>"
