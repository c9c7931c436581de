import pytest

from mmsynth.corpus import compressed_numbers, decompress_proof, parse_corpus
from mmsynth.errors import DecompressionError, LexError, MMError, ScopeError, VerificationError

from conftest import fixture_path
from oracle_mm import Oracle


def read(name):
    with open(fixture_path(name)) as fh:
        return fh.read()


@pytest.mark.parametrize("name", ["mini.mm", "demo0.mm", "toy.mm"])
def test_counts_agree_with_oracle(name):
    text = read(name)
    db = parse_corpus(text, name)
    ora = Oracle(text)
    assert len(db.axioms) == ora.axiom_count()
    assert len(db.theorems) == ora.theorem_count()


def test_toy_database():
    db = parse_corpus(read("toy.mm"))
    assert len(db.axioms) == 1 and len(db.theorems) == 1
    assert db.frames["th1"].proof.label == "ax-1"


def test_mini_shape(mini):
    assert mini.counts()["axioms"] == 18
    assert mini.counts()["theorems"] == 42
    assert len(mini.grammar) == 12
    assert all(f.proof is not None for f in mini.theorems)
    f = mini.frames["oveq1i"]
    assert f.mandatory_vars == ("A", "B", "C", "F")
    assert mini.render(f.hypotheses[0], "|-") == "|- A = B"


def test_known_counts_only_for_named_databases(mini):
    assert mini.check_known_counts()
    db = parse_corpus(read("toy.mm"), "set.mm")
    assert not db.check_known_counts()


def test_compressed_numbers():
    # A..T end a number; U..Y are higher digits; Z saves the previous step
    assert compressed_numbers("ABT") == [0, 1, 19]
    assert compressed_numbers("UA") == [20]
    assert compressed_numbers("UT") == [39]
    assert compressed_numbers("VA") == [40]
    assert compressed_numbers("YT") == [119]
    assert compressed_numbers("UUA") == [120]
    assert compressed_numbers("AZB") == [0, -1, 1]


@pytest.mark.parametrize("bad", ["", "U", "A?", "Aa", "ZA", "AZZ"])
def test_compressed_numbers_rejects(bad):
    with pytest.raises(DecompressionError):
        compressed_numbers(bad)


def test_decompress_matches_oracle(mini, mini_text):
    ora = Oracle(mini_text)
    arity = {lab: sum(1 for _ in f.mand_hyps) for lab, f in mini.frames.items()}
    toks = mini_text.split()
    start = {toks[i]: i for i in range(len(toks) - 1) if toks[i + 1] == "$p"}
    checked = 0
    for f in mini.theorems:
        j = toks.index("$=", start[f.label])
        k = toks.index("$.", j)
        proof = toks[j + 1:k]
        if proof[0] != "(":
            continue
        ctx = []
        for kind, idx in f.mand_hyps:
            ctx.append(mini.float_label[f.mandatory_vars[idx]] if kind == "f" else f.hyp_labels[idx])
        assert decompress_proof(proof, ctx, arity) == ora.theorem_steps[f.label]
        checked += 1
    assert checked >= 8


def test_decompress_single_step():
    labels = decompress_proof("( ax-1 ) ABC", ["wph", "wps"], {"ax-1": 2})
    assert labels == ["wph", "wps", "ax-1"]
    with pytest.raises(DecompressionError):
        decompress_proof("( ax-1 )", ["wph"], {"ax-1": 2})


HEAD = "$c ( ) -> wff |- $. $v ph ps $. wph $f wff ph $. wps $f wff ps $. wi $a wff ( ph -> ps ) $.\n"


@pytest.mark.parametrize("body, exc", [
    ("ax-1 $a |- ( ph -> ( ps -> ph ) ) $. th $p |- ( ph -> ( ps -> ph ) ) $= wph ax-1 $.", VerificationError),
    ("th $p |- ph $= ? $.", VerificationError),
    ("th $p |- ph $= $.", VerificationError),
    ("${ $d ph ch $. $}", ScopeError),
    ("$[ other.mm $]", LexError),
    ("x $a |- ph", LexError),
    ("ax-1 $a |- ph $. ax-1 $a |- ps $.", LexError),
    ("${ h $e wff ph $. $}", MMError),
    ("${", LexError),
])
def test_malformed_inputs(body, exc):
    with pytest.raises(exc):
        parse_corpus(HEAD + body)


def test_lex_error_carries_line():
    with pytest.raises(LexError) as info:
        parse_corpus(HEAD + "\n\n$[ x $]")
    assert info.value.line == 4


def test_non_strict_load_records_rejection(mini_text):
    bad = mini_text.replace("cA cB wceq cA cC cF co cB cC cF co wceq oveq1i.1 cA cB cC cF ax-oveq1 ax-mp",
                            "cA cB wceq cA cC cF co cB cC cF co wceq oveq1i.1 cA cB cC cF ax-oveq2 ax-mp")
    assert bad != mini_text
    with pytest.raises(VerificationError):
        parse_corpus(bad)
    db = parse_corpus(bad, strict=False)
    assert [lab for lab, _ in db.rejected] == ["oveq1i"]
    assert len(db.theorems) == 42
