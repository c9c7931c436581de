"""Loading Metamath databases.

Supports the statement subset ``$c $v $f $e $d $a $p ${ $}`` plus comments,
with normal and compressed proofs.  Every ``$p`` proof is replayed while
loading, so a successfully loaded database is self-consistent, and proofs are
kept as :class:`~mmsynth.verify.ProofTree` objects.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, TextIO

from .errors import DecompressionError, GrammarError, LexError, MMError, ScopeError, VerificationError
from .expr import Expr, Grammar, SyntaxRule, mkvar
from .verify import ProofTree, finish, replay, replay_compressed

log = logging.getLogger(__name__)

PROVABLE = "|-"
_LABEL_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_KEYWORDS = {"$c", "$v", "$f", "$e", "$d", "$a", "$p", "${", "$}", "$(", "$)", "$[", "$]", "$=", "$."}

# Statement counts reported for the benchmark databases.
KNOWN_COUNTS = {
    "iset.mm": {"axioms": 463, "theorems": 8916},
    "set.mm": {"axioms": 1099, "theorems": 27218},
}


@dataclass(eq=False)
class Frame:
    """An assertion together with everything needed to invoke it."""

    label: str
    kind: str                                  # "$a" or "$p"
    typecode: str
    assertion: Expr
    hypotheses: tuple = ()                     # essential hypotheses, frame order
    hyp_typecodes: tuple = ()
    hyp_labels: tuple = ()
    mandatory_vars: tuple = ()                 # in mandatory-hypothesis order
    float_types: dict = field(default_factory=dict)
    mand_hyps: tuple = ()                      # ("f", var index) / ("e", hyp index)
    dv: frozenset = frozenset()                # pairs over mandatory variables
    proof_dv: frozenset = frozenset()          # every active pair (for the own proof)
    index: int = -1
    local_floats: dict = field(default_factory=dict)   # var -> $f label, non-global floats
    proof: ProofTree | None = None

    @property
    def is_provable(self) -> bool:
        return self.typecode == PROVABLE

    def dv_list(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted(p)) for p in self.dv)

    def signature(self):
        return (self.assertion, frozenset(self.hypotheses))

    def key(self):
        return (self.label, self.typecode, self.assertion, self.hypotheses, self.hyp_typecodes,
                self.mandatory_vars, self.dv)

    def __repr__(self) -> str:
        return f"<Frame {self.label} {self.kind} {self.assertion!r}>"


class Database:
    """An immutable (after load) Metamath database."""

    def __init__(self, provable_typecode: str = PROVABLE, provable_syntax: str = "wff") -> None:
        self.provable_typecode = provable_typecode
        self.provable_syntax = provable_syntax
        self.grammar = Grammar()
        self.constants: dict[str, None] = {}           # ordered set
        self.variables: dict[str, None] = {}           # every declared variable, ordered
        self.frames: dict[str, Frame] = {}
        self.statements: list[tuple[str, str]] = []   # (label, kind) in file order
        self.hyps: dict[str, tuple] = {}               # label -> (kind, typecode, expr)
        self.float_label: dict[str, str] = {}          # global var -> $f label
        self.float_types: dict[str, str] = {}          # global var -> typecode
        self.float_order: dict[str, int] = {}          # global var -> declaration rank
        self.axioms: list[Frame] = []
        self.theorems: list[Frame] = []
        self.assertions: list[Frame] = []              # provable $a and $p, in order
        self.syntax_typecodes: set[str] = set()
        self.sha256 = ""
        self.name = ""
        self.rejected: list[tuple[str, str]] = []     # (label, reason), non-strict loads only

    def __repr__(self) -> str:
        return f"<Database {self.name or '?'}: {len(self.axioms)} axioms, {len(self.theorems)} theorems>"

    @property
    def syntax_axioms(self):
        return self.grammar.rules

    def counts(self) -> dict:
        return {"axioms": len(self.axioms), "theorems": len(self.theorems),
                "syntax_axioms": len(self.grammar), "statements": len(self.statements)}

    def fingerprint(self) -> dict:
        return {**self.counts(), "sha256": self.sha256, "name": self.name}

    def check_known_counts(self) -> bool:
        """Compare counts with the reference ones for a database of this name."""
        ref = KNOWN_COUNTS.get(self.name)
        if ref is None:
            return True
        got = self.counts()
        if got["axioms"] != ref["axioms"] or got["theorems"] != ref["theorems"]:
            log.warning("%s: %d axioms / %d theorems, reference revision has %d / %d",
                        self.name, got["axioms"], got["theorems"], ref["axioms"], ref["theorems"])
            return False
        return True

    def frame(self, label: str) -> Frame:
        return self.frames[label]

    def render(self, e: Expr, typecode: str | None = None) -> str:
        toks = self.grammar.render(e)
        if typecode is not None:
            toks = [typecode] + toks
        return " ".join(toks)

    def parse_statement(self, text: str | Sequence[str], var_types: Mapping[str, str] | None = None) -> tuple[str, Expr]:
        """Parse ``"|- ( ph -> ph )"`` style text into (typecode, tree)."""
        toks = text.split() if isinstance(text, str) else list(text)
        tc, body = toks[0], toks[1:]
        return tc, self.parse_expr(body, tc, var_types)

    def parse_expr(self, body: Sequence[str], typecode: str, var_types: Mapping[str, str] | None = None) -> Expr:
        vt = self.float_types if var_types is None else var_types
        target = self.provable_syntax if typecode == self.provable_typecode else typecode
        return self.grammar.parse(body, target, vt)

    def variables_of_type(self, typecode: str) -> list[str]:
        return [v for v, tc in self.float_types.items() if tc == typecode]

    def scope_lookups(self, frame: Frame):
        """Label lookups for replaying a proof of ``frame`` after loading."""
        hyp_lookup = {lab: ProofTree.leaf(e, tc)
                      for lab, e, tc in zip(frame.hyp_labels, frame.hypotheses, frame.hyp_typecodes)}
        float_lookup = {lab: mkvar(v, self.float_types[v]) for v, lab in self.float_label.items()}
        for v, lab in frame.local_floats.items():
            float_lookup[lab] = mkvar(v, frame.float_types.get(v) or self.hyps[lab][1])
        return hyp_lookup, float_lookup

    def float_labels_for(self, frame: Frame) -> dict[str, str]:
        if not frame.local_floats:
            return self.float_label
        d = dict(self.float_label)
        d.update(frame.local_floats)
        return d

    def hyp_label_map(self, frame: Frame) -> dict[Expr, str]:
        out = {}
        for lab, e in zip(frame.hyp_labels, frame.hypotheses):
            out.setdefault(e, lab)
        return out

    def frame_for_tree(self, label: str, tree: ProofTree, index: int | None = None) -> Frame:
        """Frame of the theorem a proof tree proves: its leaves become hypotheses.

        Disjointness conditions are the minimal ones, i.e. the pairs induced
        by the steps of ``tree``.
        """
        from .verify import dv_pairs_induced
        hyps = tuple(tree.leaves_preorder())
        vtypes: dict[str, str] = {}
        for e in (tree.expr, *hyps):
            for sub in e.subexprs():
                if sub.is_var:
                    vtypes[sub.symbol] = sub.typecode
        big = len(self.float_order)
        mvars = tuple(sorted(vtypes, key=lambda v: (self.float_order.get(v, big), v)))
        induced: set = set()
        for node in tree.postorder_unique():
            if node.label is not None:
                fr = self.frames[node.label]
                if fr.dv:
                    induced |= dv_pairs_induced(fr, node.subst)
        mset = set(mvars)
        return Frame(label=label, kind="$p", typecode=self.provable_typecode, assertion=tree.expr,
                     hypotheses=hyps, hyp_typecodes=(self.provable_typecode,) * len(hyps),
                     hyp_labels=tuple(f"{label}.{i}" for i in range(1, len(hyps) + 1)),
                     mandatory_vars=mvars, float_types={v: vtypes[v] for v in mvars},
                     mand_hyps=tuple(("f", i) for i in range(len(mvars))) + tuple(("e", i) for i in range(len(hyps))),
                     dv=frozenset(p for p in induced if p <= mset), proof_dv=frozenset(induced),
                     index=len(self.statements) if index is None else index, proof=tree)

    def linearize(self, frame: Frame, tree: ProofTree | None = None) -> list[str]:
        from .verify import linearize
        tree = tree if tree is not None else frame.proof
        return linearize(tree, self, self.hyp_label_map(frame), self.float_labels_for(frame))


# --- compressed proofs -----------------------------------------------------

def compressed_numbers(text: str) -> list[int]:
    """Decode the letter part of a compressed proof into 0-based integers.

    ``-1`` marks a ``Z`` (save the preceding step).
    """
    out: list[int] = []
    cur = 0
    pending = False
    for ch in text:
        if "A" <= ch <= "T":
            out.append(20 * cur + ord(ch) - 65)
            cur = 0
            pending = False
        elif "U" <= ch <= "Y":
            cur = 5 * cur + ord(ch) - 84
            pending = True
        elif ch == "Z":
            if pending or not out or out[-1] == -1:
                raise DecompressionError("'Z' must follow a complete step")
            out.append(-1)
        elif ch.isspace():
            continue
        elif ch == "?":
            raise DecompressionError("incomplete proof ('?')")
        else:
            raise DecompressionError(f"invalid character {ch!r} in compressed proof")
    if pending:
        raise DecompressionError("compressed proof ends inside a number")
    if not out:
        raise DecompressionError("empty compressed proof")
    return out


def split_compressed(tokens: Sequence[str]) -> tuple[list[str], str]:
    if not tokens or tokens[0] != "(":
        raise DecompressionError("compressed proof must start with '('")
    try:
        end = list(tokens).index(")")
    except ValueError:
        raise DecompressionError("unterminated label list") from None
    return list(tokens[1:end]), "".join(tokens[end + 1:])


def decompress_proof(compressed: str | Sequence[str], frame_context: Sequence[str],
                     arity: Mapping[str, int] | Callable[[str], int]) -> list[str]:
    """Expand a compressed proof into a normal-format label sequence.

    ``frame_context`` lists the mandatory hypothesis labels of the theorem in
    order; ``arity`` gives the number of mandatory hypotheses of every other
    label (0 for hypotheses).  ``Z`` back-references are expanded in place.
    """
    toks = compressed.split() if isinstance(compressed, str) else list(compressed)
    labels, letters = split_compressed(toks)
    plabels = list(frame_context) + labels
    nums = compressed_numbers(letters)
    get = arity if callable(arity) else (lambda lab: arity.get(lab, 0))
    stack: list[tuple] = []       # entries: (label, children) expression trees of labels
    saved: list[tuple] = []
    for k in nums:
        if k == -1:
            saved.append(stack[-1])
        elif k < len(plabels):
            lab = plabels[k]
            n = 0 if k < len(frame_context) else get(lab)
            if n > len(stack):
                raise DecompressionError(f"stack underflow at {lab}")
            kids = tuple(stack[len(stack) - n:]) if n else ()
            del stack[len(stack) - n:]
            stack.append((lab, kids))
        elif k - len(plabels) < len(saved):
            stack.append(saved[k - len(plabels)])
        else:
            raise DecompressionError(f"reference {k + 1} out of range")
    if len(stack) != 1:
        raise DecompressionError(f"compressed proof leaves {len(stack)} stack entries")
    out: list[str] = []
    work = [stack[0]]
    while work:
        item = work.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        lab, kids = item
        work.append(lab)
        work.extend(reversed(kids))
    return out


# --- tokenizer -------------------------------------------------------------

class _Tokens:
    def __init__(self, text: str) -> None:
        self.text = text
        self.toks = text.split()
        self.i = 0

    def line_of(self, index: int) -> int:
        # tokens were produced by split(); recover the position by rescanning
        n = 0
        for m in re.finditer(r"\S+", self.text):
            if n == index:
                return self.text.count("\n", 0, m.start()) + 1
            n += 1
        return self.text.count("\n") + 1

    def error(self, msg: str, index: int | None = None) -> LexError:
        return LexError(msg, self.line_of(self.i - 1 if index is None else index))

    def next(self) -> str | None:
        """Next token outside comments."""
        toks = self.toks
        while self.i < len(toks):
            t = toks[self.i]
            self.i += 1
            if t == "$(":
                start = self.i - 1
                while True:
                    if self.i >= len(toks):
                        raise self.error("unterminated comment", start)
                    c = toks[self.i]
                    self.i += 1
                    if c == "$)":
                        break
                    if "$(" in c or "$)" in c:
                        raise self.error("nested comment delimiter", self.i - 1)
                continue
            return t
        return None

    def statement(self) -> list[str]:
        out = []
        while True:
            t = self.next()
            if t is None:
                raise self.error("end of file inside a statement")
            if t == "$.":
                return out
            if t.startswith("$") and t != "$=":
                raise self.error(f"unexpected keyword {t} inside a statement")
            out.append(t)


# --- parser ----------------------------------------------------------------

class _Scope:
    __slots__ = ("vars", "floats", "ess", "dv", "hyps_mark")

    def __init__(self, hyps_mark: int) -> None:
        self.vars: list[str] = []
        self.floats: list[str] = []       # variables floated in this scope
        self.ess: list[str] = []          # essential labels
        self.dv: set[frozenset] = set()
        self.hyps_mark = hyps_mark


def parse_corpus(source: str | TextIO, name: str = "", provable_typecode: str = PROVABLE,
                 provable_syntax: str = "wff", strict: bool = True) -> Database:
    """Parse and verify a Metamath database from text or a text stream.

    With ``strict=False`` a proof that fails to check does not abort the
    load: the theorem is kept (without a proof) and the failure is recorded
    in ``db.rejected`` as ``(label, reason)``.
    """
    text = source if isinstance(source, str) else source.read()
    db = Database(provable_typecode, provable_syntax)
    db.name = name
    db.sha256 = hashlib.sha256(text.encode("utf-8", "surrogateescape")).hexdigest()
    _Loader(db, _Tokens(text), strict).run()
    return db


def load_database(path: str, strict: bool = True) -> Database:
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        return parse_corpus(fh, name=os.path.basename(path), strict=strict)


class _Loader:
    def __init__(self, db: Database, toks: _Tokens, strict: bool = True) -> None:
        self.db = db
        self.toks = toks
        self.strict = strict
        self.scopes = [_Scope(0)]
        self.active_vars: dict[str, int] = {}       # var -> nesting count
        self.active_floats: dict[str, tuple] = {}   # var -> (label, typecode, seq)
        self.active_hyps: list[tuple] = []          # (kind, label, seq)
        self.labels: set[str] = set()
        self.seq = 0
        self._dv_cache: frozenset | None = frozenset()
        self.leaves: dict[str, ProofTree] = {}

    def err(self, msg: str) -> LexError:
        return self.toks.error(msg)

    def active_dv(self) -> frozenset:
        if self._dv_cache is None:
            s: set = set()
            for sc in self.scopes:
                s |= sc.dv
            self._dv_cache = frozenset(s)
        return self._dv_cache

    def run(self) -> None:
        db = self.db
        toks = self.toks
        label = None
        while True:
            tok = toks.next()
            if tok is None:
                break
            if tok == "$[":
                raise self.err("file inclusion ($[ $]) is not supported")
            if tok == "${":
                if label:
                    raise self.err(f"label {label} before ${{")
                self.scopes.append(_Scope(len(self.active_hyps)))
                continue
            if tok == "$}":
                if label:
                    raise self.err(f"label {label} before $}}")
                self.close_scope()
                continue
            if tok in ("$c", "$v", "$d"):
                if label:
                    raise self.err(f"{tok} statements take no label")
                body = toks.statement()
                getattr(self, "do_" + tok[1])(body)
                continue
            if tok in ("$f", "$e", "$a", "$p"):
                if label is None:
                    raise self.err(f"{tok} statement requires a label")
                body = toks.statement()
                getattr(self, "do_" + tok[1])(label, body)
                db.statements.append((label, tok))
                label = None
                continue
            if tok.startswith("$"):
                raise self.err(f"unexpected token {tok}")
            if label is not None:
                raise self.err(f"two consecutive labels {label} {tok}")
            if not _LABEL_RE.match(tok):
                raise self.err(f"invalid label {tok!r}")
            if tok in self.labels:
                raise self.err(f"duplicate label {tok}")
            if tok in db.constants or tok in self.active_vars:
                raise self.err(f"label {tok} collides with a math symbol")
            label = tok
        if label is not None:
            raise self.err(f"dangling label {label}")
        if len(self.scopes) != 1:
            raise self.err("unclosed ${ block at end of file")

    def close_scope(self) -> None:
        if len(self.scopes) == 1:
            raise self.err("$} without matching ${")
        sc = self.scopes.pop()
        for v in sc.vars:
            self.active_vars[v] -= 1
            if not self.active_vars[v]:
                del self.active_vars[v]
        for v in sc.floats:
            self.active_floats.pop(v, None)
        del self.active_hyps[sc.hyps_mark:]
        if sc.dv:
            self._dv_cache = None

    def check_symbol(self, t: str) -> None:
        if "$" in t or not t.isprintable() or not t:
            raise self.err(f"invalid math symbol {t!r}")

    def do_c(self, body: list[str]) -> None:
        if len(self.scopes) != 1:
            raise self.err("$c must be in the outermost scope")
        for t in body:
            self.check_symbol(t)
            if t in self.db.constants or t in self.active_vars:
                raise self.err(f"{t} already declared")
            if t in self.labels:
                raise self.err(f"constant {t} collides with a label")
            self.db.constants[t] = None

    def do_v(self, body: list[str]) -> None:
        for t in body:
            self.check_symbol(t)
            if t in self.db.constants or t in self.active_vars:
                raise self.err(f"{t} already declared")
            self.active_vars[t] = 1
            self.db.variables[t] = None
            self.scopes[-1].vars.append(t)

    def do_d(self, body: list[str]) -> None:
        for v in body:
            if v not in self.active_vars:
                raise ScopeError(f"$d mentions inactive variable {v}")
        if len(set(body)) != len(body):
            raise self.err("repeated variable in $d")
        sc = self.scopes[-1]
        for i, x in enumerate(body):
            for y in body[i + 1:]:
                sc.dv.add(frozenset((x, y)))
        self._dv_cache = None

    def do_f(self, label: str, body: list[str]) -> None:
        if len(body) != 2:
            raise self.err("$f must have exactly two tokens")
        tc, v = body
        if tc not in self.db.constants:
            raise ScopeError(f"{label}: typecode {tc} is not a constant")
        if v not in self.active_vars:
            raise ScopeError(f"{label}: {v} is not an active variable")
        if v in self.active_floats:
            raise ScopeError(f"{label}: {v} already has an active $f")
        self.seq += 1
        self.active_floats[v] = (label, tc, self.seq)
        self.scopes[-1].floats.append(v)
        self.active_hyps.append(("f", label, self.seq))
        self.labels.add(label)
        self.db.hyps[label] = ("f", tc, mkvar(v, tc))
        if tc != self.db.provable_typecode:
            self.db.syntax_typecodes.add(tc)
        if len(self.scopes) == 1:
            self.db.float_label[v] = label
            self.db.float_types[v] = tc
            self.db.float_order[v] = len(self.db.float_order)

    def var_types(self) -> dict[str, str]:
        return {v: f[1] for v, f in self.active_floats.items()}

    def parse_math(self, label: str, body: list[str]) -> tuple[str, Expr | None]:
        db = self.db
        if not body:
            raise self.err(f"{label}: empty statement")
        tc = body[0]
        if tc not in db.constants:
            raise ScopeError(f"{label}: typecode {tc} is not a declared constant")
        for t in body[1:]:
            if t not in db.constants and t not in self.active_vars:
                raise ScopeError(f"{label}: symbol {t} is not active")
            if t in self.active_vars and t not in self.active_floats:
                raise ScopeError(f"{label}: variable {t} has no active $f")
        return tc, None

    def parse_body(self, label: str, tc: str, body: list[str]) -> Expr:
        db = self.db
        target = db.provable_syntax if tc == db.provable_typecode else tc
        try:
            return db.grammar.parse(body, target, self.var_types())
        except GrammarError as exc:
            raise GrammarError(f"{label}: {exc}") from None

    def do_e(self, label: str, body: list[str]) -> None:
        tc, _ = self.parse_math(label, body)
        if tc != self.db.provable_typecode:
            raise MMError(f"{label}: essential hypotheses must use the {self.db.provable_typecode} typecode")
        e = self.parse_body(label, tc, body[1:])
        self.seq += 1
        self.active_hyps.append(("e", label, self.seq))
        self.scopes[-1].ess.append(label)
        self.labels.add(label)
        self.db.hyps[label] = ("e", tc, e)

    def make_frame(self, label: str, kind: str, body: list[str]) -> Frame:
        db = self.db
        tc, _ = self.parse_math(label, body)
        ess = [(lab, seq) for k, lab, seq in self.active_hyps if k == "e"]
        mvars = set(t for t in body[1:] if t in self.active_vars)
        hyps, hyp_tcs, hyp_labels = [], [], []
        for lab, _seq in ess:
            _k, htc, he = db.hyps[lab]
            hyps.append(he)
            hyp_tcs.append(htc)
            hyp_labels.append(lab)
            mvars |= he.vars
        floats = sorted((self.active_floats[v] for v in mvars), key=lambda f: f[2])
        order = sorted([("f", f[1], f[2], db.hyps[f[0]][2].symbol) for f in floats]
                       + [("e", None, seq, lab) for lab, seq in ess], key=lambda x: x[2])
        mandatory_vars = tuple(f[3] for f in order if f[0] == "f")
        vidx = {v: i for i, v in enumerate(mandatory_vars)}
        eidx = {lab: i for i, lab in enumerate(hyp_labels)}
        mand = tuple(("f", vidx[x[3]]) if x[0] == "f" else ("e", eidx[x[3]]) for x in order)
        ftypes = {v: self.active_floats[v][1] for v in mandatory_vars}
        amb = self.active_dv()
        dv = frozenset(p for p in amb if p <= mvars)
        local = {v: f[0] for v, f in self.active_floats.items() if db.float_label.get(v) != f[0]}
        if tc != db.provable_typecode and kind == "$a":
            rule = SyntaxRule(label, tc, tuple(body[1:]), mandatory_vars, ftypes)
            db.grammar.add(rule)
            db.syntax_typecodes.add(tc)
            assertion = db.grammar.rule_node(label)
        else:
            assertion = self.parse_body(label, tc, body[1:])
        return Frame(label=label, kind=kind, typecode=tc, assertion=assertion,
                     hypotheses=tuple(hyps), hyp_typecodes=tuple(hyp_tcs), hyp_labels=tuple(hyp_labels),
                     mandatory_vars=mandatory_vars, float_types=ftypes, mand_hyps=mand, dv=dv,
                     proof_dv=amb, index=len(db.statements), local_floats=local)

    def register(self, frame: Frame) -> None:
        db = self.db
        self.labels.add(frame.label)
        db.frames[frame.label] = frame
        if frame.typecode == db.provable_typecode:
            db.assertions.append(frame)
            (db.axioms if frame.kind == "$a" else db.theorems).append(frame)

    def do_a(self, label: str, body: list[str]) -> None:
        self.register(self.make_frame(label, "$a", body))

    def do_p(self, label: str, body: list[str]) -> None:
        try:
            k = body.index("$=")
        except ValueError:
            raise self.err(f"{label}: $p without $=") from None
        stmt, proof = body[:k], body[k + 1:]
        if not proof:
            raise VerificationError(label, "empty proof")
        frame = self.make_frame(label, "$p", stmt)
        try:
            frame.proof = self.check_proof(frame, proof)
        except MMError as exc:
            if self.strict:
                raise
            self.db.rejected.append((label, str(exc)))
        self.register(frame)

    def check_proof(self, frame: Frame, proof: list[str]):
        db = self.db
        hyp_lookup = {}
        for k, lab, _seq in self.active_hyps:
            if k == "e":
                leaf = self.leaves.get(lab)
                if leaf is None:
                    _k, tc, e = db.hyps[lab]
                    leaf = self.leaves[lab] = ProofTree.leaf(e, tc)
                hyp_lookup[lab] = leaf
        float_lookup = _FloatLookup(self.active_floats, db)
        if proof[0] == "(":
            labels, letters = split_compressed(proof)
            for lab in labels:
                if lab not in db.frames:
                    if lab in hyp_lookup or lab in float_lookup:
                        raise VerificationError(frame.label, f"hypothesis {lab} in compressed label list")
                    raise VerificationError(frame.label, f"label {lab} not active")
            plabels = []
            for kind, idx in frame.mand_hyps:
                if kind == "f":
                    plabels.append(self.active_floats[frame.mandatory_vars[idx]][0])
                else:
                    plabels.append(frame.hyp_labels[idx])
            plabels += labels
            try:
                nums = compressed_numbers(letters)
            except DecompressionError as exc:
                raise DecompressionError(f"{frame.label}: {exc}") from None
            stack = replay_compressed(frame.label, nums, plabels, db, frame.proof_dv, hyp_lookup, float_lookup)
        else:
            if "?" in proof:
                raise VerificationError(frame.label, "incomplete proof ('?')")
            stack = replay(frame.label, proof, db, frame.proof_dv, hyp_lookup, float_lookup)
        top = finish(frame, stack)
        return top if isinstance(top, ProofTree) else None


class _FloatLookup(dict):
    """label -> variable leaf, for the floats active at the current point."""

    def __init__(self, active_floats: dict, db: Database) -> None:
        super().__init__()
        for v, (lab, tc, _seq) in active_floats.items():
            self[lab] = mkvar(v, tc)
