"""Interned parse trees over syntax axioms.

An :class:`Expr` is either a variable leaf or a node labelled with a syntax
axiom whose children are ordered like the axiom's mandatory floating
hypotheses.  Nodes are hash-consed: two structurally equal trees are the same
Python object, so equality is identity and hashing is O(1).
"""
from __future__ import annotations

import sys
import threading
import zlib
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import AmbiguousParse, GrammarError, SubstitutionError

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

_EMPTY: frozenset = frozenset()
_TABLE: dict = {}
_LOCK = threading.Lock()
_SYM_HASH: dict[str, int] = {}


def _symhash(s: str) -> int:
    h = _SYM_HASH.get(s)
    if h is None:
        # crc32 rather than hash(): str hashing is salted per process and
        # set/dict iteration order must not vary between runs.
        h = _SYM_HASH[s] = zlib.crc32(s.encode())
    return h


class Expr:
    __slots__ = ("symbol", "typecode", "children", "is_var", "vars", "size", "depth", "_hash", "__weakref__")

    def __init__(self, symbol: str, typecode: str, children: tuple, is_var: bool) -> None:
        self.symbol = symbol
        self.typecode = typecode
        self.children = children
        self.is_var = is_var
        if is_var:
            self.vars = frozenset((symbol,))
            self.size = 1
            self.depth = 0
            self._hash = hash((_symhash(symbol), _symhash(typecode), -1))
        else:
            vs = _EMPTY
            for c in children:
                if c.vars and not c.vars <= vs:
                    vs = c.vars if not vs else vs | c.vars
            self.vars = vs
            self.size = 1 + sum(c.size for c in children)
            self.depth = 1 + max((c.depth for c in children), default=-1)
            self._hash = hash((_symhash(symbol), _symhash(typecode), *(c._hash for c in children)))

    def __hash__(self) -> int:
        return self._hash

    def __reduce__(self):
        return (_unpickle, (self.symbol, self.typecode, self.children, self.is_var))

    def __repr__(self) -> str:
        if self.is_var or not self.children:
            return self.symbol
        return f"{self.symbol}({', '.join(map(repr, self.children))})"

    def subexprs(self) -> Iterable["Expr"]:
        """Distinct subexpressions, parents before children."""
        seen = set()
        stack = [self]
        while stack:
            e = stack.pop()
            if e in seen:
                continue
            seen.add(e)
            yield e
            stack.extend(reversed(e.children))


def mkvar(name: str, typecode: str) -> Expr:
    key = (name, typecode, None)
    e = _TABLE.get(key)
    if e is None:
        with _LOCK:
            e = _TABLE.get(key)
            if e is None:
                e = _TABLE[key] = Expr(name, typecode, (), True)
    return e


def mknode(label: str, typecode: str, children: Sequence[Expr] = ()) -> Expr:
    children = tuple(children)
    key = (label, typecode, children)
    e = _TABLE.get(key)
    if e is None:
        with _LOCK:
            e = _TABLE.get(key)
            if e is None:
                e = _TABLE[key] = Expr(label, typecode, children, False)
    return e


def _unpickle(symbol, typecode, children, is_var):
    return mkvar(symbol, typecode) if is_var else mknode(symbol, typecode, children)


def intern_table_size() -> int:
    return len(_TABLE)


Substitution = Mapping[str, Expr]


def apply_substitution(e: Expr, phi: Substitution, *, partial: bool = False) -> Expr:
    """Replace every variable leaf of ``e`` that is bound in ``phi``.

    In total mode (the default) every variable of ``e`` must be bound.
    """
    if not phi:
        if e.vars and not partial:
            raise SubstitutionError(f"unbound variables {sorted(e.vars)}")
        return e
    for v in e.vars:
        img = phi.get(v)
        if img is None:
            if not partial:
                raise SubstitutionError(f"variable {v} is not substituted")
    return _subst(e, phi, {})


def _subst(e: Expr, phi: Substitution, memo: dict) -> Expr:
    if e.is_var:
        img = phi.get(e.symbol)
        if img is None:
            return e
        if img.typecode != e.typecode:
            raise SubstitutionError(
                f"typecode mismatch: {e.symbol} is {e.typecode}, image is {img.typecode}")
        return img
    if not e.vars or e.vars.isdisjoint(phi.keys()):
        return e
    r = memo.get(e)
    if r is None:
        r = memo[e] = mknode(e.symbol, e.typecode, [_subst(c, phi, memo) for c in e.children])
    return r


def reachable(a: Expr, b: Expr, phi: Substitution | None = None) -> dict[str, Expr] | None:
    """Return the substitution turning ``b`` into ``a``, or None.

    ``phi`` pre-binds variables of ``b``; a bound variable must match its
    image exactly.  Variables only bind to trees of their own typecode.
    """
    out = dict(phi) if phi else {}
    stack = [(a, b)]
    pop = stack.pop
    while stack:
        a, b = pop()
        if b.is_var:
            bound = out.get(b.symbol)
            if bound is None:
                if a.typecode != b.typecode:
                    return None
                out[b.symbol] = a
            elif bound is not a:
                return None
        elif a is b and not b.vars:
            continue
        elif a.is_var or a.symbol != b.symbol or a.typecode != b.typecode:
            return None
        else:
            stack.extend(zip(a.children, b.children))
    return out


def variables_of(exprs: Iterable[Expr]) -> frozenset:
    vs = set()
    for e in exprs:
        vs |= e.vars
    return frozenset(vs)


class SerialNode(NamedTuple):
    symbol: str
    depth: int
    degree: int
    parent_degree: int
    child_index: int


def serialize_preorder(e: Expr) -> list[SerialNode]:
    out = []
    stack = [(e, 0, 0, 0)]
    while stack:
        n, depth, pdeg, idx = stack.pop()
        k = len(n.children)
        out.append(SerialNode(n.symbol, depth, k, pdeg, idx))
        for i in range(k - 1, -1, -1):
            stack.append((n.children[i], depth + 1, k, i))
    return out


def preorder_symbols(e: Expr) -> list[str]:
    out = []
    stack = [e]
    while stack:
        n = stack.pop()
        out.append(n.symbol)
        stack.extend(reversed(n.children))
    return out


class SyntaxRule(NamedTuple):
    label: str
    typecode: str
    pattern: tuple           # constants and variable tokens
    var_order: tuple         # child order (mandatory float order)
    var_types: dict          # variable -> typecode


class Grammar:
    """Syntax axioms plus a memoized top-down parser over them."""

    def __init__(self) -> None:
        self.rules: dict[str, SyntaxRule] = {}
        self._by_const: dict[str, dict[str, list[SyntaxRule]]] = {}
        self._var_initial: dict[str, list[SyntaxRule]] = {}
        self._cache: dict = {}

    def __contains__(self, label: str) -> bool:
        return label in self.rules

    def __len__(self) -> int:
        return len(self.rules)

    def typecodes(self) -> set[str]:
        return {r.typecode for r in self.rules.values()}

    def add(self, rule: SyntaxRule) -> None:
        self.rules[rule.label] = rule
        first = rule.pattern[0] if rule.pattern else None
        if first is not None and first not in rule.var_types:
            self._by_const.setdefault(rule.typecode, {}).setdefault(first, []).append(rule)
        else:
            self._var_initial.setdefault(rule.typecode, []).append(rule)
        self._cache.clear()

    def rule_node(self, label: str) -> Expr:
        """The rule's own pattern as a tree: the axiom applied to its variables."""
        r = self.rules[label]
        return mknode(label, r.typecode, [mkvar(v, r.var_types[v]) for v in r.var_order])

    def parse(self, tokens: Sequence[str], typecode: str, var_types: Mapping[str, str]) -> Expr:
        tokens = tuple(tokens)
        key = (tokens, typecode, tuple(var_types.get(t) for t in tokens))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        parses = self._parse_all(tokens, typecode, var_types)
        if not parses:
            raise GrammarError(f"no parse of {' '.join(tokens)!r} as {typecode}")
        if len(parses) > 1:
            raise AmbiguousParse(tokens, parses)
        e = parses[0]
        self._cache[key] = e
        return e

    def _parse_all(self, toks, typecode, var_types) -> list[Expr]:
        n = len(toks)
        memo: dict = {}
        active: set = set()
        by_const = self._by_const
        var_initial = self._var_initial

        def parse_at(pos: int, tc: str) -> list:
            key = (pos, tc)
            r = memo.get(key)
            if r is not None:
                return r
            if key in active:
                return []
            active.add(key)
            out = []
            tok = toks[pos] if pos < n else None
            if tok is not None and var_types.get(tok) == tc:
                out.append((pos + 1, mkvar(tok, tc)))
            rules = []
            if tok is not None:
                rules.extend(by_const.get(tc, {}).get(tok, ()))
            rules.extend(var_initial.get(tc, ()))
            for rule in rules:
                states = [(pos, {})]
                for sym in rule.pattern:
                    vt = rule.var_types.get(sym)
                    nxt = []
                    for p, kids in states:
                        if vt is None:
                            if p < n and toks[p] == sym:
                                nxt.append((p + 1, kids))
                        else:
                            for end, sub in parse_at(p, vt):
                                prev = kids.get(sym)
                                if prev is not None and prev is not sub:
                                    continue
                                k2 = dict(kids)
                                k2[sym] = sub
                                nxt.append((end, k2))
                    states = nxt
                    if not states:
                        break
                for p, kids in states:
                    node = mknode(rule.label, rule.typecode, [kids[v] for v in rule.var_order])
                    out.append((p, node))
            active.discard(key)
            # dedupe identical (end, tree) results
            seen = set()
            uniq = []
            for item in out:
                if item not in seen:
                    seen.add(item)
                    uniq.append(item)
            memo[key] = uniq
            return uniq

        return [e for end, e in parse_at(0, typecode) if end == n]

    def render(self, e: Expr) -> list[str]:
        out: list[str] = []
        stack = [e]
        while stack:
            item = stack.pop()
            if isinstance(item, str):
                out.append(item)
                continue
            if item.is_var:
                out.append(item.symbol)
                continue
            rule = self.rules[item.symbol]
            binding = dict(zip(rule.var_order, item.children))
            for sym in reversed(rule.pattern):
                sub = binding.get(sym)
                stack.append(sym if sub is None else sub)
        return out

    def deserialize(self, seq: Sequence, var_types: Mapping[str, str]) -> Expr:
        """Rebuild a tree from its pre-order serialization."""
        symbols = [s.symbol if isinstance(s, SerialNode) else s for s in seq]
        pos = len(symbols)
        built: list[Expr] = []
        # right-to-left: every node pops its children off the stack
        for sym in reversed(symbols):
            pos -= 1
            rule = self.rules.get(sym)
            if rule is None:
                tc = var_types.get(sym)
                if tc is None:
                    raise GrammarError(f"unknown symbol {sym!r}")
                built.append(mkvar(sym, tc))
                continue
            k = len(rule.var_order)
            if len(built) < k:
                raise GrammarError("truncated serialization")
            kids = [built.pop() for _ in range(k)]
            built.append(mknode(sym, rule.typecode, kids))
        if len(built) != 1:
            raise GrammarError("serialization does not describe a single tree")
        return built[0]
