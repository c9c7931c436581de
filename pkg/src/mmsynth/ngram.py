"""An interpolated n-gram model over pre-order serializations, with
grammar-constrained beam search and sampling.

Every decoded sequence is a valid pre-order serialization: the decoder keeps
the stack of typecodes still to be produced and only proposes syntax-axiom
labels or variables of the typecode on top of it.
"""
from __future__ import annotations

import math
import random
from collections import Counter, defaultdict
from typing import Iterable, Mapping, Sequence

from .expr import Expr, Grammar, mknode, mkvar, preorder_symbols

BOS = "<s>"


def start_marker(typecode: str) -> str:
    return f"<{typecode}>"


class NGramModel:
    """Jelinek-Mercer interpolation of orders 1..n plus a uniform floor.

    The conditional probability is always computed relative to an allowed
    symbol set (the grammatical continuations), which keeps it normalized.
    """

    def __init__(self, n: int = 3, weights: Sequence[float] | None = None) -> None:
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        if weights is None:
            # weights[0] is the uniform floor, weights[k] the order-k model
            weights = [0.01] + [0.99 * 2 ** k / (2 ** n - 1) for k in range(n)]
        if len(weights) != n + 1:
            raise ValueError("need n + 1 interpolation weights")
        self.weights = tuple(weights)
        # order k (1-based) -> history tuple of length k-1 -> Counter(next)
        self.counts: list[dict[tuple, Counter]] = [defaultdict(Counter) for _ in range(n)]
        self.totals: list[dict[tuple, int]] = [defaultdict(int) for _ in range(n)]

    def fit(self, sequences: Iterable[Sequence[str]]) -> "NGramModel":
        n = self.n
        for seq in sequences:
            padded = [BOS] * (n - 2) + list(seq) if n > 2 else list(seq)
            off = len(padded) - len(seq)
            # the first symbol of every sequence is a start marker, never predicted
            for i in range(off + 1, len(padded)):
                w = padded[i]
                for k in range(n):
                    if i - k < 0:
                        break
                    h = tuple(padded[i - k:i])
                    self.counts[k][h][w] += 1
                    self.totals[k][h] += 1
        return self

    def unigram(self) -> Counter:
        return self.counts[0][()]

    def histories(self, history: Sequence[str]) -> list[tuple]:
        hist = [BOS] * max(0, self.n - 1 - len(history)) + list(history)
        return [tuple(hist[len(hist) - k:]) if k else () for k in range(self.n)]

    def distribution(self, history: Sequence[str], allowed: Sequence[str],
                     allowed_unigram_mass: int | None = None, allowed_set=None) -> "_Dist":
        return _Dist(self, history, allowed, allowed_unigram_mass, allowed_set)

    def prob(self, history: Sequence[str], w: str, allowed: Sequence[str]) -> float:
        d = self.distribution(history, allowed)
        return d.prob(w)


class _Dist:
    """P(w | history) restricted to ``allowed``."""

    def __init__(self, model: NGramModel, history, allowed, unigram_mass=None, aset=None) -> None:
        self.model = model
        self.allowed = allowed
        self.aset = aset if aset is not None else set(allowed)
        self.parts = []             # (weight / total, Counter, allowed mass) per order with data
        z = model.weights[0] if allowed else 0.0
        for k, h in enumerate(model.histories(history)):
            tot = model.totals[k].get(h, 0)
            if not tot:
                continue
            cnt = model.counts[k][h]
            if k == 0 and unigram_mass is not None:
                mass = unigram_mass
            else:
                mass = sum(c for w, c in cnt.items() if w in self.aset)
            if not mass:
                continue
            lam = model.weights[k + 1] / tot
            self.parts.append((lam, cnt, mass))
            z += lam * mass
        self.z = z

    def score(self, w: str) -> float:
        s = self.model.weights[0] / len(self.allowed)
        for lam, cnt, _m in self.parts:
            c = cnt.get(w)
            if c:
                s += lam * c
        return s

    def prob(self, w: str) -> float:
        if w not in self.aset or self.z == 0.0:
            return 0.0
        return self.score(w) / self.z

    def top(self, k: int, by_unigram: Sequence[str], rank: Mapping[str, int]) -> list[tuple[float, str]]:
        """The ``k`` most probable allowed symbols.

        Symbols never seen after any non-empty history rank by unigram count,
        so the candidates are the seen followers plus the unigram leaders.
        """
        cand = set()
        for lam, cnt, _m in self.parts:
            if cnt is not self.model.counts[0][()]:
                cand.update(w for w in cnt if w in self.aset)
        cand.update(by_unigram[:k])
        probs = [(self.prob(w), w) for w in cand]
        # ties: the unigram ranking, then the symbol itself
        probs.sort(key=lambda t: (-t[0], rank.get(t[1], len(rank)), t[1]))
        return probs[:k]

    def sample(self, rng: random.Random) -> str:
        r = rng.random() * self.z
        floor = self.model.weights[0]
        if r < floor:
            return self.allowed[int(rng.random() * len(self.allowed))]
        r -= floor
        for lam, cnt, mass in self.parts:
            part = lam * mass
            if r < part:
                x = rng.random() * mass
                for w in sorted(cnt):
                    if w in self.aset:
                        x -= cnt[w]
                        if x < 0:
                            return w
                break
            r -= part
        return self.allowed[-1]


class ConstrainedDecoder:
    """Grammar-constrained decoding of expressions of a given typecode."""

    def __init__(self, grammar: Grammar, model: NGramModel, var_types: Mapping[str, str],
                 max_tokens: int = 64) -> None:
        self.grammar = grammar
        self.model = model
        self.var_types = dict(var_types)
        self.max_tokens = max_tokens
        self._allowed: dict = {}
        self._min_len: dict[str, int] = {}

    def allowed(self, typecode: str, variables: Iterable[str] | None = None):
        """(symbol list ranked by unigram count, its unigram mass) for a typecode."""
        key = (typecode, None if variables is None else frozenset(variables))
        hit = self._allowed.get(key)
        if hit is not None:
            return hit
        syms = [r.label for r in self.grammar.rules.values() if r.typecode == typecode]
        pool = self.var_types if variables is None else {v: self.var_types[v] for v in variables
                                                         if v in self.var_types}
        syms += [v for v, tc in pool.items() if tc == typecode]
        uni = self.model.unigram()
        syms.sort(key=lambda w: -uni.get(w, 0))
        mass = sum(uni.get(w, 0) for w in syms)
        hit = self._allowed[key] = (syms, mass, {w: i for i, w in enumerate(syms)})
        return hit

    def _children(self, sym: str) -> list[str]:
        rule = self.grammar.rules.get(sym)
        if rule is None:
            return []
        return [rule.var_types[v] for v in rule.var_order]

    def min_length(self, typecode: str) -> int:
        """Fewest pre-order symbols of any expression of ``typecode`` (inf if none)."""
        if not self._min_len:
            tcs = {r.typecode for r in self.grammar.rules.values()} | set(self.var_types.values())
            best = {tc: math.inf for tc in tcs}
            for tc in self.var_types.values():
                best[tc] = 1
            changed = True
            while changed:
                changed = False
                for r in self.grammar.rules.values():
                    n = 1 + sum(best.get(r.var_types[v], math.inf) for v in r.var_order)
                    if n < best[r.typecode]:
                        best[r.typecode] = n
                        changed = True
            self._min_len = best
        return self._min_len.get(typecode, math.inf)

    def build(self, seq: Sequence[str]) -> Expr:
        out: list[Expr] = []
        for sym in reversed(seq):
            rule = self.grammar.rules.get(sym)
            if rule is None:
                out.append(mkvar(sym, self.var_types[sym]))
            else:
                k = len(rule.var_order)
                kids = [out.pop() for _ in range(k)]
                out.append(mknode(sym, rule.typecode, kids))
        return out[0]

    def _fits(self, pending: Sequence[str], length: int) -> bool:
        return length + sum(self.min_length(tc) for tc in pending) <= self.max_tokens

    def beam_search(self, typecode: str, beam: int, variables: Iterable[str] | None = None,
                    prefix: Sequence[str] = ()) -> list[tuple[Expr, float]]:
        """Up to ``beam`` distinct expressions with their log-probabilities, best first."""
        if beam < 1:
            return []
        variables = None if variables is None else tuple(sorted(variables))
        start = list(prefix) or [start_marker(typecode)]
        # (logprob, sequence, pending typecodes)
        beams = [(0.0, (), (typecode,))]
        done: list[tuple[float, tuple]] = []
        while beams:
            cand = []
            for lp, seq, pending in beams:
                tc = pending[-1]
                syms, mass, rank = self.allowed(tc, variables)
                if not syms:
                    continue
                dist = self.model.distribution(start + list(seq), syms, mass, rank)
                for p, w in dist.top(beam, syms, rank):
                    if p <= 0.0:
                        continue
                    nxt = pending[:-1] + tuple(reversed(self._children(w)))
                    seq2 = seq + (w,)
                    if not self._fits(nxt, len(seq2)):
                        continue
                    cand.append((lp + math.log(p), seq2, nxt))
            cand.sort(key=lambda c: (-c[0], c[1]))
            beams = []
            for c in cand:
                if not c[2]:
                    done.append((c[0], c[1]))
                else:
                    beams.append(c)
                if len(beams) >= beam:
                    break
            done.sort(key=lambda d: (-d[0], d[1]))
            done = done[:beam]
            if len(done) >= beam and (not beams or beams[0][0] <= done[-1][0]):
                break
        return [(self.build(seq), lp) for lp, seq in done]

    def sample(self, typecode: str, rng: random.Random, variables: Iterable[str] | None = None,
               prefix: Sequence[str] = ()) -> Expr | None:
        """One expression sampled left to right, or None past the token cap."""
        variables = None if variables is None else tuple(sorted(variables))
        start = list(prefix) or [start_marker(typecode)]
        seq: list[str] = []
        pending = [typecode]
        while pending:
            tc = pending.pop()
            syms, mass, rank = self.allowed(tc, variables)
            if not syms:
                return None
            # keep only continuations that can still finish under the cap
            ok = [w for w in syms if self._fits(pending + list(reversed(self._children(w))), len(seq) + 1)]
            if not ok:
                return None
            if len(ok) == len(syms):
                dist = self.model.distribution(start + seq, syms, mass, rank)
            else:
                dist = self.model.distribution(start + seq, ok)
            w = dist.sample(rng)
            seq.append(w)
            pending.extend(reversed(self._children(w)))
        return self.build(seq)


def training_sequences(exprs: Iterable[Expr]) -> Iterable[list[str]]:
    """Start-marked pre-order sequences of every distinct non-variable subexpression."""
    for e in exprs:
        for sub in e.subexprs():
            if sub.is_var:
                continue
            yield [start_marker(sub.typecode)] + preorder_symbols(sub)


def fit_on_frames(frames, n: int = 3, weights=None) -> NGramModel:
    def exprs():
        for f in frames:
            yield f.assertion
            yield from f.hypotheses
    return NGramModel(n, weights).fit(training_sequences(exprs()))
