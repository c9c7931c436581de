"""tf-idf similarity over pre-order symbol bags."""
from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Mapping, Sequence

from .expr import Expr, preorder_symbols


def frame_tokens(assertion: Expr, hypotheses: Iterable[Expr] = ()) -> list[str]:
    toks = preorder_symbols(assertion)
    for h in hypotheses:
        toks.extend(preorder_symbols(h))
    return toks


class TfIdf:
    """Document frequencies plus smoothed idf weights.

    ``idf(t) = ln((1 + N) / (1 + df(t))) + 1``, so symbols unseen in the
    fitted documents still get a positive weight.
    """

    def __init__(self) -> None:
        self.df: Counter = Counter()
        self.n_docs = 0
        self._idf: dict[str, float] = {}

    def fit(self, docs: Iterable[Sequence[str]]) -> "TfIdf":
        for d in docs:
            self.n_docs += 1
            self.df.update(set(d))
        self._idf = {}
        return self

    def idf(self, tok: str) -> float:
        w = self._idf.get(tok)
        if w is None:
            w = self._idf[tok] = math.log((1 + self.n_docs) / (1 + self.df.get(tok, 0))) + 1.0
        return w

    def vector(self, tokens: Sequence[str]) -> dict[str, float]:
        """L2-normalized tf-idf vector (raw term counts as tf)."""
        tf = Counter(tokens)
        vec = {t: c * self.idf(t) for t, c in tf.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        if norm == 0.0:
            return {}
        return {t: v / norm for t, v in vec.items()}

    def similarity(self, a: Sequence[str], b: Sequence[str]) -> float:
        return cosine(self.vector(a), self.vector(b))


def cosine(u: Mapping[str, float], v: Mapping[str, float]) -> float:
    """Dot product of two normalized sparse vectors, clipped into [0, 1]."""
    if len(u) > len(v):
        u, v = v, u
    s = sum(w * v.get(t, 0.0) for t, w in u.items())
    return min(1.0, max(0.0, s))


def tfidf_relevance(candidate: Sequence[str], context: Sequence[str], stats: TfIdf) -> float:
    return stats.similarity(candidate, context)


class Ranker:
    """Ranks frames against a query with cached document vectors."""

    def __init__(self, stats: TfIdf) -> None:
        self.stats = stats
        self._cache: dict = {}

    def frame_vector(self, frame) -> dict[str, float]:
        v = self._cache.get(frame.label)
        if v is None:
            v = self._cache[frame.label] = self.stats.vector(frame_tokens(frame.assertion, frame.hypotheses))
        return v

    def scores(self, query: Sequence[str], frames) -> list[float]:
        q = self.stats.vector(query)
        return [cosine(q, self.frame_vector(f)) for f in frames]

    def rank(self, query: Sequence[str], frames) -> list:
        """Frames by decreasing score; ties keep database order."""
        frames = list(frames)
        sc = self.scores(query, frames)
        order = sorted(range(len(frames)), key=lambda i: (-sc[i], frames[i].index))
        return [(frames[i], sc[i]) for i in order]


def fit_on_frames(frames) -> TfIdf:
    return TfIdf().fit(frame_tokens(f.assertion, f.hypotheses) for f in frames)
