"""Backward proof search by Monte Carlo tree search over proof steps.

The search tree alternates expression nodes (goals) and proof-step nodes.
A goal is solved when it is a hypothesis of the target or when one of its
steps is solved; a step is solved when all of its preconditions are.  Each
pass walks down from the root: at a goal it either opens a new step or
follows the UCB-best existing one, at a step it follows the precondition with
the lowest payoff.  A pass ends as soon as one new step has been created.

The default heuristics are non-neural: tf-idf relevance to pick the
background theorem, an n-gram model to fill variables that occur only in its
hypotheses, and a constant initial payoff.
"""
from __future__ import annotations

import math
import time
import weakref
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .corpus import Database, Frame
from .errors import MMError
from .expr import Expr, apply_substitution, mkvar, preorder_symbols, reachable
from .ngram import ConstrainedDecoder, fit_on_frames as fit_ngram, start_marker
from .tasks import ProofTask
from .tfidf import Ranker, TfIdf, fit_on_frames as fit_tfidf, frame_tokens
from .verify import ProofStep, ProofTree, check_proof_step, verify_proof_tree

UCB_C = math.sqrt(2.0)
CONSTANT_PAYOFF = 0.5


# --- applicability index -----------------------------------------------------

class ApplicabilityIndex:
    """Provable assertions bucketed by root symbol and child heads.

    A goal can only be reached from an assertion whose root symbol equals the
    goal's and whose children are either variables or share the head symbol
    of the corresponding goal child.  Assertions that are a bare variable
    reach every goal of their typecode.
    """

    def __init__(self, frames: Iterable[Frame]) -> None:
        self.buckets: dict[tuple, list[Frame]] = defaultdict(list)
        self.wild: dict[str, list[Frame]] = defaultdict(list)
        for f in frames:
            a = f.assertion
            if a.is_var:
                self.wild[a.typecode].append(f)
            else:
                heads = tuple(None if c.is_var else c.symbol for c in a.children)
                self.buckets[(a.symbol, heads)].append(f)

    def _keys(self, goal: Expr):
        slots = [(None,) if c.is_var else (c.symbol, None) for c in goal.children]
        keys = [()]
        for s in slots:
            keys = [k + (x,) for k in keys for x in s]
        return [(goal.symbol, k) for k in keys]

    def candidates(self, goal: Expr) -> list[Frame]:
        """Frames that may reach ``goal``, in database order (unchecked)."""
        out = list(self.wild.get(goal.typecode, ()))
        if not goal.is_var:
            for k in self._keys(goal):
                out.extend(self.buckets.get(k, ()))
        out.sort(key=lambda f: f.index)
        return out

    def applicable(self, goal: Expr, limit: int) -> list[tuple[Frame, dict]]:
        """(frame, partial substitution) for frames with index < limit reaching ``goal``."""
        out = []
        for f in self.candidates(goal):
            if f.index >= limit:
                continue
            phi = reachable(goal, f.assertion)
            if phi is not None:
                out.append((f, phi))
        return out


_INDEXES: "weakref.WeakKeyDictionary[Database, tuple]" = weakref.WeakKeyDictionary()


def applicability_index(db: Database) -> tuple[ApplicabilityIndex, ApplicabilityIndex]:
    """(all provable assertions, zero-hypothesis ones), cached per database."""
    hit = _INDEXES.get(db)
    if hit is None:
        hit = (ApplicabilityIndex(db.assertions),
               ApplicabilityIndex(f for f in db.assertions if not f.hypotheses))
        _INDEXES[db] = hit
    return hit


def _background_limit(background) -> int | None:
    lim = getattr(background, "_limit", None)
    return lim if isinstance(lim, int) else None


def trivial_goal_check(goal: Expr, background, db: Database,
                       ambient_dv: Iterable[frozenset] | None = None) -> ProofStep | None:
    """A step closing ``goal`` with a zero-hypothesis background theorem, if any.

    Among several, the earliest theorem in database order wins.  Matches whose
    substitution violates a disjointness condition are skipped.
    """
    _, zero = applicability_index(db)
    for f in zero.candidates(goal):
        if f.label not in background:
            continue
        phi = reachable(goal, f.assertion)
        if phi is None:
            continue
        step = ProofStep(f.label, {v: phi[v] for v in f.mandatory_vars})
        try:
            check_proof_step(step, db, ambient_dv)
        except MMError:
            continue
        return step
    return None


# --- heuristics -------------------------------------------------------------

def constant_payoff(expr: Expr, target: Frame) -> float:
    return CONSTANT_PAYOFF


@dataclass
class ProverHeuristics:
    """Relevance ranking, substitution proposals and initial payoffs."""

    db: Database
    tfidf: TfIdf
    decoder: ConstrainedDecoder
    payoff: Callable[[Expr, Frame], float] = constant_payoff
    ucb_c: float = UCB_C

    def __post_init__(self) -> None:
        self.ranker = Ranker(self.tfidf)

    @classmethod
    def build(cls, db: Database, frames: Sequence[Frame], *, ngram_order: int = 3,
              max_tokens: int = 64, payoff=constant_payoff, ucb_c: float = UCB_C) -> "ProverHeuristics":
        """Fit tf-idf statistics and the n-gram model on ``frames``."""
        var_types = {v: db.float_types[v] for v in db.float_types}
        model = fit_ngram(frames, ngram_order)
        dec = ConstrainedDecoder(db.grammar, model, var_types, max_tokens=max_tokens)
        return cls(db, fit_tfidf(frames), dec, payoff, ucb_c)

    def rank(self, goal: Expr, target: Frame, frames: Sequence[Frame]) -> list[tuple[Frame, float]]:
        return self.ranker.rank(frame_tokens(goal, target.hypotheses), frames)

    def complete(self, frame: Frame, phi: dict, target: Frame, beam: int) -> list[tuple[dict, float]]:
        """Up to ``beam`` completions of ``phi`` over the frame's mandatory variables.

        Unbound variables are filled in frame order.  Each is decoded with the
        pre-order prefix of the first hypothesis containing it as context, and
        the joint candidates are pruned to the ``beam`` best by log-probability.
        """
        missing = [v for v in frame.mandatory_vars if v not in phi]
        partial = [(dict(phi), 0.0)]
        variables = tuple(target.mandatory_vars)
        for v in missing:
            tc = frame.float_types[v]
            nxt = []
            for sub, lp in partial:
                prefix = _context_prefix(frame, v, sub)
                for e, elp in self.decoder.beam_search(tc, beam, variables, prefix):
                    d = dict(sub)
                    d[v] = e
                    nxt.append((d, lp + elp))
            nxt.sort(key=lambda t: -t[1])
            partial = nxt[:beam]
            if not partial:
                return []
        return partial


_HOLE = "\x00hole"


def _context_prefix(frame: Frame, var: str, phi: dict) -> list[str]:
    """Start marker plus the pre-order symbols preceding ``var`` in its first hypothesis."""
    for h in frame.hypotheses:
        if var in h.vars:
            sub = dict(phi)
            sub[var] = mkvar(_HOLE, frame.float_types[var])
            syms = preorder_symbols(apply_substitution(h, sub, partial=True))
            return [start_marker(h.typecode)] + syms[:syms.index(_HOLE)]
    return [start_marker(frame.float_types[var])]


# --- search tree --------------------------------------------------------------

class ExprNode:
    __slots__ = ("idx", "expr", "parent", "steps", "payoff", "initial", "visits", "solved",
                 "dead", "exhausted", "is_hyp", "ranked", "pos", "queue", "seen")

    def __init__(self, idx: int, expr, parent, initial: float, is_hyp: bool = False) -> None:
        self.idx = idx
        self.expr = expr
        self.parent = parent
        self.steps: list[StepNode] = []
        self.initial = initial
        self.visits = 0
        self.is_hyp = is_hyp
        self.solved = is_hyp
        self.dead = False
        self.exhausted = is_hyp
        self.payoff = 1.0 if is_hyp else initial
        # expansion state
        self.ranked = None
        self.pos = 0
        self.queue: list = []
        self.seen: set = set()


class StepNode:
    __slots__ = ("idx", "label", "subst", "parent", "children", "payoff", "visits", "solved", "dead")

    def __init__(self, idx: int, label, subst, parent: ExprNode) -> None:
        self.idx = idx
        self.label = label
        self.subst = subst
        self.parent = parent
        self.children: list[ExprNode] = []
        self.payoff = 1.0
        self.visits = 0
        self.solved = False
        self.dead = False


def _mean(steps, payoffs) -> float:
    # a step counts at least once, even before its first backup
    w = [max(s.visits, 1) for s in steps]
    return sum(a * p for a, p in zip(w, payoffs)) / sum(w)


def refresh_step(s: StepNode) -> None:
    s.payoff = min((c.payoff for c in s.children), default=1.0)
    s.solved = s.solved or all(c.solved for c in s.children)
    s.dead = not s.solved and any(c.dead for c in s.children)


def refresh_expr(n: ExprNode) -> None:
    n.solved = n.solved or n.is_hyp or any(s.solved for s in n.steps)
    n.dead = not n.solved and n.exhausted and all(s.dead for s in n.steps)
    if n.solved:
        n.payoff = 1.0
    elif n.dead:
        n.payoff = 0.0
    elif not n.steps:
        n.payoff = n.initial
    else:
        n.payoff = _mean(n.steps, [s.payoff for s in n.steps])


class SearchTree:
    """The bipartite search tree, independent of how steps are proposed.

    ``select`` walks one pass down to the goal to expand; the caller then
    either ``add_step``s there or ``exhaust``s the goal, and ``backup``
    updates visits, payoffs and solved flags along the path.
    """

    def __init__(self, ucb_c: float = UCB_C) -> None:
        self.ucb_c = ucb_c
        self.counter = 0
        self.exprs: list[ExprNode] = []
        self.steps: list[StepNode] = []
        self.root: ExprNode | None = None

    def new_expr(self, expr, parent, initial: float, is_hyp: bool = False) -> ExprNode:
        n = ExprNode(self.counter, expr, parent, initial, is_hyp)
        self.counter += 1
        self.exprs.append(n)
        if parent is None:
            self.root = n
        return n

    @property
    def done(self) -> bool:
        return self.root.solved or self.root.dead

    def choose(self, n: ExprNode) -> StepNode | None:
        """UCB choice at ``n``: a live child step, or None to open a new one.

        Opening a new step is scored like a child with the goal's initial
        payoff and one more visit than there are children.  Ties go to the
        earliest created child.
        """
        logn = math.log(n.visits + 1)
        best, best_key = None, None
        for s in n.steps:
            if s.dead:
                continue
            key = s.payoff + self.ucb_c * math.sqrt(logn / max(s.visits, 1))
            if best_key is None or key > best_key:
                best, best_key = s, key
        if not n.exhausted:
            key = n.initial + self.ucb_c * math.sqrt(logn / (len(n.steps) + 1))
            if best_key is None or key > best_key:
                return None
        if best is None:
            raise RuntimeError("choose() on a closed goal")
        return best

    def select(self) -> tuple[list, ExprNode]:
        """Walk down from the root; returns the path and the goal to expand."""
        n = self.root
        path: list = [n]
        while True:
            s = self.choose(n)
            if s is None:
                return path, n
            path.append(s)
            n = min((c for c in s.children if not c.solved), key=lambda c: (c.payoff, c.idx))
            path.append(n)

    def add_step(self, n: ExprNode, label, subst, preconditions: Sequence[tuple]) -> StepNode:
        """Attach a step under ``n``; preconditions are (expr, initial, is_hyp)."""
        s = StepNode(self.counter, label, subst, n)
        self.counter += 1
        self.steps.append(s)
        n.steps.append(s)
        for expr, init, is_hyp in preconditions:
            s.children.append(self.new_expr(expr, s, init, is_hyp))
        refresh_step(s)
        return s

    def exhaust(self, n: ExprNode) -> None:
        n.exhausted = True

    def backup(self, path: Sequence) -> None:
        """Count a visit on every node of ``path`` and refresh them bottom-up."""
        for node in path:
            node.visits += 1
        for node in reversed(path):
            if isinstance(node, ExprNode):
                refresh_expr(node)
            else:
                refresh_step(node)

    def recompute(self) -> dict[int, tuple[bool, bool, float]]:
        """(solved, dead, payoff) per node, recomputed from scratch."""
        out: dict[int, tuple[bool, bool, float]] = {}

        def expr(n: ExprNode) -> tuple[bool, bool, float]:
            kids = [step(s) for s in n.steps]
            solved = n.is_hyp or any(k[0] for k in kids)
            dead = not solved and n.exhausted and all(k[1] for k in kids)
            if solved:
                p = 1.0
            elif dead:
                p = 0.0
            elif not kids:
                p = n.initial
            else:
                p = _mean(n.steps, [k[2] for k in kids])
            out[n.idx] = (solved, dead, p)
            return out[n.idx]

        def step(s: StepNode) -> tuple[bool, bool, float]:
            kids = [expr(c) for c in s.children]
            solved = all(k[0] for k in kids)
            dead = not solved and any(k[1] for k in kids)
            out[s.idx] = (solved, dead, min((k[2] for k in kids), default=1.0))
            return out[s.idx]

        expr(self.root)
        return out

    def nodes(self):
        yield from self.exprs
        yield from self.steps


# --- prover -------------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    max_passes: int = 1000
    time_limit: float = 30.0
    beam_widths: tuple = (1, 5, 20)

    def __post_init__(self) -> None:
        if self.max_passes < 1 or self.time_limit <= 0 or not self.beam_widths:
            raise ValueError("budget values must be positive")
        if any(b < 1 for b in self.beam_widths):
            raise ValueError("beam widths must be positive")


DESK_BUDGET = Budget(1000, 30.0, (1, 5, 20))
FULL_BUDGET = Budget(10000, 300.0, (1, 5, 20))


@dataclass
class ProofResult:
    label: str
    tree: ProofTree | None
    passes: int
    wall_ms: float
    steps_created: int
    beam: int
    trace: list = field(default_factory=list, repr=False)

    @property
    def solved(self) -> bool:
        return self.tree is not None

    @property
    def proof_len(self) -> int:
        return self.tree.step_count if self.tree is not None else 0

    def stats(self) -> dict:
        return {"label": self.label, "solved": self.solved, "passes": self.passes,
                "wall_ms": round(self.wall_ms, 3), "steps_created": self.steps_created,
                "beam": self.beam, "proof_len": self.proof_len}


class _Search:
    def __init__(self, task: ProofTask, h: ProverHeuristics, beam: int) -> None:
        self.task = task
        self.target = task.target
        self.h = h
        self.db = h.db
        self.beam = beam
        self.ambient = self.target.proof_dv
        self.hyps = set(self.target.hypotheses)
        self.tc = self.target.typecode
        lim = _background_limit(task.background)
        self.limit = self.target.index if lim is None else lim
        self.index, _ = applicability_index(self.db)
        self.trace: list = []
        self.tree = SearchTree(h.ucb_c)

    def _pre(self, e: Expr) -> tuple:
        is_hyp = e in self.hyps
        return e, 1.0 if is_hyp else self.h.payoff(e, self.target), is_hyp

    def close_trivial(self, n: ExprNode) -> None:
        """Hypotheses and trivial goals are closed on creation, never expanded."""
        if n.is_hyp:
            return
        step = trivial_goal_check(n.expr, self.task.background, self.db, self.ambient)
        if step is not None:
            self.tree.add_step(n, step.label, step.subst, ())
            self.trace.append(("trivial", n.idx, step.label))
            refresh_expr(n)

    def add_step(self, n: ExprNode, frame: Frame, phi: dict, pre: list[Expr]) -> StepNode:
        s = self.tree.add_step(n, frame.label, phi, [self._pre(e) for e in pre])
        self.trace.append(("step", n.idx, frame.label, tuple(phi[v] for v in frame.mandatory_vars)))
        for c in s.children:
            self.close_trivial(c)
        refresh_step(s)
        return s

    def ranked(self, goal: Expr) -> list[tuple[Frame, dict]]:
        """Applicable background theorems by decreasing relevance, with their partial φ."""
        app = self.index.applicable(goal, self.limit)
        phis = {f.label: phi for f, phi in app}
        return [(f, phis[f.label]) for f, _s in self.h.rank(goal, self.target, [f for f, _ in app])]

    def sound(self, frame: Frame, phi: dict) -> list[Expr] | None:
        try:
            return check_proof_step(ProofStep(frame.label, phi), self.db, self.ambient).preconditions
        except MMError:
            return None

    def next_candidate(self, n: ExprNode, path_exprs: set):
        """The next new, sound, non-looping step for goal ``n``, or None."""
        while True:
            while n.queue:
                frame, phi = n.queue.pop(0)
                key = (frame.label, tuple(phi[v] for v in frame.mandatory_vars))
                if key in n.seen:
                    continue
                n.seen.add(key)
                pre = self.sound(frame, phi)
                if pre is None or any(p in path_exprs for p in pre):
                    continue
                return frame, phi, pre
            if n.ranked is None:
                n.ranked = self.ranked(n.expr)
            if n.pos >= len(n.ranked):
                return None
            frame, phi = n.ranked[n.pos]
            n.pos += 1
            n.queue.extend((frame, full) for full, _lp in self.h.complete(frame, phi, self.target, self.beam))

    def extract(self, n: ExprNode) -> ProofTree:
        if n.is_hyp:
            return ProofTree.leaf(n.expr, self.tc)
        s = min((s for s in n.steps if s.solved), key=lambda s: s.idx)
        frame = self.db.frames[s.label]
        return ProofTree(n.expr, frame.typecode, s.label,
                         tuple(s.subst[v] for v in frame.mandatory_vars), tuple(frame.mandatory_vars),
                         tuple(self.extract(c) for c in s.children))

    def run(self, budget: Budget) -> ProofResult:
        t0 = time.perf_counter()
        deadline = t0 + budget.time_limit
        tree = self.tree
        # the first pass plants the root, closing it at once when trivial
        root = tree.new_expr(self.target.assertion, None, *self._pre(self.target.assertion)[1:])
        self.close_trivial(root)
        tree.backup([root])
        passes = 1
        while not tree.done and passes < budget.max_passes and time.perf_counter() < deadline:
            passes += 1
            path, n = tree.select()
            exprs = {p.expr for p in path if isinstance(p, ExprNode)}
            cand = self.next_candidate(n, exprs)
            if cand is None:
                tree.exhaust(n)
                self.trace.append(("exhausted", n.idx))
            else:
                path.append(self.add_step(n, *cand))
            tree.backup(path)
        proof = None
        if tree.root.solved:
            proof = self.extract(tree.root)
            v = verify_proof_tree(self.target, proof, self.db)
            if not v.ok:
                raise AssertionError(f"{self.target.label}: search produced an invalid proof: {v.reason}")
        wall = (time.perf_counter() - t0) * 1000.0
        return ProofResult(self.target.label, proof, passes, wall, len(tree.steps), self.beam, self.trace)


def prove(task: ProofTask, h: ProverHeuristics, budget: Budget = DESK_BUDGET,
          beam: int | None = None) -> ProofResult:
    """One search attempt on ``task`` with substitution beam width ``beam``.

    Stops when the root is solved, every branch is closed, or the pass or
    time budget runs out.  A returned proof has passed the verifier.
    """
    beam = budget.beam_widths[0] if beam is None else beam
    return _Search(task, h, beam).run(budget)


def prove_protocol(task: ProofTask, h: ProverHeuristics, budget: Budget = DESK_BUDGET) -> list[ProofResult]:
    """One attempt per beam width, stopping at the first success."""
    out = []
    for beam in budget.beam_widths:
        r = prove(task, h, budget, beam)
        out.append(r)
        if r.solved:
            break
    return out


def expand_expression(goal: Expr, task: ProofTask, h: ProverHeuristics, beam: int,
                      start: int = 0) -> tuple[list[ProofStep], int]:
    """Candidate steps for ``goal`` from the ``start``-th applicable theorem on.

    Applicable background theorems are ranked by relevance; the first one
    from position ``start`` with at least one sound completion supplies up to
    ``beam`` candidates.  Returns them with the position to resume from.
    """
    s = _Search(task, h, beam)
    ranked = s.ranked(goal)
    pos = start
    while pos < len(ranked):
        frame, phi = ranked[pos]
        pos += 1
        out, seen = [], set()
        for full, _lp in h.complete(frame, phi, task.target, beam):
            key = tuple(full[v] for v in frame.mandatory_vars)
            if key not in seen and s.sound(frame, full) is not None:
                seen.add(key)
                out.append(ProofStep(frame.label, full))
        if out:
            return out, pos
    return [], pos
