"""Forward theorem synthesis by proof-step construction and tree grafting.

The pool ``G`` holds proof trees deduplicated by signature (root plus the
set of leaf expressions).  Each new theorem comes from one proof step: an
invocable theorem is sampled by usage frequency, each of its hypotheses is
matched against the roots of pool trees, the remaining variables are filled
by a substitution sampler, and the chosen trees are grafted under the step.
"""
from __future__ import annotations

import bisect
import itertools
import logging
import math
import multiprocessing
import random
import time
from collections import Counter
from collections.abc import Set
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from .corpus import Database, Frame
from .errors import DVViolation, MMError
from .expr import Expr, mkvar, preorder_symbols, reachable
from .ngram import ConstrainedDecoder, fit_on_frames as fit_ngram
from .tasks import ProofTask
from .tfidf import TfIdf, cosine, fit_on_frames as fit_tfidf, frame_tokens
from .verify import ProofTree, dv_pairs_induced, verify_proof_tree

log = logging.getLogger(__name__)

# Frame variables are renamed into this private namespace while matching, so
# they never clash with the variables that occur inside pool trees.
_PRIVATE = "·"


def signature(tree: ProofTree) -> tuple:
    return (tree.expr, tree.typecode, tree.leaf_set)


def tree_size(tree: ProofTree) -> tuple[int, int]:
    return (tree.step_count, tree.node_count)


class TreePool:
    """Signature-deduplicated proof trees with a root index for matching."""

    def __init__(self) -> None:
        self.trees: dict[tuple, ProofTree] = {}
        self.order: dict[tuple, int] = {}
        self.by_tc: dict[str, list[tuple]] = {}
        self.by_head: dict[tuple, list[tuple]] = {}
        self.by_head2: dict[tuple, dict[tuple, list[tuple]]] = {}
        self.node_exprs: set[Expr] = set()
        self.replacements = 0

    def __len__(self) -> int:
        return len(self.trees)

    def __contains__(self, sig) -> bool:
        return sig in self.trees

    def __iter__(self):
        return iter(self.trees.values())

    def add(self, tree: ProofTree) -> bool:
        """Insert ``tree``; on a signature collision keep the smaller tree.

        Returns True when the signature was new.
        """
        sig = signature(tree)
        old = self.trees.get(sig)
        if old is not None:
            if tree_size(tree) < tree_size(old):
                self.trees[sig] = tree
                self.replacements += 1
                self.node_exprs.update(tree.node_exprs())
            return False
        self.trees[sig] = tree
        self.order[sig] = len(self.order)
        root = tree.expr
        self.by_tc.setdefault(tree.typecode, []).append(sig)
        key = (tree.typecode, root.symbol, root.is_var)
        self.by_head.setdefault(key, []).append(sig)
        heads = tuple(c.symbol for c in root.children)
        self.by_head2.setdefault(key, {}).setdefault(heads, []).append(sig)
        self.node_exprs.update(tree.node_exprs())
        return True

    def compatible(self, pattern: Expr, phi: dict, typecode: str, cap: int,
                   rng: random.Random) -> list[tuple[ProofTree, dict]]:
        """Trees whose root ``pattern`` (under pre-binding ``phi``) reaches.

        At most ``cap`` of them, a uniformly random subset when there are more.
        """
        head = pattern
        if head.is_var and head.symbol in phi:
            head = phi[head.symbol]
        if head.is_var and head.symbol.startswith(_PRIVATE):
            # an unbound variable matches every root of its typecode
            sigs = [s for s in self.by_tc.get(typecode, ()) if s[0].typecode == head.typecode]
            if len(sigs) > cap:
                sigs = rng.sample(sigs, cap)
            return [(self.trees[s], {**phi, head.symbol: s[0]}) for s in sigs]
        key = (typecode, head.symbol, head.is_var)
        buckets = self.by_head2.get(key)
        if not buckets:
            return []
        if head is pattern and _is_linear_shallow(pattern, phi):
            sigs = self.by_head[key]
            if len(sigs) > cap:
                sigs = rng.sample(sigs, cap)
            return [(self.trees[s], reachable(s[0], pattern, phi)) for s in sigs]
        want = []
        for c in head.children:
            if c.is_var and c.symbol.startswith(_PRIVATE):
                c = phi.get(c.symbol, c)
            want.append(None if c.is_var and c.symbol.startswith(_PRIVATE) else c.symbol)
        out = []
        for heads, sigs in buckets.items():
            if any(w is not None and w != h for w, h in zip(want, heads)):
                continue
            for s in sigs:
                m = reachable(s[0], pattern, phi)
                if m is not None:
                    out.append((self.trees[s], m))
        if len(out) > cap:
            out = rng.sample(out, cap)
        return out

    def snapshot_trees(self) -> list[ProofTree]:
        return list(self.trees.values())


def _is_linear_shallow(pattern: Expr, phi: dict) -> bool:
    seen = set()
    for c in pattern.children:
        if not c.is_var or not c.symbol.startswith(_PRIVATE) or c.symbol in phi or c.symbol in seen:
            return False
        seen.add(c.symbol)
    return True


def one_step_tree(frame: Frame) -> ProofTree:
    args = tuple(mkvar(v, frame.float_types[v]) for v in frame.mandatory_vars)
    kids = tuple(ProofTree.leaf(h, tc) for h, tc in zip(frame.hypotheses, frame.hyp_typecodes))
    return ProofTree(frame.assertion, frame.typecode, frame.label, args, frame.mandatory_vars, kids)


def init_tree_pool(theorems: Iterable[Frame], proofs: dict[str, ProofTree]) -> TreePool:
    """Every maximal subtree of each available proof; hypotheses and a
    one-step tree for each theorem without one."""
    pool = TreePool()
    for f in theorems:
        p = proofs.get(f.label)
        if p is not None:
            for node in p.postorder_unique():
                pool.add(node)
        else:
            for h, tc in zip(f.hypotheses, f.hyp_typecodes):
                pool.add(ProofTree.leaf(h, tc))
            pool.add(one_step_tree(f))
    return pool


@dataclass(eq=False)
class InvocableSet(Set):
    labels: list[str]
    frequency: Counter

    def __contains__(self, label) -> bool:
        return label in self._set

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __post_init__(self) -> None:
        self._set = set(self.labels)
        # add-one smoothing keeps never-used invocables reachable
        self._cum = list(itertools.accumulate(self.frequency.get(lab, 0) + 1 for lab in self.labels))

    def sample(self, rng: random.Random) -> str:
        return self.labels[bisect.bisect_right(self._cum, rng.random() * self._cum[-1])]


def build_invocable(train: Sequence[ProofTask]) -> InvocableSet:
    labels: list[str] = []
    if train:
        last = max(train, key=lambda t: t.target.index)
        labels = list(last.background)
    freq: Counter = Counter()
    inv = set(labels)
    for t in train:
        if t.target.proof is not None:
            for node in t.target.proof.postorder_unique():
                if node.label in inv:
                    freq[node.label] += 1
    return InvocableSet(labels, freq)


# --- policies --------------------------------------------------------------

class GenPolicy:
    """Relevance scoring of candidate trees plus a substitution sampler."""

    name = "base"

    def relevance(self, frame: Frame, candidates: Sequence[ProofTree]) -> list[float]:
        return [0.0] * len(candidates)

    def substitute(self, frame: Frame, phi: dict, var: str, typecode: str, rng: random.Random) -> Expr | None:
        raise NotImplementedError


class RandomSubstitution:
    """Images drawn uniformly from the distinct subexpressions of a typecode
    occurring in the training statements."""

    def __init__(self, frames: Iterable[Frame], var_types: dict[str, str]) -> None:
        by_tc: dict[str, dict[Expr, None]] = {}
        for f in frames:
            for e in (f.assertion, *f.hypotheses):
                for sub in e.subexprs():
                    by_tc.setdefault(sub.typecode, {})[sub] = None
        self.by_tc = {tc: list(d) for tc, d in by_tc.items()}
        self.var_types = var_types

    def __call__(self, typecode: str, rng: random.Random) -> Expr | None:
        pool = self.by_tc.get(typecode)
        if pool:
            return pool[int(rng.random() * len(pool))]
        vs = sorted(v for v, tc in self.var_types.items() if tc == typecode)
        return mkvar(vs[int(rng.random() * len(vs))], typecode) if vs else None


class Policy(GenPolicy):
    def __init__(self, name: str, relevance: str, substitution: str, frames: Sequence[Frame],
                 db: Database, ngram_order: int = 3, max_tokens: int = 64) -> None:
        self.name = name
        self.relevance_kind = relevance
        self.substitution_kind = substitution
        self.tfidf: TfIdf | None = fit_tfidf(frames) if relevance == "tfidf" else None
        self._ctx: dict[str, dict] = {}
        self._root_vec: dict[Expr, dict] = {}
        self.random_sub = RandomSubstitution(frames, db.float_types)
        self.decoder = None
        if substitution == "ngram":
            self.decoder = ConstrainedDecoder(db.grammar, fit_ngram(frames, ngram_order), db.float_types,
                                              max_tokens=max_tokens)

    def relevance(self, frame, candidates):
        if self.tfidf is None:
            return [0.0] * len(candidates)
        ctx = self._ctx.get(frame.label)
        if ctx is None:
            ctx = self._ctx[frame.label] = self.tfidf.vector(frame_tokens(frame.assertion, frame.hypotheses))
        out = []
        for t in candidates:
            v = self._root_vec.get(t.expr)
            if v is None:
                v = self._root_vec[t.expr] = self.tfidf.vector(preorder_symbols(t.expr))
            out.append(cosine(ctx, v))
        return out

    def substitute(self, frame, phi, var, typecode, rng):
        if self.decoder is not None:
            return self.decoder.sample(typecode, rng)
        return self.random_sub(typecode, rng)


POLICIES = {
    "random": ("random", "random"),
    "tfidf": ("tfidf", "random"),
    "ngram": ("random", "ngram"),
    "tfidf-ngram": ("tfidf", "ngram"),
}


def make_policy(name: str, frames: Sequence[Frame], db: Database, **kw) -> Policy:
    try:
        rel, sub = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return Policy(name, rel, sub, frames, db, **kw)


# --- proof-step construction ----------------------------------------------

@dataclass
class GenConfig:
    seed: int = 0
    n: int = 100
    workers: int = 1
    sync_every: int = 20
    episode_size: int = 50
    policy: str = "random"
    beam: int = 1
    candidate_cap: int = 2000
    retry_budget: int = 50
    retry_ceiling: float = 0.999
    min_attempts_for_ceiling: int = 5000
    memory_cap: int = 5_000_000
    temperature: float = 1.0
    max_tokens: int = 64
    max_depth: int | None = None
    ngram_order: int = 3

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    frame: Frame
    phi: dict
    trees: list[ProofTree]


class _Renamer:
    def __init__(self) -> None:
        self._cache: dict[str, tuple] = {}

    def hyps(self, frame: Frame) -> tuple:
        hit = self._cache.get(frame.label)
        if hit is None:
            from .expr import apply_substitution
            ren = {v: mkvar(_PRIVATE + v, frame.float_types[v]) for v in frame.mandatory_vars}
            hit = self._cache[frame.label] = tuple(apply_substitution(h, ren, partial=True)
                                                   for h in frame.hypotheses)
        return hit


_RENAMER = _Renamer()


def softmax_choice(scores: Sequence[float], temperature: float, rng: random.Random) -> int:
    m = max(scores)
    w = [math.exp((s - m) / temperature) for s in scores]
    x = rng.random() * sum(w)
    for i, wi in enumerate(w):
        x -= wi
        if x < 0:
            return i
    return len(w) - 1


def construct_proof_step(db: Database, pool: TreePool, inv: InvocableSet, policy: GenPolicy,
                         rng: random.Random, cfg: GenConfig, stats: Counter | None = None) -> StepResult | None:
    """One proof step over pool trees, or None (the retry signal)."""
    stats = stats if stats is not None else Counter()
    frame = db.frames[inv.sample(rng)]
    phi: dict[str, Expr] = {}
    chosen: list[ProofTree] = []
    for h, tc in zip(_RENAMER.hyps(frame), frame.hyp_typecodes):
        cands = pool.compatible(h, phi, tc, cfg.candidate_cap, rng)
        if not cands:
            stats["retry_no_compatible"] += 1
            return None
        scores = policy.relevance(frame, [t for t, _m in cands])
        t, m = cands[softmax_choice(scores, cfg.temperature, rng)]
        phi = m
        chosen.append(t)
    subst = {v: phi[_PRIVATE + v] for v in frame.mandatory_vars if _PRIVATE + v in phi}
    for v in frame.mandatory_vars:
        if v not in subst:
            e = policy.substitute(frame, subst, v, frame.float_types[v], rng)
            if e is None:
                stats["retry_substitution"] += 1
                return None
            subst[v] = e
    if frame.dv:
        try:
            dv_pairs_induced(frame, subst)
        except DVViolation:
            stats["retry_dv"] += 1
            return None
    return StepResult(frame, subst, chosen)


def graft(step: StepResult) -> ProofTree:
    """The one-step tree of ``step`` with each precondition replaced by its tree."""
    from .expr import apply_substitution
    frame, phi = step.frame, step.phi
    concl = apply_substitution(frame.assertion, phi)
    for h, t in zip(frame.hypotheses, step.trees):
        assert apply_substitution(h, phi) is t.expr, "graft: precondition does not match the tree root"
    args = tuple(phi[v] for v in frame.mandatory_vars)
    return ProofTree(concl, frame.typecode, frame.label, args, frame.mandatory_vars, tuple(step.trees))


# --- generation loop -------------------------------------------------------

@dataclass
class SyntheticTheorem:
    frame: Frame
    tree: ProofTree
    provenance: dict

    @property
    def signature(self):
        return signature(self.tree)


class GenerationAborted(MMError):
    pass


@dataclass
class GenContext:
    db: Database
    invocable: InvocableSet
    policy: GenPolicy
    cfg: GenConfig
    pool: TreePool
    guard: set = field(default_factory=set)


def _episode_rng(seed: int, worker: int, episode: int, reseed: int) -> random.Random:
    return random.Random(f"{seed}:{worker}:{episode}:{reseed}")


def run_episodes(ctx: GenContext, worker: int, first_episode: int, n_episodes: int,
                 limit: int, stats: Counter, on_new: Callable | None = None) -> list[tuple[ProofTree, dict]]:
    """Generate up to ``limit`` new trees over ``n_episodes`` episodes on ``ctx.pool``."""
    cfg = ctx.cfg
    out: list[tuple[ProofTree, dict]] = []
    for ep in range(first_episode, first_episode + n_episodes):
        reseed = 0
        rng = _episode_rng(cfg.seed, worker, ep, reseed)
        made = 0
        consecutive = 0
        while made < cfg.episode_size and len(out) < limit:
            stats["attempts"] += 1
            step = construct_proof_step(ctx.db, ctx.pool, ctx.invocable, ctx.policy, rng, cfg, stats)
            if step is None:
                stats["retries"] += 1
                consecutive += 1
                _check_ceiling(cfg, stats)
                if consecutive >= cfg.retry_budget:
                    reseed += 1
                    stats["reseeds"] += 1
                    rng = _episode_rng(cfg.seed, worker, ep, reseed)
                    consecutive = 0
                continue
            consecutive = 0
            tree = graft(step)
            sig = signature(tree)
            if sig in ctx.pool:
                stats["duplicates"] += 1
                _check_ceiling(cfg, stats)
                continue
            if cfg.max_depth is not None and tree.height > cfg.max_depth:
                stats["too_deep"] += 1
                continue
            prov = {"invoked": step.frame.label, "episode": ep, "worker": worker, "seed": cfg.seed}
            if len(ctx.pool) < cfg.memory_cap:
                ctx.pool.add(tree)
            else:
                stats["pool_full"] += 1
            out.append((tree, prov))
            made += 1
            if on_new is not None:
                on_new(tree, prov)
        if len(out) >= limit:
            break
    return out


def _check_ceiling(cfg: GenConfig, stats: Counter) -> None:
    # duplicates count as failed attempts too, otherwise a saturated pool spins forever
    failed = stats["retries"] + stats["duplicates"]
    if stats["attempts"] >= cfg.min_attempts_for_ceiling and failed / stats["attempts"] > cfg.retry_ceiling:
        raise GenerationAborted(
            f"failure rate {failed / stats['attempts']:.4f} exceeds ceiling {cfg.retry_ceiling} "
            f"after {stats['attempts']} attempts; breakdown: "
            + ", ".join(f"{k}={v}" for k, v in sorted(stats.items()) if k.startswith(("retry_", "dup"))))


_WORKER_CTX: GenContext | None = None


def _worker_round(args):
    worker, first_episode, n_episodes, limit = args
    stats: Counter = Counter()
    out = run_episodes(_WORKER_CTX, worker, first_episode, n_episodes, limit, stats)
    return out, stats


class Generator:
    """Owns the pool and the emitted theorems of one run."""

    def __init__(self, db: Database, train: Sequence[ProofTask], cfg: GenConfig,
                 policy: GenPolicy | None = None) -> None:
        self.db = db
        self.cfg = cfg
        self.invocable = build_invocable(train)
        train_frames = [t.target for t in train]
        self.policy = policy or make_policy(cfg.policy, train_frames, db, ngram_order=cfg.ngram_order,
                                            max_tokens=cfg.max_tokens)
        proofs = {t.target.label: t.target.proof for t in train if t.target.proof is not None}
        pool_frames = [db.frames[lab] for lab in self.invocable.labels]
        pool_frames += [f for f in train_frames if f.label not in self.invocable]
        self.pool = init_tree_pool(pool_frames, proofs)
        self.initial_pool_size = len(self.pool)
        self.guard = set(self.pool.node_exprs)
        self.theorems: list[SyntheticTheorem] = []
        self.signatures: set = set()
        self.stats: Counter = Counter()
        self.label_prefix = "syn"
        self._next_index = len(db.statements)
        self.progress: Callable[[dict], None] | None = None

    def _accept(self, tree: ProofTree, prov: dict) -> SyntheticTheorem | None:
        sig = signature(tree)
        if sig in self.signatures:
            self.stats["duplicates"] += 1
            return None
        label = f"{self.label_prefix}{len(self.theorems) + 1}"
        frame = self.db.frame_for_tree(label, tree, index=self._next_index + len(self.theorems))
        verdict = verify_proof_tree(frame, tree, self.db, self.invocable)
        if not verdict.ok:
            raise MMError(f"generated an unverifiable theorem: {verdict.reason}")
        for h in frame.hypotheses:
            if h not in self.guard:
                raise MMError(f"hypothesis {self.db.render(h)} is not a node of an existing proof tree")
        self.guard.update(tree.node_exprs())
        self.signatures.add(sig)
        th = SyntheticTheorem(frame, tree, {**prov, "invoked_labels": sorted(tree.labels_used())})
        self.theorems.append(th)
        return th

    def run(self) -> list[SyntheticTheorem]:
        cfg = self.cfg
        if cfg.n < 1:
            raise ValueError("N must be at least 1")
        t0 = time.monotonic()
        if cfg.workers <= 1:
            self._run_serial()
        else:
            self._run_parallel()
        self.stats["wall_ms"] = int((time.monotonic() - t0) * 1000)
        return self.theorems

    def _report(self) -> None:
        if self.progress is not None:
            a = self.stats["attempts"] or 1
            self.progress({"unique": len(self.theorems), "pool": len(self.pool),
                           "retry_rate": round(self.stats["retries"] / a, 4)})

    def _run_serial(self) -> None:
        cfg = self.cfg
        ctx = GenContext(self.db, self.invocable, self.policy, cfg, self.pool)
        episode = 0
        while len(self.theorems) < cfg.n:
            def on_new(tree, prov):
                self._accept(tree, prov)
            before = self.stats["attempts"]
            run_episodes(ctx, 0, episode, 1, cfg.n - len(self.theorems), self.stats, on_new)
            episode += 1
            if episode % cfg.sync_every == 0:
                self._report()
            if self.stats["attempts"] == before:
                break
        self._report()

    def _run_parallel(self) -> None:
        global _WORKER_CTX
        cfg = self.cfg
        mp = multiprocessing.get_context("fork")
        episode = 0
        while len(self.theorems) < cfg.n:
            _WORKER_CTX = GenContext(self.db, self.invocable, self.policy, cfg, self.pool)
            need = cfg.n - len(self.theorems)
            jobs = [(w, episode, cfg.sync_every, need) for w in range(cfg.workers)]
            with mp.Pool(cfg.workers) as procs:
                results = procs.map(_worker_round, jobs)
            _WORKER_CTX = None
            episode += cfg.sync_every
            progressed = False
            for out, st in results:
                self.stats.update(st)
                for tree, prov in out:
                    progressed = True
                    if len(self.theorems) >= cfg.n:
                        break
                    if signature(tree) in self.pool:
                        self.stats["duplicates"] += 1
                        continue
                    if self._accept(tree, prov) is not None and len(self.pool) < cfg.memory_cap:
                        self.pool.add(tree)
            self._report()
            if not progressed:
                break

    def metadata(self) -> dict:
        return {
            "config": self.cfg.to_json(),
            "counts": {"theorems": len(self.theorems), "initial_pool": self.initial_pool_size,
                       "pool": len(self.pool), "invocable": len(self.invocable.labels)},
            "stats": dict(sorted(self.stats.items())),
        }


def generate(db: Database, train: Sequence[ProofTask], n: int, policy: str | GenPolicy = "random",
             workers: int = 1, sync_every: int = 20, **kw) -> list[SyntheticTheorem]:
    if isinstance(policy, str):
        cfg = GenConfig(n=n, policy=policy, workers=workers, sync_every=sync_every, **kw)
        return Generator(db, train, cfg).run()
    cfg = GenConfig(n=n, policy=policy.name, workers=workers, sync_every=sync_every, **kw)
    return Generator(db, train, cfg, policy).run()
