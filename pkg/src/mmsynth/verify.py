"""Proof trees, the proof stack machine, and tree-level verification.

Proof trees only hold logical steps.  Floating-hypothesis arguments (the
syntax sub-proofs of a Metamath proof) are kept as parse trees inside each
step's substitution and re-emitted on linearization.
"""
from __future__ import annotations

import itertools
from collections.abc import Set
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import DVViolation, MMError, SubstitutionError, VerificationError
from .expr import Expr, apply_substitution

if TYPE_CHECKING:
    from .corpus import Database, Frame


class ProofTree:
    """A node of a proof tree.

    ``label is None`` marks a hypothesis leaf.  Otherwise the node was
    established by invoking ``label`` with arguments ``args`` (aligned with the
    invoked frame's mandatory variables ``varnames``); ``children`` are the
    sub-proofs of its essential hypotheses, in frame order.  Subtrees may be
    shared (compressed proofs reuse steps), so the structure is a DAG that
    denotes its expansion.
    """

    __slots__ = ("expr", "typecode", "label", "args", "varnames", "children", "_stats")

    def __init__(self, expr: Expr, typecode: str, label: str | None = None,
                 args: tuple = (), varnames: tuple = (), children: tuple = ()) -> None:
        self.expr = expr
        self.typecode = typecode
        self.label = label
        self.args = args
        self.varnames = varnames
        self.children = children
        self._stats = None

    @classmethod
    def leaf(cls, expr: Expr, typecode: str) -> "ProofTree":
        return cls(expr, typecode)

    @property
    def is_leaf(self) -> bool:
        return self.label is None

    @property
    def subst(self) -> dict[str, Expr]:
        return dict(zip(self.varnames, self.args))

    def __repr__(self) -> str:
        if self.label is None:
            return f"<hyp {self.expr!r}>"
        return f"<{self.label} {self.expr!r} [{len(self.children)}]>"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProofTree):
            return NotImplemented
        return same_tree(self, other)

    def __hash__(self) -> int:
        return hash((self.expr, self.label))

    # -- cached structural statistics (expanded-tree semantics) --

    def _compute_stats(self):
        # (steps, nodes, height, leaves) for every distinct subtree, bottom-up
        order = list(self.postorder_unique())
        for n in order:
            if n._stats is not None:
                continue
            if n.label is None:
                n._stats = (0, 1, 0, frozenset((n.expr,)))
                continue
            steps, nodes, height, leaves = 1, 1, 0, frozenset()
            for c in n.children:
                cs = c._stats
                steps += cs[0]
                nodes += cs[1]
                height = max(height, cs[2] + 1)
                leaves = leaves | cs[3] if cs[3] else leaves
            n._stats = (steps, nodes, height, leaves)
        return self._stats

    @property
    def step_count(self) -> int:
        return (self._stats or self._compute_stats())[0]

    @property
    def node_count(self) -> int:
        return (self._stats or self._compute_stats())[1]

    @property
    def height(self) -> int:
        return (self._stats or self._compute_stats())[2]

    @property
    def leaf_set(self) -> frozenset:
        """Distinct hypothesis-leaf expressions."""
        return (self._stats or self._compute_stats())[3]

    def postorder_unique(self) -> Iterator["ProofTree"]:
        """Each distinct node once, children before parents."""
        seen = set()
        stack = [(self, False)]
        while stack:
            n, expanded = stack.pop()
            if expanded:
                yield n
                continue
            if id(n) in seen:
                continue
            seen.add(id(n))
            stack.append((n, True))
            for c in reversed(n.children):
                if id(c) not in seen:
                    stack.append((c, False))

    def nodes(self) -> Iterator["ProofTree"]:
        """Every node of the expanded tree in pre-order."""
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))

    def leaves_preorder(self) -> list[Expr]:
        """Distinct leaf expressions in order of first pre-order occurrence."""
        out, seen = [], set()
        memo_done = set()
        stack = [self]
        while stack:
            n = stack.pop()
            if n.label is None:
                if n.expr not in seen:
                    seen.add(n.expr)
                    out.append(n.expr)
                continue
            if id(n) in memo_done:
                continue
            memo_done.add(id(n))
            stack.extend(reversed(n.children))
        return out

    def node_exprs(self) -> set[Expr]:
        return {n.expr for n in self.postorder_unique()}

    def labels_used(self) -> set[str]:
        return {n.label for n in self.postorder_unique() if n.label is not None}


def same_tree(a: ProofTree, b: ProofTree) -> bool:
    seen = set()
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        if x is y:
            continue
        key = (id(x), id(y))
        if key in seen:
            continue
        seen.add(key)
        if (x.expr is not y.expr or x.typecode != y.typecode or x.label != y.label
                or len(x.children) != len(y.children)):
            return False
        if x.label is not None:
            if dict(zip(x.varnames, x.args)) != dict(zip(y.varnames, y.args)):
                return False
        stack.extend(zip(x.children, y.children))
    return True


class ProofStep(NamedTuple):
    label: str
    subst: Mapping[str, Expr]


class CheckedStep(NamedTuple):
    conclusion: Expr
    preconditions: list[Expr]


def dv_pairs_induced(frame: "Frame", subst: Mapping[str, Expr]) -> set[frozenset]:
    """Variable pairs that must be disjoint for ``frame`` applied with ``subst``.

    Raises DVViolation when some pair of images shares a variable.
    """
    out = set()
    for pair in frame.dv:
        x, y = tuple(pair)
        ex, ey = subst.get(x), subst.get(y)
        if ex is None or ey is None:
            continue
        for x0, y0 in itertools.product(ex.vars, ey.vars):
            if x0 == y0:
                raise DVViolation((x, y), f"$d {x} {y} violated: both images contain {x0}")
            out.add(frozenset((x0, y0)))
    return out


def check_proof_step(step: ProofStep, db: "Database", ambient_dv: Iterable[frozenset] | None = None) -> CheckedStep:
    """Instantiate a proof step.

    ``step.subst`` must cover the frame's mandatory variables with images of
    the right typecode.  When ``ambient_dv`` is given, every induced
    disjointness pair must be declared there.
    """
    frame = db.frames.get(step.label)
    if frame is None:
        raise VerificationError(step.label, "unknown label")
    phi = step.subst
    for v in frame.mandatory_vars:
        img = phi.get(v)
        if img is None:
            raise SubstitutionError(f"{step.label}: variable {v} not substituted")
        if img.typecode != frame.float_types[v]:
            raise SubstitutionError(
                f"{step.label}: {v} is {frame.float_types[v]}, image is {img.typecode}")
    induced = dv_pairs_induced(frame, phi)
    if ambient_dv is not None:
        amb = ambient_dv if isinstance(ambient_dv, (set, frozenset)) else set(ambient_dv)
        for p in induced:
            if p not in amb:
                raise DVViolation(tuple(sorted(p)), f"{step.label}: missing $d {' '.join(sorted(p))}")
    concl = apply_substitution(frame.assertion, phi)
    pre = [apply_substitution(h, phi) for h in frame.hypotheses]
    return CheckedStep(concl, pre)


@dataclass
class Verdict:
    label: str
    ok: bool
    node_path: tuple = ()
    reason: str = ""

    def to_json(self) -> dict:
        return {"label": self.label, "ok": self.ok, "node_path": list(self.node_path), "reason": self.reason}


def verify_proof_tree(target: "Frame", tree: ProofTree, db: "Database",
                      invocable: Iterable[str] | None = None) -> Verdict:
    """Check ``tree`` as a proof of ``target``.

    Steps may invoke labels preceding ``target`` in the database or, when
    ``invocable`` is given (synthetic theorems), labels in that set.
    """
    label = target.label
    if tree.expr is not target.assertion or tree.typecode != target.typecode:
        return Verdict(label, False, (), "root-mismatch")
    hyps = set(zip(target.hypotheses, target.hyp_typecodes))
    allowed = invocable
    if invocable is not None and not isinstance(invocable, (set, frozenset, Set)):
        allowed = set(invocable)
    amb = target.proof_dv
    checked: dict[int, str] = {}
    stack: list[tuple[ProofTree, tuple]] = [(tree, ())]
    while stack:
        node, path = stack.pop()
        if id(node) in checked:
            continue
        checked[id(node)] = ""
        if node.label is None:
            if (node.expr, node.typecode) not in hyps:
                return Verdict(label, False, path, "leaf is not a hypothesis")
            continue
        frame = db.frames.get(node.label)
        if frame is None:
            return Verdict(label, False, path, f"unknown label {node.label}")
        if allowed is not None:
            if node.label not in allowed:
                return Verdict(label, False, path, f"{node.label} is not invocable")
        elif frame.index >= target.index:
            return Verdict(label, False, path, f"{node.label} does not precede {label}")
        if frame.typecode != node.typecode:
            return Verdict(label, False, path, "typecode mismatch")
        if tuple(node.varnames) != tuple(frame.mandatory_vars):
            return Verdict(label, False, path, "substitution does not match the frame's variables")
        try:
            concl, pre = check_proof_step(ProofStep(node.label, node.subst), db, amb)
        except MMError as exc:
            return Verdict(label, False, path, str(exc))
        if concl is not node.expr:
            return Verdict(label, False, path, "conclusion mismatch")
        if len(pre) != len(node.children):
            return Verdict(label, False, path, "wrong number of children")
        for i, (p, c) in enumerate(zip(pre, node.children)):
            if p is not c.expr or c.typecode != frame.hyp_typecodes[i]:
                return Verdict(label, False, path + (i,), "precondition mismatch")
            stack.append((c, path + (i,)))
    return Verdict(label, True)


# --- stack machine ---------------------------------------------------------

def replay(frame_label: str, labels: Iterable[str], db: "Database", ambient_dv: frozenset,
           hyp_lookup: Mapping[str, "ProofTree"], float_lookup: Mapping[str, Expr]) -> list:
    """Run a normal-format proof on the Metamath stack machine.

    Floating arguments become parse trees and logical steps become
    :class:`ProofTree` nodes; the final stack is returned.
    """
    stack: list = []
    syntax_tcs = db.syntax_typecodes
    for lab in labels:
        _apply_label(lab, stack, db, ambient_dv, hyp_lookup, float_lookup, syntax_tcs, frame_label)
    return stack


def _apply_label(lab, stack, db, ambient_dv, hyp_lookup, float_lookup, syntax_tcs, frame_label):
    fl = float_lookup.get(lab)
    if fl is not None:
        stack.append(fl)
        return
    hl = hyp_lookup.get(lab)
    if hl is not None:
        stack.append(hl)
        return
    frame = db.frames.get(lab)
    if frame is None:
        raise VerificationError(frame_label, f"label {lab} not active")
    n = len(frame.mand_hyps)
    sp = len(stack) - n
    if sp < 0:
        raise VerificationError(frame_label, f"stack underflow at {lab}")
    args = []
    phi = {}
    ftypes = frame.float_types
    for kind, idx in frame.mand_hyps:
        entry = stack[sp]
        sp += 1
        if kind == "f":
            v = frame.mandatory_vars[idx]
            if not isinstance(entry, Expr) or entry.typecode != ftypes[v]:
                raise VerificationError(frame_label, f"{lab}: argument for {v} has wrong type")
            phi[v] = entry
            args.append(entry)
    children = []
    sp = len(stack) - n
    for kind, idx in frame.mand_hyps:
        entry = stack[sp]
        sp += 1
        if kind == "e":
            want = apply_substitution(frame.hypotheses[idx], phi)
            tc = frame.hyp_typecodes[idx]
            if tc in syntax_tcs:
                if entry is not want:
                    raise VerificationError(frame_label, f"{lab}: hypothesis {idx} mismatch")
            else:
                if not isinstance(entry, ProofTree) or entry.expr is not want or entry.typecode != tc:
                    raise VerificationError(frame_label, f"{lab}: essential hypothesis {idx + 1} mismatch")
                children.append(entry)
    if frame.dv:
        try:
            induced = dv_pairs_induced(frame, phi)
        except DVViolation as exc:
            raise VerificationError(frame_label, f"{lab}: {exc}") from None
        for p in induced:
            if p not in ambient_dv:
                raise VerificationError(frame_label, f"{lab}: missing $d {' '.join(sorted(p))}")
    del stack[len(stack) - n:]
    concl = apply_substitution(frame.assertion, phi)
    if frame.typecode in syntax_tcs:
        stack.append(concl)
    else:
        stack.append(ProofTree(concl, frame.typecode, lab, tuple(args), frame.mandatory_vars, tuple(children)))


def replay_compressed(frame_label: str, numbers: Iterable[int], plabels: Sequence[str], db: "Database",
                      ambient_dv, hyp_lookup, float_lookup):
    """Replay a decoded compressed proof; -1 marks a Z (save top of stack)."""
    stack: list = []
    saved: list = []
    nlab = len(plabels)
    syntax_tcs = db.syntax_typecodes
    for k in numbers:
        if k == -1:
            if not stack:
                raise VerificationError(frame_label, "Z with empty stack")
            saved.append(stack[-1])
        elif k < nlab:
            _apply_label(plabels[k], stack, db, ambient_dv, hyp_lookup, float_lookup, syntax_tcs, frame_label)
        elif k - nlab < len(saved):
            stack.append(saved[k - nlab])
        else:
            raise VerificationError(frame_label, f"reference to unsaved step {k - nlab + 1}")
    return stack


def finish(frame: "Frame", stack: list) -> ProofTree | Expr:
    if not stack:
        raise VerificationError(frame.label, "empty stack at end of proof")
    if len(stack) > 1:
        raise VerificationError(frame.label, f"stack has {len(stack)} entries at end of proof")
    top = stack[0]
    if isinstance(top, ProofTree):
        if top.expr is not frame.assertion or top.typecode != frame.typecode:
            raise VerificationError(frame.label, "proved statement does not match assertion")
    elif top is not frame.assertion:
        raise VerificationError(frame.label, "proved statement does not match assertion")
    return top


# --- linearization ---------------------------------------------------------

def linearize(tree: ProofTree, db: "Database", hyp_labels: Mapping[Expr, str],
              float_labels: Mapping[str, str] | None = None) -> list[str]:
    """Normal-format label sequence of ``tree`` (pre-order steps, RPN order).

    ``hyp_labels`` maps hypothesis expressions to their ``$e`` labels;
    ``float_labels`` overrides the database's variable-to-``$f`` mapping.
    """
    flabels = float_labels if float_labels is not None else db.float_label
    out: list[str] = []
    syn_memo: dict[Expr, list[str]] = {}

    def syntax(e: Expr) -> list[str]:
        r = syn_memo.get(e)
        if r is not None:
            return r
        seq: list[str] = []
        st = [e]
        while st:
            item = st.pop()
            if isinstance(item, str):
                seq.append(item)
            elif item.is_var:
                lab = flabels.get(item.symbol)
                if lab is None:
                    raise MMError(f"no $f hypothesis for variable {item.symbol}")
                seq.append(lab)
            else:
                st.append(item.symbol)
                st.extend(reversed(item.children))
        # st pops children first-to-last, so the node label lands after them
        syn_memo[e] = seq
        return seq

    stack: list = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        if item.label is None:
            lab = hyp_labels.get(item.expr)
            if lab is None:
                raise MMError(f"leaf {item.expr!r} is not a hypothesis")
            out.append(lab)
            continue
        frame = db.frames[item.label]
        sub = dict(zip(item.varnames, item.args))
        pending: list = []
        for kind, idx in frame.mand_hyps:
            if kind == "f":
                pending.append(("syn", sub[frame.mandatory_vars[idx]]))
            else:
                pending.append(item.children[idx])
        stack.append(item.label)
        for p in reversed(pending):
            if isinstance(p, tuple):
                stack.extend(reversed(syntax(p[1])))
            else:
                stack.append(p)
    return out


def delinearize(labels: Sequence[str], target: "Frame", db: "Database") -> ProofTree:
    """Rebuild a proof tree from a normal-format label sequence."""
    hyp_lookup, float_lookup = db.scope_lookups(target)
    stack = replay(target.label, labels, db, target.proof_dv, hyp_lookup, float_lookup)
    top = finish(target, stack)
    if not isinstance(top, ProofTree):
        raise VerificationError(target.label, "not a logical proof")
    return top
