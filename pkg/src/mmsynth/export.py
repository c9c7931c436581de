"""Writing theorems back out as ``.mm`` text or JSONL records."""
from __future__ import annotations

import json
from typing import Iterable, Sequence

from .corpus import Database, Frame
from .errors import MMError, VerificationError
from .verify import ProofTree, verify_proof_tree


def _tokens(db: Database, e, typecode: str) -> list[str]:
    return [typecode] + db.grammar.render(e)


def _proof_vars(tree: ProofTree) -> set[str]:
    out: set[str] = set()
    for n in tree.postorder_unique():
        out |= n.expr.vars
        for a in n.args:
            out |= a.vars
    return out


class _Writer:
    def __init__(self, db: Database) -> None:
        self.db = db
        self.lines: list[str] = []
        self.used_labels: set[str] = set()

    def fresh_float_label(self, label: str) -> str:
        cand, k = label, 1
        while cand in self.used_labels:
            k += 1
            cand = f"{label}.{k}"
        self.used_labels.add(cand)
        return cand

    def block(self, frame: Frame, kind: str, body: Sequence[str], proof: list[str] | None = None,
              extra_vars: Iterable[str] = (), dv: Iterable[frozenset] = ()) -> None:
        db = self.db
        local = []
        for v in list(frame.mandatory_vars) + sorted(set(extra_vars) - set(frame.mandatory_vars)):
            if v in db.float_label and db.float_types[v] == frame.float_types.get(v, db.float_types[v]):
                continue
            tc = frame.float_types.get(v)
            if tc is None:
                raise MMError(f"{frame.label}: no floating hypothesis for variable {v}")
            local.append((self.fresh_float_label(frame.local_floats.get(v, f"{frame.label}.f.{v}")), tc, v))
        pairs = sorted(tuple(sorted(p)) for p in dv)
        scoped = bool(local or pairs or frame.hypotheses)
        ind = "  " if scoped else ""
        out = self.lines
        if scoped:
            out.append("${")
        for lab, tc, v in local:
            out.append(f"  {lab} $f {tc} {v} $.")
        for x, y in pairs:
            out.append(f"  $d {x} {y} $.")
        for lab, h, tc in zip(frame.hyp_labels, frame.hypotheses, frame.hyp_typecodes):
            self.used_labels.add(lab)
            out.append(f"  {lab} $e {' '.join(_tokens(db, h, tc))} $.")
        self.used_labels.add(frame.label)
        stmt = " ".join(body)
        if proof is None:
            out.append(f"{ind}{frame.label} {kind} {stmt} $.")
        else:
            out.append(f"{ind}{frame.label} {kind} {stmt} $=")
            out.append(f"{ind}  {' '.join(proof)} $.")
        if scoped:
            out.append("$}")

    def theorem(self, frame: Frame) -> None:
        db = self.db
        tree = frame.proof
        labels = db.linearize(frame, tree)
        pvars = _proof_vars(tree)
        dv = {p for p in frame.proof_dv if p <= pvars} | set(frame.dv)
        self.block(frame, "$p", _tokens(db, frame.assertion, frame.typecode), labels, pvars, dv)

    def assertion(self, frame: Frame) -> None:
        self.block(frame, "$a", _tokens(self.db, frame.assertion, frame.typecode), None, (), frame.dv)


def check_exportable(frames: Sequence[Frame], db: Database, invocable=None) -> None:
    for f in frames:
        if f.proof is None:
            raise VerificationError(f.label, "no proof to export")
        v = verify_proof_tree(f, f.proof, db, invocable)
        if not v.ok:
            raise VerificationError(f.label, f"refusing to export: {v.reason}")


def export_mm(frames: Sequence[Frame], db: Database, *, mode: str = "standalone", invocable=None) -> bytes:
    """Render theorems as Metamath source.

    ``standalone`` emits a self-contained database: every declaration plus
    the syntax axioms, with each assertion the exported proofs invoke
    restated as an axiom.  ``appendix`` emits only the theorem blocks, to be
    appended to the source database.
    """
    frames = list(frames)
    check_exportable(frames, db, invocable)
    w = _Writer(db)
    if mode == "appendix":
        for f in frames:
            w.theorem(f)
        return ("\n".join(w.lines) + "\n" if w.lines else "").encode()
    if mode != "standalone":
        raise ValueError(f"unknown mode {mode!r}")
    exported = {f.label for f in frames}
    deps: dict[str, Frame] = {}
    for f in frames:
        for lab in f.proof.labels_used():
            if lab not in exported:
                deps[lab] = db.frames[lab]
    w.used_labels |= set(db.float_label.values())
    if db.constants:
        w.lines.append("$c " + " ".join(db.constants) + " $.")
    if db.variables:
        w.lines.append("$v " + " ".join(db.variables) + " $.")
    for v, lab in db.float_label.items():
        w.lines.append(f"{lab} $f {db.float_types[v]} {v} $.")
    for rule in db.grammar.rules.values():
        w.assertion(db.frames[rule.label])
    order = sorted([(d.index, 0, d.label, d) for d in deps.values()]
                   + [(f.index, 1, f.label, f) for f in frames])
    for _i, is_thm, _lab, f in order:
        (w.theorem if is_thm else w.assertion)(f)
    return ("\n".join(w.lines) + "\n").encode()


def theorem_record(frame: Frame, db: Database) -> dict:
    return {
        "label": frame.label,
        "assertion": _tokens(db, frame.assertion, frame.typecode),
        "hypotheses": [_tokens(db, h, tc) for h, tc in zip(frame.hypotheses, frame.hyp_typecodes)],
        "dv": [list(p) for p in frame.dv_list()],
        "proof": db.linearize(frame, frame.proof) if frame.proof is not None else [],
    }


def export_jsonl(frames: Sequence[Frame], db: Database, *, invocable=None, extra=None) -> bytes:
    frames = list(frames)
    check_exportable(frames, db, invocable)
    lines = []
    for i, f in enumerate(frames):
        rec = theorem_record(f, db)
        if extra is not None:
            rec.update(extra[i])
        lines.append(json.dumps(rec, ensure_ascii=False))
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def export_theorems(frames: Sequence[Frame], db: Database, format: str = "mm", **kw) -> bytes:
    if format == "mm":
        return export_mm(frames, db, **kw)
    if format == "jsonl":
        return export_jsonl(frames, db, **kw)
    raise ValueError(f"unknown format {format!r}")
