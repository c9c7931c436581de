"""A deliberately naive Metamath verifier used as a test oracle.

Works on raw token lists (no parse trees, no interning) so it shares no code
with the package.  Only the statement subset used by the fixtures is handled.
"""
from __future__ import annotations


class OracleError(Exception):
    pass


def _tokens(text):
    toks = text.split()
    out = []
    i = 0
    while i < len(toks):
        if toks[i] == "$(":
            i = toks.index("$)", i) + 1
            continue
        out.append(toks[i])
        i += 1
    return out


def _read_stmt(toks, i):
    j = toks.index("$.", i)
    return toks[i:j], j + 1


class Oracle:
    def __init__(self, text):
        self.labels = {}            # label -> ("$f"/"$e"/"$a"/"$p", data)
        self.order = []
        self.theorem_steps = {}     # label -> decompressed label list
        toks = _tokens(text)
        scopes = [{"f": [], "e": [], "d": set(), "v": []}]
        label = None
        i = 0
        while i < len(toks):
            t = toks[i]
            i += 1
            if t == "${":
                scopes.append({"f": [], "e": [], "d": set(), "v": []})
            elif t == "$}":
                scopes.pop()
            elif t in ("$c", "$v"):
                body, i = _read_stmt(toks, i)
                if t == "$v":
                    scopes[-1]["v"].extend(body)
            elif t == "$d":
                body, i = _read_stmt(toks, i)
                for a in body:
                    for b in body:
                        if a != b:
                            scopes[-1]["d"].add((a, b))
            elif t == "$f":
                body, i = _read_stmt(toks, i)
                scopes[-1]["f"].append((label, body[0], body[1]))
                self.labels[label] = ("$f", body)
            elif t == "$e":
                body, i = _read_stmt(toks, i)
                scopes[-1]["e"].append((label, body))
                self.labels[label] = ("$e", body)
            elif t in ("$a", "$p"):
                body, i = _read_stmt(toks, i)
                proof = None
                if t == "$p":
                    k = body.index("$=")
                    body, proof = body[:k], body[k + 1:]
                frame = self._frame(scopes, body)
                self.labels[label] = (t, frame)
                self.order.append(label)
                if proof is not None:
                    self.theorem_steps[label] = self._check(label, frame, scopes, proof)
            else:
                label = t

    def _frame(self, scopes, stmt):
        floats = [f for s in scopes for f in s["f"]]
        ess = [e for s in scopes for e in s["e"]]
        dv = set().union(*(s["d"] for s in scopes))
        used = set(stmt)
        for _, e in ess:
            used |= set(e)
        # mandatory hyps: floats of used vars and all essentials, in declaration order
        mand_f = [(lab, tc, v) for lab, tc, v in floats if v in used]
        # self.labels preserves declaration order
        pos = {lab: n for n, lab in enumerate(self.labels)}
        hyps = [("f", lab, [tc, v]) for lab, tc, v in mand_f] + [("e", lab, e) for lab, e in ess]
        hyps.sort(key=lambda h: pos[h[1]])
        mvars = {h[2][1] for h in hyps if h[0] == "f"}
        mdv = {(a, b) for a, b in dv if a in mvars and b in mvars}
        return {"hyps": hyps, "stmt": stmt, "dv": mdv, "all_dv": dv}

    def _check(self, label, frame, scopes, proof):
        active = {}
        for s in scopes:
            for lab, tc, v in s["f"]:
                active[lab] = ("$f", [tc, v])
            for lab, e in s["e"]:
                active[lab] = ("$e", e)
        if proof[0] == "(":
            k = proof.index(")")
            plabels = [h[1] for h in frame["hyps"]] + proof[1:k]
            steps = self._decompress("".join(proof[k + 1:]), plabels, active)
        else:
            steps = proof
        stack = []
        for lab in steps:
            kind, data = active.get(lab) or self.labels[lab]
            if kind in ("$f", "$e") and lab in active:
                stack.append(list(data))
                continue
            if kind not in ("$a", "$p"):
                raise OracleError(f"{label}: {lab} not usable")
            hyps = data["hyps"]
            if len(stack) < len(hyps):
                raise OracleError(f"{label}: underflow")
            args = stack[len(stack) - len(hyps):]
            del stack[len(stack) - len(hyps):]
            sub = {}
            for (k, _l, h), a in zip(hyps, args):
                if k == "f":
                    if a[0] != h[0]:
                        raise OracleError(f"{label}: type mismatch at {lab}")
                    sub[h[1]] = a[1:]
            for (k, _l, h), a in zip(hyps, args):
                if k == "e" and self._subst(h, sub) != a:
                    raise OracleError(f"{label}: hypothesis mismatch at {lab}")
            for x, y in data["dv"]:
                vx = [t for t in sub[x] if self._is_var(t, active)]
                vy = [t for t in sub[y] if self._is_var(t, active)]
                for a in vx:
                    for b in vy:
                        if a == b or (a, b) not in frame["all_dv"]:
                            raise OracleError(f"{label}: dv violation at {lab}")
            stack.append(self._subst(data["stmt"], sub))
        if len(stack) != 1 or stack[0] != frame["stmt"]:
            raise OracleError(f"{label}: final stack mismatch")
        return steps

    def _is_var(self, tok, active):
        return any(k == "$f" and d[1] == tok for k, d in active.values())

    @staticmethod
    def _subst(toks, sub):
        out = []
        for t in toks:
            out.extend(sub.get(t, [t]))
        return out

    def _decompress(self, letters, plabels, active):
        # expand to a normal proof; saved steps are stored as label lists
        nums, cur = [], 0
        for ch in letters:
            if ch == "Z":
                nums.append(None)
            elif "A" <= ch <= "T":
                nums.append(cur * 20 + ord(ch) - ord("A") + 1)
                cur = 0
            else:
                cur = cur * 5 + ord(ch) - ord("U") + 1
        saved, spans = [], []   # spans: stack of label sub-lists
        for n in nums:
            if n is None:
                saved.append(spans[-1])
                continue
            if n <= len(plabels):
                lab = plabels[n - 1]
                kind, data = active.get(lab) or self.labels[lab]
                arity = len(data["hyps"]) if kind in ("$a", "$p") else 0
                kids = spans[len(spans) - arity:] if arity else []
                del spans[len(spans) - arity:]
                spans.append([x for k in kids for x in k] + [lab])
            else:
                spans.append(saved[n - len(plabels) - 1])
        if len(spans) != 1:
            raise OracleError("bad compressed proof")
        return spans[0]

    def axiom_count(self, provable="|-"):
        return sum(1 for lab in self.order
                   if self.labels[lab][0] == "$a" and self.labels[lab][1]["stmt"][0] == provable)

    def theorem_count(self):
        return sum(1 for lab in self.order if self.labels[lab][0] == "$p")
