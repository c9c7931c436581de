"""Command line interface.

Every command that writes files also writes ``manifest.json`` next to them,
recording the resolved configuration and a fingerprint of the corpus.
Options may come from a JSON file (``--config``); flags on the command line
override it.  Exit codes: 0 success, 1 verification or proof failure,
2 usage, 3 I/O.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing
import os
import sys
import time
from typing import Sequence

from . import __version__
from .corpus import Database, load_database
from .errors import MMError
from .export import export_jsonl, export_mm, theorem_record
from .generator import GenConfig, GenerationAborted, Generator
from .prover import Budget, ProverHeuristics, applicability_index, prove_protocol
from .tasks import PRESETS, ProofTask, SplitSpec, build_proof_tasks, split_labels
from .tfidf import Ranker, fit_on_frames as fit_tfidf, frame_tokens

log = logging.getLogger("mmsynth")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def _write(path: str, data: bytes | str) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _emit(rec: dict, stream=None) -> None:
    print(json.dumps(rec, sort_keys=True), file=stream or sys.stdout, flush=True)


def _config_snapshot(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def write_manifest(out: str, command: str, args: argparse.Namespace, db: Database,
                   timings: dict, extra: dict | None = None) -> dict:
    man = {
        "command": command,
        "config": _config_snapshot(args),
        "seed": getattr(args, "seed", None),
        "corpus": db.fingerprint(),
        "tool_version": __version__,
        "timings": timings,
    }
    if extra:
        man.update(extra)
    _write(os.path.join(out, "manifest.json"), json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def _load(args) -> Database:
    t0 = time.perf_counter()
    db = load_database(args.db)
    db.check_known_counts()
    args._load_s = round(time.perf_counter() - t0, 3)
    return db


def _split_spec(args, db: Database) -> SplitSpec:
    if args.fractions is not None:
        return SplitSpec(args.seed, tuple(args.fractions))
    name = args.preset or (db.name if db.name in PRESETS else "default")
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SplitSpec.preset(name, args.seed)


def _splits(args, db: Database):
    return build_proof_tasks(db, _split_spec(args, db))


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# --- commands -------------------------------------------------------------------

def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    try:
        db = load_database(args.db, strict=False)
    except MMError as exc:
        _emit({"label": None, "ok": False, "reason": str(exc)})
        return EXIT_FAIL
    rejected = dict(db.rejected)
    verdicts = []
    for f in db.theorems:
        reason = rejected.get(f.label)
        verdicts.append({"label": f.label, "ok": reason is None, "node_path": [], "reason": reason or ""})
    elapsed = round(time.perf_counter() - t0, 3)
    summary = {**db.counts(), "accepted": len(verdicts) - len(rejected), "rejected": len(rejected),
               "known_counts_match": db.check_known_counts()}
    for v in verdicts:
        if not v["ok"]:
            _emit(v, sys.stderr)
    _emit(summary)
    if args.report:
        _write(args.report, _jsonl(verdicts))
    if args.out:
        _outdir(args)
        _write(os.path.join(args.out, "verdicts.jsonl"), _jsonl(verdicts))
        write_manifest(args.out, "verify", args, db, {"verify_s": elapsed}, {"summary": summary})
    return EXIT_FAIL if rejected else EXIT_OK


def cmd_stats(args) -> int:
    db = _load(args)
    spec = _split_spec(args, db)
    n = sum(1 for f in db.assertions if f.kind == "$p")
    rec = {**db.fingerprint(), "split": dict(zip(("train", "valid", "test"), spec.sizes(n))),
           "known_counts_match": db.check_known_counts()}
    _emit(rec)
    return EXIT_OK


def cmd_split(args) -> int:
    db = _load(args)
    out = _outdir(args)
    splits = _splits(args, db)
    labels = split_labels(splits)
    _write(os.path.join(out, "splits.json"), json.dumps(labels, indent=1) + "\n")
    sizes = {k: len(v) for k, v in labels.items()}
    write_manifest(out, "split", args, db, {"load_s": args._load_s}, {"sizes": sizes})
    _emit(sizes)
    return EXIT_OK


def cmd_generate(args) -> int:
    db = _load(args)
    out = _outdir(args)
    train, _valid, _test = _splits(args, db)
    cfg = GenConfig(seed=args.seed, n=args.n, workers=args.workers, sync_every=args.sync_every,
                    episode_size=args.episode_size, policy=args.policy, beam=args.beam,
                    temperature=args.temperature, max_depth=args.max_depth, max_tokens=args.max_tokens)
    t0 = time.perf_counter()
    gen = Generator(db, train, cfg)
    gen.progress = lambda rec: _emit({"progress": rec}, sys.stderr)
    try:
        theorems = gen.run()
    except GenerationAborted as exc:
        _emit({"error": str(exc)}, sys.stderr)
        theorems = gen.theorems
        status = EXIT_FAIL
    else:
        status = EXIT_OK
    frames = [t.frame for t in theorems]
    extra = [{"provenance": t.provenance} for t in theorems]
    gen_s = round(time.perf_counter() - t0, 3)
    _write(os.path.join(out, "theorems.jsonl"), export_jsonl(frames, db, invocable=gen.invocable, extra=extra))
    _write(os.path.join(out, "theorems.mm"), export_mm(frames, db, mode=args.mm_mode, invocable=gen.invocable))
    meta = gen.metadata()
    write_manifest(out, "generate", args, db, {"load_s": args._load_s, "generate_s": gen_s},
                   {"generation": {"counts": meta["counts"], "stats": meta["stats"]}})
    _emit({"theorems": len(theorems), **meta["counts"]})
    return status


_PROVE_CTX: dict = {}


def _prove_one(i: int):
    ctx = _PROVE_CTX
    results = prove_protocol(ctx["tasks"][i], ctx["h"], ctx["budget"])
    return [r.stats() for r in results], results[-1].tree


def select_prove_tasks(tasks: Sequence[ProofTask], max_steps: int | None = None,
                       labels: Sequence[str] | None = None, limit: int | None = None) -> list[ProofTask]:
    """Tasks filtered by label, by human proof size, then truncated."""
    out = list(tasks)
    if labels:
        want = set(labels)
        out = [t for t in out if t.label in want]
    if max_steps is not None:
        out = [t for t in out if t.target.proof is not None and t.target.proof.step_count <= max_steps]
    if limit is not None:
        out = out[:limit]
    return out


def cmd_prove(args) -> int:
    db = _load(args)
    out = _outdir(args)
    train, valid, test = _splits(args, db)
    part = {"train": train, "valid": valid, "test": test}[args.part]
    tasks = select_prove_tasks(part, args.max_proof_steps, args.labels, args.limit)
    if args.full_budget:
        budget = Budget(10000, 300.0, tuple(args.beams))
    else:
        budget = Budget(args.max_passes, args.time_limit, tuple(args.beams))
    t0 = time.perf_counter()
    h = ProverHeuristics.build(db, db.axioms + [t.target for t in train], ngram_order=args.ngram_order)
    applicability_index(db)
    _PROVE_CTX.update(db=db, tasks=tasks, h=h, budget=budget)
    if args.workers > 1 and len(tasks) > 1:
        with multiprocessing.get_context("fork").Pool(args.workers) as pool:
            results = pool.map(_prove_one, range(len(tasks)))
    else:
        results = [_prove_one(i) for i in range(len(tasks))]
    _PROVE_CTX.clear()
    attempts, frames, walls = [], [], {}
    for task, (recs, tree) in zip(tasks, results):
        # wall times go to the manifest so reruns reproduce attempts.jsonl exactly
        walls[task.label] = [r.pop("wall_ms") for r in recs]
        attempts.extend(recs)
        if tree is not None:
            frames.append(dataclasses.replace(task.target, proof=tree))
    summary = {"tasks": len(tasks), "solved": len(frames),
               "solve_rate": round(len(frames) / len(tasks), 6) if tasks else 0.0,
               "budget": dataclasses.asdict(budget)}
    _write(os.path.join(out, "attempts.jsonl"), _jsonl(attempts))
    _write(os.path.join(out, "proofs.jsonl"), _jsonl(theorem_record(f, db) for f in frames))
    # a standalone database re-checkable with the verify command
    _write(os.path.join(out, "proofs.mm"), export_mm(frames, db))
    _write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "prove", args, db, {"load_s": args._load_s, "prove_s": round(time.perf_counter() - t0, 3),
                                            "attempt_wall_ms": walls}, {"summary": summary})
    _emit(summary)
    return EXIT_OK


# --- relevance evaluation ---------------------------------------------------------

def relevance_ranks(db: Database, tasks: Sequence[ProofTask], ranker: Ranker) -> list[dict]:
    """Rank of the ground-truth theorem for every distinct step of every proof.

    Candidates are the background theorems of the task whose assertion
    reaches the step's conclusion; ties are broken by database order.
    """
    index, _ = applicability_index(db)
    out = []
    for task in tasks:
        tree = task.target.proof
        if tree is None:
            continue
        limit = task.target.index
        k = 0
        for node in tree.postorder_unique():
            if node.label is None:
                continue
            app = [f for f, _phi in index.applicable(node.expr, limit)]
            ranked = ranker.rank(frame_tokens(node.expr, task.target.hypotheses), app)
            rank = next(i for i, (f, _s) in enumerate(ranked, 1) if f.label == node.label)
            out.append({"label": task.label, "step": k, "truth": node.label, "rank": rank,
                        "candidates": len(ranked)})
            k += 1
    return out


def summarize_ranks(ranks: Sequence[int], ks: Sequence[int] = (1, 5, 20)) -> dict:
    n = len(ranks)
    if not n:
        return {**{f"top{k}": 0.0 for k in ks}, "mrr": 0.0, "steps": 0}
    res = {f"top{k}": 100.0 * sum(1 for r in ranks if r <= k) / n for k in ks}
    res["mrr"] = sum(1.0 / r for r in ranks) / n
    res["steps"] = n
    return res


def cmd_eval_relevance(args) -> int:
    db = _load(args)
    out = _outdir(args)
    train, valid, test = _splits(args, db)
    part = {"train": train, "valid": valid, "test": test}[args.part]
    t0 = time.perf_counter()
    ranker = Ranker(fit_tfidf(db.assertions))
    recs = relevance_ranks(db, part, ranker)
    summary = summarize_ranks([r["rank"] for r in recs])
    _write(os.path.join(out, "ranks.jsonl"), _jsonl(recs))
    _write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "eval-relevance", args, db,
                   {"load_s": args._load_s, "eval_s": round(time.perf_counter() - t0, 3)}, {"summary": summary})
    _emit(summary)
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

def _split_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="split (and run) seed")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="split fractions preset (default: by database file name)")
    p.add_argument("--fractions", type=float, nargs=3, default=None, metavar=("TRAIN", "VALID", "TEST"))


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="mmsynth", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("db", help="path to a .mm database")
        p.add_argument("--config", help="JSON file of option defaults")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("verify", cmd_verify, "load a database and check every proof")
    p.add_argument("--report", help="write JSONL verdicts here")
    p.add_argument("--out", help="directory for verdicts and manifest")

    p = add("stats", cmd_stats, "print counts, fingerprint and split sizes")
    _split_args(p)

    p = add("split", cmd_split, "write the train/valid/test split")
    _split_args(p)
    p.add_argument("--out", required=True)

    p = add("generate", cmd_generate, "synthesize theorems")
    _split_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--policy", choices=["random", "tfidf", "ngram", "tfidf-ngram"], default="random")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sync-every", type=int, default=20)
    p.add_argument("--episode-size", type=int, default=50)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--max-tokens", type=int, default=64)
    p.add_argument("--mm-mode", choices=["standalone", "appendix"], default="standalone")

    p = add("prove", cmd_prove, "run the prover on a split")
    _split_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--part", choices=["train", "valid", "test"], default="test")
    p.add_argument("--labels", nargs="*", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--max-proof-steps", type=int, default=None,
                   help="only targets whose database proof has at most this many steps")
    p.add_argument("--max-passes", type=int, default=1000)
    p.add_argument("--time-limit", type=float, default=30.0)
    p.add_argument("--beams", type=int, nargs="+", default=[1, 5, 20])
    p.add_argument("--full-budget", action="store_true", help="10000 passes / 300 s per attempt")
    p.add_argument("--ngram-order", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)

    p = add("eval-relevance", cmd_eval_relevance, "rank ground-truth theorems by tf-idf")
    _split_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--part", choices=["train", "valid", "test"], default="valid")
    return parser, subs


def _apply_config(parser, subs, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except OSError:
        raise
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    p = subs[args.command]
    known = {a.dest for a in p._actions}
    bad = sorted(k.replace("-", "_") for k in cfg if k.replace("-", "_") not in known)
    if bad:
        raise UsageError(f"{args.config}: unknown options {bad}")
    p.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser, subs = build_parser()
    try:
        args = _apply_config(parser, subs, argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"mmsynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"mmsynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"mmsynth: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MMError as exc:
        print(f"mmsynth: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
