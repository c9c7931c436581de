"""Proof tasks and train/valid/test splits."""
from __future__ import annotations

import random
from collections.abc import Set
from dataclasses import dataclass
from typing import Iterator

from .corpus import Database, Frame


class Background(Set):
    """Labels of every provable assertion preceding a target, in database order.

    Membership is an index comparison, so tasks over large databases do not
    each materialize a set of tens of thousands of labels.
    """

    __slots__ = ("_db", "_end", "_limit")

    def __init__(self, db: Database, end: int) -> None:
        self._db = db
        self._end = end      # position of the target in db.assertions
        self._limit = db.assertions[end].index if end < len(db.assertions) else len(db.statements)

    def __contains__(self, label) -> bool:
        f = self._db.frames.get(label)
        if f is None or f.typecode != self._db.provable_typecode:
            return False
        return f.index < self._limit

    def __iter__(self) -> Iterator[str]:
        for f in self._db.assertions[:self._end]:
            yield f.label

    def __len__(self) -> int:
        return self._end

    def frames(self) -> list[Frame]:
        return self._db.assertions[:self._end]

    def __repr__(self) -> str:
        return f"<Background of {self._end} assertions>"


@dataclass(frozen=True)
class ProofTask:
    target: Frame
    background: Background

    @property
    def label(self) -> str:
        return self.target.label


# Fractions reproducing the reference split sizes exactly.
PRESETS = {
    "iset.mm": (7123 / 8916, 890 / 8916, 903 / 8916),
    "set.mm": (21786 / 27218, 2712 / 27218, 2720 / 27218),
    "default": (0.8, 0.1, 0.1),
}


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    fractions: tuple = PRESETS["default"]

    def __post_init__(self) -> None:
        if len(self.fractions) != 3:
            raise ValueError("fractions must be (train, valid, test)")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("each fraction must lie in [0, 1]")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {sum(self.fractions)}, not 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "SplitSpec":
        return cls(seed, PRESETS[name])

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = round(self.fractions[0] * n)
        n_valid = min(n - n_train, round(self.fractions[1] * n))
        return n_train, n_valid, n - n_train - n_valid


def all_tasks(db: Database) -> list[ProofTask]:
    """One task per provable ``$p`` statement, in database order."""
    out = []
    for pos, f in enumerate(db.assertions):
        if f.kind == "$p":
            out.append(ProofTask(f, Background(db, pos)))
    return out


def build_proof_tasks(db: Database, spec: SplitSpec) -> tuple[list[ProofTask], list[ProofTask], list[ProofTask]]:
    """Split every theorem's task by a seeded shuffle.

    Each returned list keeps database order, so equal specs give identical
    lists.
    """
    tasks = all_tasks(db)
    order = list(range(len(tasks)))
    random.Random(spec.seed).shuffle(order)
    n_train, n_valid, _ = spec.sizes(len(tasks))
    parts = (sorted(order[:n_train]), sorted(order[n_train:n_train + n_valid]), sorted(order[n_train + n_valid:]))
    return tuple([tasks[i] for i in part] for part in parts)


def split_labels(splits) -> dict[str, list[str]]:
    return {name: [t.label for t in part] for name, part in zip(("train", "valid", "test"), splits)}
