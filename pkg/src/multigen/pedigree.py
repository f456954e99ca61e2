"""Columnar pedigree storage: one row per person, links stored as person ids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

MISSING = -1
DEFAULT_MAX_PERSONS = 20_000_000


class PedigreeError(ValueError):
    """Structural problem with a pedigree (links, generations, duplicates)."""


@dataclass(frozen=True)
class SimTopology:
    n_dynasties: int
    generations: int
    children_per_family: int = 1
    seed: int = 0
    max_persons: int = DEFAULT_MAX_PERSONS

    def violations(self) -> list[str]:
        out = []
        if self.n_dynasties < 1:
            out.append(f"n_dynasties={self.n_dynasties} must be > 0")
        if self.generations < 2:
            out.append(f"generations={self.generations} must be >= 2")
        if self.children_per_family < 1:
            out.append(f"children_per_family={self.children_per_family} must be >= 1")
        if not 0 <= self.seed < 2**64:
            out.append(f"seed={self.seed} must be a 64-bit unsigned integer")
        return out

    def members_in_generation(self, g: int) -> int:
        return self.n_dynasties * self.children_per_family**g

    def total_persons(self, two_parent: bool = False) -> int:
        total = 0
        for g in range(self.generations):
            n = self.members_in_generation(g)
            total += n
            if two_parent and g < self.generations - 1:
                total += n
        return total

    def to_dict(self) -> dict:
        return {
            "n_dynasties": self.n_dynasties,
            "generations": self.generations,
            "children_per_family": self.children_per_family,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Person:
    person_id: int
    dynasty_id: int
    generation: int
    father_id: int | None
    mother_id: int | None
    spouse_id: int | None
    y: float
    e: float | tuple[float, ...] | None = None


def _opt(v: int) -> int | None:
    return None if v == MISSING else int(v)


class Pedigree:
    """Multigeneration family graph held as parallel NumPy columns.

    Missing links are ``-1``. ``e`` is ``None`` or an ``(n, d)`` array of latent
    endowments.
    """

    def __init__(
        self,
        person_id,
        dynasty_id,
        generation,
        father_id,
        mother_id,
        spouse_id,
        y,
        e=None,
        topology: SimTopology | None = None,
        spec=None,
        validate: bool = True,
        row_labels=None,
        columns_present=None,
    ):
        self.person_id = np.asarray(person_id, dtype=np.int64)
        self.dynasty_id = np.asarray(dynasty_id, dtype=np.int64)
        self.generation = np.asarray(generation, dtype=np.int64)
        self.father_id = np.asarray(father_id, dtype=np.int64)
        self.mother_id = np.asarray(mother_id, dtype=np.int64)
        self.spouse_id = np.asarray(spouse_id, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.float64)
        if e is not None:
            e = np.asarray(e, dtype=np.float64)
            if e.ndim == 1:
                e = e[:, None]
        self.e = e
        self.topology = topology
        self.spec = spec
        # e.g. file line numbers, used in validation messages
        self.row_labels = row_labels
        self.columns_present = set(columns_present) if columns_present is not None else None
        n = len(self.person_id)
        for name in ("dynasty_id", "generation", "father_id", "mother_id", "spouse_id", "y"):
            if len(getattr(self, name)) != n:
                raise PedigreeError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.e is not None and len(self.e) != n:
            raise PedigreeError("latent column length mismatch")
        self._build_index()
        if validate:
            self.validate()

    def _build_index(self):
        ids = self.person_id
        n = len(ids)
        if n and ids.min() >= 0 and np.array_equal(ids, np.arange(n)):
            self._lookup = None
        else:
            order = np.argsort(ids, kind="stable")
            self._sorted_ids = ids[order]
            self._order = order
            self._lookup = True
        self.father_row = self.rows_of(self.father_id)
        self.mother_row = self.rows_of(self.mother_id)
        self.spouse_row = self.rows_of(self.spouse_id)

    def rows_of(self, ids) -> np.ndarray:
        """Map person ids to row indices; ``-1`` (and unknown ids) map to ``-1``."""
        ids = np.asarray(ids, dtype=np.int64)
        n = len(self.person_id)
        if self._lookup is None:
            ok = (ids >= 0) & (ids < n)
            return np.where(ok, ids, MISSING)
        pos = np.searchsorted(self._sorted_ids, ids)
        pos_c = np.minimum(pos, max(n - 1, 0))
        ok = (ids >= 0) & (n > 0)
        if n:
            ok &= self._sorted_ids[pos_c] == ids
        return np.where(ok, self._order[pos_c] if n else MISSING, MISSING)

    def __len__(self) -> int:
        return len(self.person_id)

    @property
    def n_generations(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.generation.max() - self.generation.min() + 1)

    @property
    def has_spouses(self) -> bool:
        return bool((self.spouse_id != MISSING).any())

    def person(self, row: int) -> Person:
        e = None
        if self.e is not None:
            vals = tuple(float(v) for v in self.e[row])
            e = vals[0] if len(vals) == 1 else vals
        return Person(
            person_id=int(self.person_id[row]),
            dynasty_id=int(self.dynasty_id[row]),
            generation=int(self.generation[row]),
            father_id=_opt(self.father_id[row]),
            mother_id=_opt(self.mother_id[row]),
            spouse_id=_opt(self.spouse_id[row]),
            y=float(self.y[row]),
            e=e,
        )

    def __iter__(self) -> Iterator[Person]:
        for i in range(len(self)):
            yield self.person(i)

    def ancestor_rows(self, k: int, line: str = "father") -> np.ndarray:
        """Row of each person's ancestor ``k`` generations up, or ``-1``.

        ``line='father'`` follows fathers throughout; ``line='mother'`` takes the
        mother first and fathers above her.
        """
        if k < 0:
            raise ValueError("k must be >= 0")
        rows = np.arange(len(self))
        if k == 0:
            return rows
        if line == "father":
            first = self.father_row
        elif line == "mother":
            first = self.mother_row
        else:
            raise ValueError(f"unknown ancestor line {line!r}")
        cur = first.copy()
        for _ in range(k - 1):
            ok = cur >= 0
            cur = np.where(ok, self.father_row[np.where(ok, cur, 0)], MISSING)
        return cur

    def _label(self, row: int) -> str:
        if self.row_labels is not None:
            return str(self.row_labels[row])
        return f"row {row}"

    def validate(self) -> None:
        """Check referential integrity, generation ordering and spouse symmetry."""
        ids = self.person_id
        if len(np.unique(ids)) != len(ids):
            uniq, counts = np.unique(ids, return_counts=True)
            dup = uniq[counts > 1][:5].tolist()
            raise PedigreeError(f"duplicate person_id(s): {dup}")
        if (ids < 0).any():
            raise PedigreeError("person_id must be non-negative")
        if (self.generation < 0).any():
            bad = int(np.flatnonzero(self.generation < 0)[0])
            raise PedigreeError(f"{self._label(bad)}: negative generation")
        for col, rows in (("father_id", self.father_row), ("mother_id", self.mother_row),
                          ("spouse_id", self.spouse_row)):
            ref = getattr(self, col)
            orphan = (ref != MISSING) & (rows == MISSING)
            if orphan.any():
                bad = int(np.flatnonzero(orphan)[0])
                raise PedigreeError(
                    f"{self._label(bad)}: {col}={int(ref[bad])} does not refer to a person in the panel"
                )
        for col, rows in (("father_id", self.father_row), ("mother_id", self.mother_row)):
            has = rows >= 0
            bad = has & (self.generation != np.where(has, self.generation[np.where(has, rows, 0)], 0) + 1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise PedigreeError(
                    f"{self._label(i)}: generation {int(self.generation[i])} must be one more than "
                    f"{col} generation {int(self.generation[rows[i]])}"
                )
        has = self.spouse_row >= 0
        if has.any():
            rows = np.flatnonzero(has)
            back = self.spouse_row[self.spouse_row[rows]]
            if (back != rows).any():
                i = int(rows[np.flatnonzero(back != rows)[0]])
                raise PedigreeError(f"{self._label(i)}: spouse link is not symmetric")
            if (self.generation[rows] != self.generation[self.spouse_row[rows]]).any():
                i = int(rows[np.flatnonzero(self.generation[rows] != self.generation[self.spouse_row[rows]])[0]])
                raise PedigreeError(f"{self._label(i)}: spouses must share a generation")
        # strict generation increase along parent links rules out cycles

    def same_panel(self, other: "Pedigree") -> bool:
        cols = ("person_id", "dynasty_id", "generation", "father_id", "mother_id", "spouse_id", "y")
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols)
