"""Core domain types shared by every other module.

All types are immutable after construction and safe to share across
threads. Ranks are 1-indexed at every interface; scores are 64-bit
floats and NaN is rejected at construction time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_identifier(value: str, what: str) -> None:
    _require(bool(value), f"{what} must be non-empty")
    _require(not any(ch.isspace() for ch in value), f"{what} must not contain whitespace: {value!r}")


@dataclass(frozen=True)
class Query:
    """A search query with an opaque, whitespace-free id."""

    id: str
    text: str

    def __post_init__(self) -> None:
        _check_identifier(self.id, "query id")
        _require(bool(self.text), "query text must be non-empty")


@dataclass(frozen=True)
class Passage:
    """A retrievable unit of text with an opaque docid."""

    docid: str
    text: str
    title: Optional[str] = None

    def __post_init__(self) -> None:
        _check_identifier(self.docid, "docid")


@dataclass(frozen=True)
class Candidate:
    """One passage in a candidate list, with its first-stage rank and score."""

    passage: Passage
    initial_rank: int
    initial_score: float

    def __post_init__(self) -> None:
        _require(self.initial_rank >= 1, f"initial_rank must be >= 1, got {self.initial_rank}")
        _require(not math.isnan(self.initial_score), "initial_score must not be NaN")

    @property
    def docid(self) -> str:
        return self.passage.docid


@dataclass(frozen=True)
class CandidateList:
    """A query plus its M ordered candidates; the unit of re-ranking.

    Invariant: candidates carry initial_rank exactly 1..M and appear in
    that order. An empty list is allowed (a query with no matches).
    """

    query: Query
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        seen: set[str] = set()
        for pos, cand in enumerate(self.candidates, start=1):
            _require(
                cand.initial_rank == pos,
                f"candidate at position {pos} has initial_rank {cand.initial_rank}; "
                f"ranks must be exactly 1..{len(self.candidates)} in order",
            )
            _require(cand.docid not in seen, f"duplicate docid in candidate list: {cand.docid}")
            seen.add(cand.docid)

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def docids(self) -> tuple[str, ...]:
        return tuple(c.docid for c in self.candidates)

    @staticmethod
    def from_passages(
        query: Query,
        passages: Sequence[Passage],
        scores: Optional[Sequence[float]] = None,
    ) -> "CandidateList":
        """Build a list from passages in the given order, ranks assigned 1..M."""
        if scores is None:
            scores = [0.0] * len(passages)
        _require(len(scores) == len(passages), "scores must align with passages")
        cands = tuple(
            Candidate(p, rank, float(s))
            for rank, (p, s) in enumerate(zip(passages, scores), start=1)
        )
        return CandidateList(query=query, candidates=cands)

    def reordered(self, positions: Sequence[int]) -> "CandidateList":
        """Return a new list with candidates permuted by 1-indexed positions."""
        _require(sorted(positions) == list(range(1, len(self.candidates) + 1)),
                 "positions must be a permutation of 1..M")
        cands = tuple(
            Candidate(self.candidates[p - 1].passage, rank, self.candidates[p - 1].initial_score)
            for rank, p in enumerate(positions, start=1)
        )
        return CandidateList(query=self.query, candidates=cands)


class InitialOrder(enum.Enum):
    """Candidate-order policy applied before the first re-ranking pass."""

    AS_RETRIEVED = "as-retrieved"
    RANDOM = "random"
    REVERSED = "reversed"


MAX_WINDOW = 1000


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window geometry: window size w, step s, pass count, initial order."""

    window: int
    step: int
    passes: int = 1
    initial_order: InitialOrder = InitialOrder.AS_RETRIEVED
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        _require(self.window >= 1, f"window must be >= 1, got {self.window}")
        _require(self.window <= MAX_WINDOW, f"window must be <= {MAX_WINDOW}, got {self.window}")
        _require(1 <= self.step <= self.window,
                 f"step must satisfy 1 <= step <= window, got step={self.step} window={self.window}")
        _require(self.passes >= 1, f"passes must be >= 1, got {self.passes}")
        if self.initial_order is InitialOrder.RANDOM:
            _require(self.seed is not None, "initial_order=random requires a seed")


@dataclass(frozen=True)
class TeacherPermutation:
    """Teacher rank labels: ranks[i] is the 1-indexed rank of docids[i]."""

    query_id: str
    docids: tuple[str, ...]
    ranks: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "docids", tuple(self.docids))
        object.__setattr__(self, "ranks", tuple(self.ranks))
        m = len(self.docids)
        _require(len(self.ranks) == m, "ranks must align with docids")
        _require(sorted(self.ranks) == list(range(1, m + 1)),
                 f"ranks must be a permutation of 1..{m}")

    @staticmethod
    def from_identifier_order(query_id: str, docids: Sequence[str],
                              order: Sequence[int]) -> "TeacherPermutation":
        """Build from an identifier order: order[k] is the 1-indexed candidate at rank k+1."""
        m = len(docids)
        _require(sorted(order) == list(range(1, m + 1)),
                 f"order must be a permutation of 1..{m}")
        ranks = [0] * m
        for pos, ident in enumerate(order, start=1):
            ranks[ident - 1] = pos
        return TeacherPermutation(query_id=query_id, docids=tuple(docids), ranks=tuple(ranks))

    def identifier_order(self) -> tuple[int, ...]:
        """Inverse view: the 1-indexed candidate identifier at each rank position."""
        order = [0] * len(self.ranks)
        for ident, rank in enumerate(self.ranks, start=1):
            order[rank - 1] = ident
        return tuple(order)


@dataclass(frozen=True)
class Ranking:
    """A scored ranking for one query.

    Entries are stored sorted by descending score with ties broken by the
    order entries were supplied (stable), so construction is deterministic.
    """

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        _check_identifier(self.query_id, "query id")
        normalized = []
        seen: set[str] = set()
        for docid, score in self.entries:
            _check_identifier(docid, "docid")
            score = float(score)
            _require(not math.isnan(score), f"NaN score for docid {docid}")
            _require(docid not in seen, f"duplicate docid in ranking: {docid}")
            seen.add(docid)
            normalized.append((docid, score))
        ordered = sorted(range(len(normalized)), key=lambda i: (-normalized[i][1], i))
        object.__setattr__(self, "entries", tuple(normalized[i] for i in ordered))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def docids(self) -> tuple[str, ...]:
        return tuple(d for d, _ in self.entries)


@dataclass(frozen=True)
class Judgments:
    """Graded relevance judgments keyed by (query_id, docid).

    Unknown pairs read as grade 0. Accepted grades are 0..3.
    """

    grades: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        frozen = {}
        for (qid, docid), rel in self.grades.items():
            rel = int(rel)
            _require(0 <= rel <= 3, f"grade must be in 0..3, got {rel} for ({qid}, {docid})")
            frozen[(qid, docid)] = rel
        object.__setattr__(self, "grades", frozen)

    def grade(self, query_id: str, docid: str) -> int:
        return self.grades.get((query_id, docid), 0)

    def query_ids(self) -> set[str]:
        return {qid for qid, _ in self.grades}

    def grades_for_query(self, query_id: str) -> dict[str, int]:
        return {d: r for (q, d), r in self.grades.items() if q == query_id}

    def __len__(self) -> int:
        return len(self.grades)

    @staticmethod
    def merge(items: Iterable[tuple[str, str, int]]) -> "Judgments":
        """Build from (qid, docid, rel) triples; later duplicates win."""
        out: dict[tuple[str, str], int] = {}
        for qid, docid, rel in items:
            out[(qid, docid)] = int(rel)
        return Judgments(out)
