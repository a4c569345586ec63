"""File ingestion and persistence.

Formats handled here:

    TREC run line:   `qid Q0 docid rank score tag`, single-space separated.
    qrels line:      `qid iter docid rel` (iter ignored on read, written as 0).
    corpus JSONL:    one object per line: {"docid", "text", optional "title"}.
    query file:      `.jsonl`/`.json` with {"qid", "text"} objects, otherwise
                     TSV lines `qid<TAB>text`.
    graded set JSONL: {"qid", "query", "docid", "text", "rel"} with rel in
                     {0, 1, 2}; consecutive lines sharing a qid form one
                     candidate list, in file order.
    teacher JSONL:   {"query_id", "query_text", "docids", "permutation"}, one
                     record per query; permutation is 1-indexed into docids.

All files are UTF-8; a leading BOM is tolerated and stripped. Scores are
written with shortest round-trip precision so that write/read is the
identity on 64-bit floats. Writers are atomic: output appears under the
final name only after a complete, flushed write.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .types import CandidateList, Judgments, Passage, Query, Ranking


@dataclass(frozen=True)
class RunEntry:
    """One line of a TREC run file."""

    query_id: str
    docid: str
    rank: int
    score: float
    tag: str


@dataclass(frozen=True)
class TeacherRecord:
    """Serialized teacher permutation for one query.

    `permutation` lists candidate identifiers (1-indexed into `docids`)
    in teacher-preferred order, best first.
    """

    query_id: str
    query_text: str
    docids: tuple[str, ...]
    permutation: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "docids", tuple(self.docids))
        object.__setattr__(self, "permutation", tuple(self.permutation))
        m = len(self.docids)
        if sorted(self.permutation) != list(range(1, m + 1)):
            raise ValueError(
                f"teacher record {self.query_id}: permutation must cover 1..{m}"
            )


def atomic_write_text(path: str, content: str) -> None:
    # Write to a sibling temp file and rename, so failures never leave a
    # partial file under the final name.
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(content)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_lines(path: str) -> Iterator[tuple[int, str]]:
    # utf-8-sig strips a BOM if present and is a no-op otherwise.
    with open(path, "r", encoding="utf-8-sig") as handle:
        for line_no, line in enumerate(handle, start=1):
            yield line_no, line.rstrip("\n")


def read_qrels(path: str) -> Judgments:
    """Read TREC qrels; duplicate (qid, docid) lines keep the last value."""
    grades: dict[tuple[str, str], int] = {}
    for line_no, line in _read_lines(path):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ValueError(f"{path}:{line_no}: expected 4 fields, got {len(fields)}")
        qid, _iteration, docid, rel_text = fields
        try:
            rel = int(rel_text)
        except ValueError:
            raise ValueError(f"{path}:{line_no}: relevance grade is not an integer: {rel_text!r}") from None
        if rel < 0:
            raise ValueError(f"{path}:{line_no}: negative relevance grade {rel}")
        grades[(qid, docid)] = rel
    return Judgments(grades)


def write_qrels(judgments: Judgments, path: str) -> None:
    lines = [f"{qid} 0 {docid} {rel}" for (qid, docid), rel in judgments.grades.items()]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_run(rankings: Sequence[Ranking], tag: str, path: str) -> None:
    """Write rankings as a TREC run; ranks restart at 1 per query."""
    if not tag or any(ch.isspace() for ch in tag):
        raise ValueError(f"run tag must be non-empty without whitespace: {tag!r}")
    lines: list[str] = []
    for ranking in rankings:
        for rank, (docid, score) in enumerate(ranking.entries, start=1):
            lines.append(f"{ranking.query_id} Q0 {docid} {rank} {score!r} {tag}")
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_run(path: str) -> list[Ranking]:
    """Read a TREC run back into Rankings, in first-appearance query order."""
    per_query: dict[str, list[tuple[int, str, float]]] = {}
    for line_no, line in _read_lines(path):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise ValueError(f"{path}:{line_no}: expected 6 fields, got {len(fields)}")
        qid, _q0, docid, rank_text, score_text, _tag = fields
        try:
            rank = int(rank_text)
            score = float(score_text)
        except ValueError:
            raise ValueError(f"{path}:{line_no}: bad rank or score: {line!r}") from None
        per_query.setdefault(qid, []).append((rank, docid, score))

    rankings = []
    for qid, rows in per_query.items():
        rows.sort(key=lambda row: row[0])
        ranks = [rank for rank, _, _ in rows]
        if ranks != list(range(1, len(rows) + 1)):
            raise ValueError(f"{path}: query {qid}: ranks are not contiguous from 1: {ranks}")
        scores = [score for _, _, score in rows]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"{path}: query {qid}: scores increase with rank")
        rankings.append(Ranking(qid, tuple((docid, score) for _, docid, score in rows)))
    return rankings


def _json_lines(path: str) -> Iterator[tuple[int, dict]]:
    for line_no, line in _read_lines(path):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ValueError(f"{path}:{line_no}: expected a JSON object")
        yield line_no, obj


def load_jsonl_corpus(path: str) -> dict[str, Passage]:
    """Load a JSONL corpus keyed by docid, preserving file order."""
    corpus: dict[str, Passage] = {}
    for line_no, obj in _json_lines(path):
        try:
            passage = Passage(docid=str(obj["docid"]), text=str(obj["text"]),
                              title=str(obj["title"]) if obj.get("title") is not None else None)
        except KeyError as exc:
            raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
        if passage.docid in corpus:
            raise ValueError(f"{path}:{line_no}: duplicate docid {passage.docid}")
        corpus[passage.docid] = passage
    return corpus


def load_queries(path: str) -> list[Query]:
    """Load queries from JSONL ({"qid","text"}) or TSV (`qid<TAB>text`)."""
    queries: list[Query] = []
    seen: set[str] = set()
    if path.endswith((".jsonl", ".json")):
        for line_no, obj in _json_lines(path):
            try:
                query = Query(id=str(obj["qid"]), text=str(obj["text"]))
            except KeyError as exc:
                raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
            if query.id in seen:
                raise ValueError(f"{path}:{line_no}: duplicate query id {query.id}")
            seen.add(query.id)
            queries.append(query)
        return queries
    for line_no, line in _read_lines(path):
        if not line.strip():
            continue
        qid, sep, text = line.partition("\t")
        if not sep or not text.strip():
            raise ValueError(f"{path}:{line_no}: expected `qid<TAB>text`")
        query = Query(id=qid.strip(), text=text.strip())
        if query.id in seen:
            raise ValueError(f"{path}:{line_no}: duplicate query id {query.id}")
        seen.add(query.id)
        queries.append(query)
    return queries


def load_graded_set(path: str) -> tuple[list[Query], list[CandidateList], Judgments]:
    """Load a graded candidate file: per-query passage lists plus judgments.

    Lines sharing a qid are grouped in file order into one CandidateList;
    grades outside {0, 1, 2} are rejected.
    """
    queries: list[Query] = []
    passages_by_query: dict[str, list[Passage]] = {}
    query_by_id: dict[str, Query] = {}
    grades: dict[tuple[str, str], int] = {}
    for line_no, obj in _json_lines(path):
        try:
            qid = str(obj["qid"])
            query_text = str(obj["query"])
            docid = str(obj["docid"])
            text = str(obj["text"])
            rel = int(obj["rel"])
        except KeyError as exc:
            raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
        except (TypeError, ValueError):
            raise ValueError(f"{path}:{line_no}: rel must be an integer") from None
        if rel not in (0, 1, 2):
            raise ValueError(f"{path}:{line_no}: rel must be 0, 1, or 2, got {rel}")
        if qid not in query_by_id:
            query = Query(id=qid, text=query_text)
            query_by_id[qid] = query
            queries.append(query)
            passages_by_query[qid] = []
        if (qid, docid) in grades:
            raise ValueError(f"{path}:{line_no}: duplicate docid {docid} for query {qid}")
        passages_by_query[qid].append(Passage(docid=docid, text=text))
        grades[(qid, docid)] = rel

    candidate_lists = [
        CandidateList.from_passages(query_by_id[qid], passages)
        for qid, passages in passages_by_query.items()
    ]
    return queries, candidate_lists, Judgments(grades)


def read_teacher_records(path: str) -> list[TeacherRecord]:
    records = []
    for line_no, obj in _json_lines(path):
        try:
            record = TeacherRecord(
                query_id=str(obj["query_id"]),
                query_text=str(obj["query_text"]),
                docids=tuple(str(d) for d in obj["docids"]),
                permutation=tuple(int(i) for i in obj["permutation"]),
            )
        except KeyError as exc:
            raise ValueError(f"{path}:{line_no}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{line_no}: {exc}") from None
        records.append(record)
    return records


def write_teacher_records(records: Iterable[TeacherRecord], path: str) -> None:
    lines = [
        json.dumps(
            {
                "query_id": record.query_id,
                "query_text": record.query_text,
                "docids": list(record.docids),
                "permutation": list(record.permutation),
            },
            ensure_ascii=False,
        )
        for record in records
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
