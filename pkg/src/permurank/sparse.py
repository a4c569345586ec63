"""First-stage retrieval: in-memory inverted index with BM25 scoring.

Tokenization is Unicode lowercasing followed by splitting on any
non-alphanumeric character; there is no stemming and no stopword list.
A passage's title, when present, is indexed in front of its text.

Scoring is classic Robertson BM25 with the Lucene-style idf

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)

which stays positive even on tiny corpora, so any document containing a
query term scores above zero. Documents matching no query term are
excluded from search results.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .textio import atomic_write_text
from .types import Candidate, CandidateList, Passage, Query

_TOKEN = re.compile(r"[^\W_]+")

INDEX_FORMAT_VERSION = 1


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class Index:
    """Immutable inverted index over a passage corpus.

    postings map each term to (doc ordinal, term frequency) pairs in
    ascending ordinal order; ordinals index into docids / doc_lengths /
    passages, which follow corpus iteration order.
    """

    postings: dict[str, tuple[tuple[int, int], ...]]
    doc_lengths: tuple[int, ...]
    avg_doclen: float
    doc_count: int
    docids: tuple[str, ...]
    passages: tuple[Passage, ...]
    _ordinals: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self._ordinals:
            object.__setattr__(
                self, "_ordinals", {docid: i for i, docid in enumerate(self.docids)}
            )

    def ordinal(self, docid: str) -> int:
        try:
            return self._ordinals[docid]
        except KeyError:
            raise ValueError(f"docid not indexed: {docid}") from None

    def passage(self, docid: str) -> Passage:
        return self.passages[self.ordinal(docid)]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)


def passage_tokens(passage: Passage) -> list[str]:
    content = f"{passage.title} {passage.text}" if passage.title else passage.text
    return tokenize(content)


def build_index(corpus: Mapping[str, Passage] | Iterable[Passage]) -> Index:
    passages = list(corpus.values()) if isinstance(corpus, Mapping) else list(corpus)
    if not passages:
        raise ValueError("cannot index an empty corpus")

    seen: set[str] = set()
    postings_lists: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for ordinal, passage in enumerate(passages):
        if passage.docid in seen:
            raise ValueError(f"duplicate docid in corpus: {passage.docid}")
        seen.add(passage.docid)
        tokens = passage_tokens(passage)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings_lists.setdefault(term, []).append((ordinal, tf))

    return Index(
        postings={term: tuple(pairs) for term, pairs in postings_lists.items()},
        doc_lengths=tuple(doc_lengths),
        avg_doclen=sum(doc_lengths) / len(doc_lengths),
        doc_count=len(passages),
        docids=tuple(p.docid for p in passages),
        passages=tuple(passages),
    )


def _tf_part(tf: int, doclen: int, avg_doclen: float, params: Bm25Params) -> float:
    norm = 1.0 - params.b + params.b * (doclen / avg_doclen if avg_doclen > 0 else 0.0)
    return tf * (params.k1 + 1.0) / (tf + params.k1 * norm)


def bm25_score(index: Index, params: Bm25Params, query_text: str, docid: str) -> float:
    """BM25 score of one document, summed over distinct query terms."""
    ordinal = index.ordinal(docid)
    doclen = index.doc_lengths[ordinal]
    score = 0.0
    for term in sorted(set(tokenize(query_text))):
        pairs = index.postings.get(term)
        if not pairs:
            continue
        tf = next((tf for doc, tf in pairs if doc == ordinal), 0)
        if tf == 0:
            continue
        score += index.idf(term) * _tf_part(tf, doclen, index.avg_doclen, params)
    return score


def search(index: Index, params: Bm25Params, query: Query, k: int = 100) -> CandidateList:
    """Top-k candidates by BM25, ties broken by ascending docid."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    accum: dict[int, float] = {}
    for term in sorted(set(tokenize(query.text))):
        pairs = index.postings.get(term)
        if not pairs:
            continue
        idf = index.idf(term)
        for ordinal, tf in pairs:
            part = idf * _tf_part(tf, index.doc_lengths[ordinal], index.avg_doclen, params)
            accum[ordinal] = accum.get(ordinal, 0.0) + part

    scored = [(ordinal, score) for ordinal, score in accum.items() if score > 0.0]
    scored.sort(key=lambda pair: (-pair[1], index.docids[pair[0]]))
    top = scored[:k]
    candidates = tuple(
        Candidate(index.passages[ordinal], rank, score)
        for rank, (ordinal, score) in enumerate(top, start=1)
    )
    return CandidateList(query=query, candidates=candidates)


def index_to_payload(index: Index) -> dict:
    return {
        "version": INDEX_FORMAT_VERSION,
        "docids": list(index.docids),
        "doc_lengths": list(index.doc_lengths),
        "postings": {term: [list(pair) for pair in pairs] for term, pairs in index.postings.items()},
        "passages": [
            {"docid": p.docid, "text": p.text, **({"title": p.title} if p.title else {})}
            for p in index.passages
        ],
    }


def index_from_payload(payload: dict) -> Index:
    if not isinstance(payload, dict) or payload.get("version") != INDEX_FORMAT_VERSION:
        raise ValueError(
            f"unsupported index format version; expected {INDEX_FORMAT_VERSION}"
        )
    try:
        doc_lengths = tuple(int(n) for n in payload["doc_lengths"])
        passages = tuple(
            Passage(docid=str(obj["docid"]), text=str(obj["text"]), title=obj.get("title"))
            for obj in payload["passages"]
        )
        index = Index(
            postings={
                term: tuple((int(doc), int(tf)) for doc, tf in pairs)
                for term, pairs in payload["postings"].items()
            },
            doc_lengths=doc_lengths,
            avg_doclen=sum(doc_lengths) / len(doc_lengths) if doc_lengths else 0.0,
            doc_count=len(doc_lengths),
            docids=tuple(str(d) for d in payload["docids"]),
            passages=passages,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed index payload: {exc}") from None
    if len(index.docids) != index.doc_count or len(index.passages) != index.doc_count:
        raise ValueError("inconsistent index tables")
    return index


def save_index(index: Index, path: str) -> None:
    atomic_write_text(path, json.dumps(index_to_payload(index), ensure_ascii=False))


def load_index(path: str) -> Index:
    with open(path, "r", encoding="utf-8-sig") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid index file: {exc}") from None
    try:
        return index_from_payload(payload)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
