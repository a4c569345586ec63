"""Permutation parsing, sliding-window re-ranking, and scoring baselines.

The re-ranker asks the model for an explicit ordering of identifiers
("[2] > [3] > [1]") over one window of candidates at a time. Windows of
size w move from the back of the list to the front in steps of s, so
strong candidates surface toward rank 1 across overlapping windows; the
final window always starts at position 1 and no window is ever skipped.

Model output is repaired rather than trusted: out-of-range identifiers
are dropped, repeats keep their first occurrence, absent identifiers are
appended in original order, and a reply with no usable identifiers at
all keeps the incoming order. Every repair is counted so downstream
behavior analysis can see how well-formed the model's answers were.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, TypeVar

from .gateway import CapabilityError, Gateway, GatewayError
from .metrics import rbo
from .prompting import DEFAULT_MAX_WORDS, InstructionKind, RenderedPrompt, render
from .types import (
    Candidate,
    CandidateList,
    InitialOrder,
    Passage,
    Query,
    Ranking,
    WindowConfig,
)

_DIGITS = re.compile(r"\d+")

T = TypeVar("T")


@dataclass(frozen=True)
class ParsedPermutation:
    """Identifier order recovered from model text, with repair counters."""

    order: tuple[int, ...]
    repaired: bool
    repetition: int
    missing: int
    rejected: bool


def parse_permutation(text: str, m: int) -> ParsedPermutation:
    """Recover a full permutation of 1..m from arbitrary model text.

    Total function: any input yields a valid permutation plus counters
    describing what had to be repaired.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")

    order: list[int] = []
    seen: set[int] = set()
    repetition = 0
    for run in _DIGITS.findall(text):
        ident = int(run)
        if not 1 <= ident <= m:
            continue
        if ident in seen:
            repetition += 1
            continue
        seen.add(ident)
        order.append(ident)

    if not order:
        return ParsedPermutation(
            order=tuple(range(1, m + 1)),
            repaired=True,
            repetition=0,
            missing=0,
            rejected=True,
        )

    missing = m - len(order)
    if missing:
        order.extend(i for i in range(1, m + 1) if i not in seen)
    return ParsedPermutation(
        order=tuple(order),
        repaired=repetition > 0 or missing > 0,
        repetition=repetition,
        missing=missing,
        rejected=False,
    )


def apply_permutation(window_candidates: Sequence[T], parsed: ParsedPermutation) -> list[T]:
    if len(window_candidates) != len(parsed.order):
        raise ValueError(
            f"window holds {len(window_candidates)} candidates but the "
            f"permutation covers {len(parsed.order)}"
        )
    return [window_candidates[ident - 1] for ident in parsed.order]


@dataclass(frozen=True)
class ScoreVector:
    """Per-candidate relevance scores, aligned with candidate order."""

    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        for s in self.scores:
            if not math.isfinite(s):
                raise ValueError(f"scores must be finite, got {s}")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class WindowTrace:
    """One re-ranked window, as recorded in trace files."""

    query_id: str
    pass_index: int
    start: int
    end: int
    prompt_sha256: str
    raw_text: str
    parsed: ParsedPermutation
    rbo_sample: Optional[float]

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "pass": self.pass_index,
            "start": self.start,
            "end": self.end,
            "prompt_sha256": self.prompt_sha256,
            "raw_text": self.raw_text,
            "order": list(self.parsed.order),
            "repetition": self.parsed.repetition,
            "missing": self.parsed.missing,
            "rejected": self.parsed.rejected,
            "rbo": self.rbo_sample,
        }


@dataclass(frozen=True)
class RerankResult:
    query_id: str
    ranking: Ranking
    windows: tuple[WindowTrace, ...]
    repetition: int
    missing: int
    rejection: int
    rbo_samples: tuple[float, ...]


def _window_starts(m: int, window: int, step: int) -> list[int]:
    if m <= window:
        return [1]
    starts = []
    begin = m - window + 1
    while True:
        starts.append(max(1, begin))
        if begin <= 1:
            break
        begin -= step
    return starts


def _prompt_sha256(prompt: RenderedPrompt) -> str:
    if prompt.messages is not None:
        payload = json.dumps(
            [{"role": m.role, "content": m.content} for m in prompt.messages],
            ensure_ascii=False,
        )
    else:
        payload = prompt.text or ""
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _initial_candidates(candidate_list: CandidateList, config: WindowConfig) -> list[Candidate]:
    cands = list(candidate_list.candidates)
    if config.initial_order is InitialOrder.REVERSED:
        cands.reverse()
    elif config.initial_order is InitialOrder.RANDOM:
        material = f"{config.seed}:{candidate_list.query.id}:initial-order".encode()
        rng = random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))
        rng.shuffle(cands)
    return cands


def sliding_rerank(
    candidate_list: CandidateList,
    window_config: WindowConfig,
    kind: InstructionKind,
    gateway: Gateway,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
    rbo_p: float = 0.9,
) -> RerankResult:
    """Re-rank one candidate list with the back-to-first window strategy.

    Consecutive windows within a pass overlap; the ordering of each shared
    region before and after the later window is compared with rank-biased
    overlap and recorded as a consistency sample.
    """
    if not kind.is_permutation:
        raise ValueError(f"sliding_rerank requires a permutation instruction, got {kind.key}")
    m = len(candidate_list)
    if m < 1:
        raise ValueError("cannot re-rank an empty candidate list")

    query = candidate_list.query
    cands = _initial_candidates(candidate_list, window_config)
    traces: list[WindowTrace] = []
    rbo_samples: list[float] = []
    repetition = missing = rejection = 0

    for pass_index in range(1, window_config.passes + 1):
        previous: Optional[tuple[int, int]] = None
        for start in _window_starts(m, window_config.window, window_config.step):
            end = min(start + window_config.window - 1, m)
            window = cands[start - 1 : end]
            prompt = render(kind, query, window, max_words, window=window_config.window)
            try:
                response = gateway.complete(prompt, query_id=query.id)
            except GatewayError as exc:
                raise GatewayError(
                    f"query {query.id} pass {pass_index} window [{start}..{end}]: {exc}"
                ) from exc
            parsed = parse_permutation(response.text, len(window))

            overlap_before: Optional[list[str]] = None
            if previous is not None:
                prev_start, prev_end = previous
                overlap_end = min(end, prev_end)
                if prev_start <= overlap_end:
                    overlap_before = [c.docid for c in cands[prev_start - 1 : overlap_end]]

            cands[start - 1 : end] = apply_permutation(window, parsed)

            rbo_sample: Optional[float] = None
            if overlap_before:
                shared = set(overlap_before)
                overlap_after = [c.docid for c in cands[start - 1 : end] if c.docid in shared]
                rbo_sample = rbo(overlap_before, overlap_after, rbo_p)
                rbo_samples.append(rbo_sample)

            repetition += parsed.repetition
            missing += parsed.missing
            rejection += int(parsed.rejected)
            traces.append(
                WindowTrace(
                    query_id=query.id,
                    pass_index=pass_index,
                    start=start,
                    end=end,
                    prompt_sha256=_prompt_sha256(prompt),
                    raw_text=response.text,
                    parsed=parsed,
                    rbo_sample=rbo_sample,
                )
            )
            previous = (start, end)

    ranking = Ranking(
        query.id, tuple((c.docid, float(m - i)) for i, c in enumerate(cands))
    )
    return RerankResult(
        query_id=query.id,
        ranking=ranking,
        windows=tuple(traces),
        repetition=repetition,
        missing=missing,
        rejection=rejection,
        rbo_samples=tuple(rbo_samples),
    )


def hybrid_topk_rerank(
    query: Query,
    base_ranking: Ranking,
    corpus: Mapping[str, Passage],
    window_config: WindowConfig,
    kind: InstructionKind,
    gateway: Gateway,
    k: int = 30,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
    rbo_p: float = 0.9,
) -> RerankResult:
    """Re-rank only the top k of an existing ranking; the tail keeps its order.

    Scores are reassigned as N..1 over the stitched list so the output
    stays globally descending.
    """
    n = len(base_ranking)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")

    head = base_ranking.entries[:k]
    try:
        passages = [corpus[docid] for docid, _ in head]
    except KeyError as exc:
        raise ValueError(f"docid {exc.args[0]!r} from the run is missing from the corpus") from None
    sub_list = CandidateList.from_passages(query, passages, scores=[s for _, s in head])
    sub = sliding_rerank(
        sub_list, window_config, kind, gateway, max_words=max_words, rbo_p=rbo_p
    )

    final_docids = list(sub.ranking.docids) + [docid for docid, _ in base_ranking.entries[k:]]
    ranking = Ranking(
        query.id, tuple((docid, float(n - i)) for i, docid in enumerate(final_docids))
    )
    return RerankResult(
        query_id=query.id,
        ranking=ranking,
        windows=sub.windows,
        repetition=sub.repetition,
        missing=sub.missing,
        rejection=sub.rejection,
        rbo_samples=sub.rbo_samples,
    )


def score_query_gen(
    gateway: Gateway,
    query: Query,
    candidate_list: CandidateList,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
) -> ScoreVector:
    """Mean token log-probability of regenerating the query from each passage."""
    scores = []
    for candidate in candidate_list.candidates:
        prompt = render(InstructionKind.QUERY_GEN, query, candidate.passage, max_words)
        response = gateway.complete(prompt, want_logprobs=True, query_id=query.id)
        if not response.token_logprobs:
            raise CapabilityError(
                f"no scored tokens returned for docid {candidate.docid}"
            )
        logprobs = [lp for _, lp in response.token_logprobs]
        scores.append(sum(logprobs) / len(logprobs))
    return ScoreVector(tuple(scores))


@dataclass(frozen=True)
class RelevanceScores:
    """Yes/No judgment scores in [0, 2] plus a count of unusable judgments."""

    scores: ScoreVector
    neutral_count: int


def score_relevance_gen(
    gateway: Gateway,
    query: Query,
    candidate_list: CandidateList,
    few_shot: bool = True,
    *,
    max_words: int = DEFAULT_MAX_WORDS,
) -> RelevanceScores:
    """Score each passage as 1 + p(Yes) or 1 - p(No) from the judgment token.

    A first token that is neither yes nor no scores a neutral 1.0 and is
    counted, so callers can see how often the model ignored the format.
    """
    kind = (
        InstructionKind.RELEVANCE_GEN_FEW_SHOT
        if few_shot
        else InstructionKind.RELEVANCE_GEN_ZERO_SHOT
    )
    scores = []
    neutral = 0
    for candidate in candidate_list.candidates:
        prompt = render(kind, query, candidate.passage, max_words)
        response = gateway.complete(prompt, want_logprobs=True, query_id=query.id)
        judgment: Optional[tuple[str, float]] = None
        for token, logprob in response.token_logprobs or ():
            if token.strip():
                judgment = (token.strip().lower(), logprob)
                break
        if judgment is None:
            scores.append(1.0)
            neutral += 1
            continue
        word, logprob = judgment
        if word == "yes":
            scores.append(1.0 + math.exp(logprob))
        elif word == "no":
            scores.append(1.0 - math.exp(logprob))
        else:
            scores.append(1.0)
            neutral += 1
    return RelevanceScores(scores=ScoreVector(tuple(scores)), neutral_count=neutral)


def ranking_from_scores(candidate_list: CandidateList, scores: ScoreVector) -> Ranking:
    """Ranking from per-candidate scores; ties keep the initial order."""
    if len(scores) != len(candidate_list):
        raise ValueError(
            f"{len(scores)} scores for {len(candidate_list)} candidates"
        )
    entries = tuple(
        (candidate.docid, score)
        for candidate, score in zip(candidate_list.candidates, scores.scores)
    )
    return Ranking(candidate_list.query.id, entries)


def rerank_many(
    candidate_lists: Sequence[CandidateList],
    window_config: WindowConfig,
    kind: InstructionKind,
    gateway: Gateway,
    *,
    jobs: int = 1,
    max_words: int = DEFAULT_MAX_WORDS,
    rbo_p: float = 0.9,
) -> list[RerankResult]:
    """Re-rank several queries, optionally in parallel; results keep input order."""
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")

    def one(candidate_list: CandidateList) -> RerankResult:
        return sliding_rerank(
            candidate_list, window_config, kind, gateway, max_words=max_words, rbo_p=rbo_p
        )

    if jobs == 1 or len(candidate_lists) <= 1:
        return [one(cl) for cl in candidate_lists]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(one, cl) for cl in candidate_lists]
        return [future.result() for future in futures]
