"""Evaluation: graded nDCG, rank-biased overlap, behavior counters.

nDCG uses linear gain rel / log2(i + 1) with the ideal computed from the
full judged grade multiset for the query (trec_eval's ndcg_cut
convention); a query with no positive judgments scores 0, never NaN.

rbo() is the extrapolated form of rank-biased overlap: the agreement
weighted geometric series evaluated to the deeper list's depth, with the
final agreement extrapolated beyond it. Lists of unequal length are
allowed; items must be unique within each list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .types import Judgments, Ranking


def ndcg_at_k(ranking: Ranking, judgments: Judgments, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dcg = 0.0
    for i, docid in enumerate(ranking.docids[:k], start=1):
        rel = judgments.grade(ranking.query_id, docid)
        if rel:
            dcg += rel / math.log2(i + 1)

    ideal = sorted(judgments.grades_for_query(ranking.query_id).values(), reverse=True)
    idcg = 0.0
    for i, rel in enumerate(ideal[:k], start=1):
        if rel:
            idcg += rel / math.log2(i + 1)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def rbo(list_a: Sequence[str], list_b: Sequence[str], p: float = 0.9) -> float:
    """Extrapolated rank-biased overlap of two rankings."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if not list_a or not list_b:
        raise ValueError("rbo requires non-empty lists")
    if len(set(list_a)) != len(list_a):
        raise ValueError("first list contains duplicate items")
    if len(set(list_b)) != len(list_b):
        raise ValueError("second list contains duplicate items")
    if list(list_a) == list(list_b):
        return 1.0

    short, long = sorted((list(list_a), list(list_b)), key=len)
    s, l = len(short), len(long)

    seen_short: set[str] = set()
    seen_long: set[str] = set()
    overlap = 0
    x_at_s = 0
    sum_series = 0.0
    # X_d = size of the intersection of the two depth-d prefixes.
    x_depths = []
    for d in range(1, l + 1):
        if d <= s:
            item = short[d - 1]
            if item in seen_long:
                overlap += 1
            seen_short.add(item)
        item = long[d - 1]
        if item in seen_short:
            overlap += 1
        seen_long.add(item)
        x_depths.append(overlap)
        if d == s:
            x_at_s = overlap
        sum_series += (overlap / d) * p**d
        if d > s:
            sum_series += (x_at_s * (d - s)) / (s * d) * p**d

    x_at_l = x_depths[-1]
    tail = ((x_at_l - x_at_s) / l + x_at_s / s) * p**l
    return (1.0 - p) / p * sum_series + tail


@dataclass(frozen=True)
class EvalReport:
    """Per-query metric values with macro averages."""

    per_query: dict[str, dict[str, float]]
    averages: dict[str, float]
    evaluated: int
    skipped: int

    def as_dict(self) -> dict:
        return {
            "per_query": self.per_query,
            "averages": self.averages,
            "evaluated": self.evaluated,
            "skipped": self.skipped,
        }


def evaluate(run: Sequence[Ranking], qrels: Judgments, ks: Sequence[int]) -> EvalReport:
    """Macro-averaged nDCG@k; run queries absent from qrels are skipped."""
    if not ks:
        raise ValueError("at least one cutoff k is required")
    judged = qrels.query_ids()
    per_query: dict[str, dict[str, float]] = {}
    skipped = 0
    for ranking in run:
        if ranking.query_id not in judged:
            skipped += 1
            continue
        per_query[ranking.query_id] = {
            f"ndcg@{k}": ndcg_at_k(ranking, qrels, k) for k in ks
        }
    if not per_query:
        raise ValueError("no run query appears in the qrels")
    averages = {
        f"ndcg@{k}": sum(row[f"ndcg@{k}"] for row in per_query.values()) / len(per_query)
        for k in ks
    }
    return EvalReport(
        per_query=per_query,
        averages=averages,
        evaluated=len(per_query),
        skipped=skipped,
    )


@dataclass(frozen=True)
class BehaviorStats:
    """Aggregated repair counters and re-ranking consistency."""

    repetition: int
    missing: int
    rejection: int
    rbo_mean: Optional[float]
    windows: int
    rbo_samples: int

    def as_dict(self) -> dict:
        return {
            "repetition": self.repetition,
            "missing": self.missing,
            "rejection": self.rejection,
            "rbo_mean": self.rbo_mean,
            "windows": self.windows,
            "rbo_samples": self.rbo_samples,
        }


def collect_behavior(parses: Iterable, rbo_values: Iterable[float] = ()) -> BehaviorStats:
    """Sum anomaly counters over parsed windows.

    Accepts ParsedPermutation-like objects (attributes repetition,
    missing, rejected) or plain dicts with the same keys, as read back
    from trace files.
    """
    repetition = missing = rejection = windows = 0
    for parse in parses:
        if isinstance(parse, dict):
            rep, mis = int(parse["repetition"]), int(parse["missing"])
            rej = bool(parse["rejected"])
        else:
            rep, mis, rej = parse.repetition, parse.missing, parse.rejected
        repetition += rep
        missing += mis
        rejection += int(rej)
        windows += 1
    samples = [float(v) for v in rbo_values if v is not None]
    for value in samples:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"rbo sample out of [0, 1]: {value}")
    return BehaviorStats(
        repetition=repetition,
        missing=missing,
        rejection=rejection,
        rbo_mean=sum(samples) / len(samples) if samples else None,
        windows=windows,
        rbo_samples=len(samples),
    )


def format_report(report: EvalReport) -> str:
    """Aligned plain-text table: one row per query plus the average row."""
    metrics = list(report.averages)
    width = max([len("query"), len("average")] + [len(qid) for qid in report.per_query])
    header = "query".ljust(width) + "".join(f"  {name:>10}" for name in metrics)
    lines = [header]
    for qid in sorted(report.per_query):
        row = report.per_query[qid]
        lines.append(qid.ljust(width) + "".join(f"  {row[name]:>10.4f}" for name in metrics))
    lines.append("-" * len(header))
    lines.append("average".ljust(width) + "".join(f"  {report.averages[name]:>10.4f}" for name in metrics))
    lines.append(f"evaluated: {report.evaluated}  skipped: {report.skipped}")
    return "\n".join(lines)


def format_behavior(stats: BehaviorStats) -> str:
    rbo_text = "n/a" if stats.rbo_mean is None else f"{stats.rbo_mean:.4f}"
    return "\n".join(
        [
            f"windows:     {stats.windows}",
            f"repetition:  {stats.repetition}",
            f"missing:     {stats.missing}",
            f"rejection:   {stats.rejection}",
            f"rbo_mean:    {rbo_text}  (over {stats.rbo_samples} samples)",
        ]
    )
