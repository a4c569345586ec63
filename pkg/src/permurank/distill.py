"""Ranking losses, gradient checks, and the linear student trainer.

A teacher permutation over M candidates yields M(M-1)/2 ordered pairs
(i, j) with r_i < r_j, meaning the teacher prefers candidate i. Four
losses turn those labels into gradients on per-candidate scores:

    ranknet       sum over pairs of ln(1 + exp(-(s_i - s_j)))
    listwise-ce   -log softmax(s) at the teacher's top candidate
    lambda        pairwise log2(1 + exp(-(s_i - s_j))) weighted by
                  |G_i - G_j| * |1/D(pi_i) - 1/D(pi_j)|, with the weight
                  held constant within an update; pi is the ranking
                  induced by the current scores (ties by index), gains
                  default to M - r_i and discounts to log2(1 + position)
    bce           binary cross-entropy of sigmoid(s_i) against the
                  indicator r_i = 1

The student is a linear model over six lexical features of a
query-passage pair; training is full-batch-per-query gradient descent
with per-query losses normalized by pair count (or list length for bce)
so the step size is independent of M.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .sparse import Bm25Params, Index, bm25_score, build_index, passage_tokens, tokenize
from .textio import TeacherRecord, atomic_write_text
from .types import CandidateList, Passage, Query, Ranking, TeacherPermutation

LN2 = math.log(2.0)

FEATURE_NAMES = ("bm25", "term_overlap", "idf_overlap", "coverage", "log_length", "bias")


class LossKind(enum.Enum):
    RANKNET = "ranknet"
    LISTWISE_CE = "listwise-ce"
    LAMBDA = "lambda"
    POINTWISE_BCE = "bce"

    @property
    def key(self) -> str:
        return self.value

    @property
    def is_pairwise(self) -> bool:
        return self in (LossKind.RANKNET, LossKind.LAMBDA)

    @staticmethod
    def from_key(key: str) -> "LossKind":
        for kind in LossKind:
            if kind.value == key:
                return kind
        known = ", ".join(k.value for k in LossKind)
        raise ValueError(f"unknown loss {key!r} (known: {known})")


@dataclass(frozen=True)
class LambdaConfig:
    """Gain and discount functions for the lambda weight.

    gain(rank, m) must be non-negative; discount(position) must be
    positive and strictly increasing. Both are checked at use.
    """

    gain: Callable[[int, int], float] = field(default=lambda rank, m: float(m - rank))
    discount: Callable[[int], float] = field(default=lambda pos: math.log2(1 + pos))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


@dataclass(frozen=True)
class LinearStudent:
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(FEATURE_NAMES):
            raise ValueError(
                f"expected {len(FEATURE_NAMES)} weights, got {len(self.weights)}"
            )
        for w in self.weights:
            if not math.isfinite(w):
                raise ValueError(f"weights must be finite, got {w}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def extract_features(
    query: Query, passage: Passage, index: Index, params: Optional[Bm25Params] = None
) -> np.ndarray:
    """Six lexical features of a query-passage pair; bias is always last."""
    params = params if params is not None else Bm25Params()
    query_terms = sorted(set(tokenize(query.text)))
    tokens = passage_tokens(passage)
    token_set = set(tokens)
    overlap_terms = [t for t in query_terms if t in token_set]
    features = np.array(
        [
            bm25_score(index, params, query.text, passage.docid),
            float(len(overlap_terms)),
            sum(index.idf(t) for t in overlap_terms),
            len(overlap_terms) / len(query_terms) if query_terms else 0.0,
            math.log1p(len(tokens)),
            1.0,
        ]
    )
    if not np.all(np.isfinite(features)):
        raise ValueError(f"non-finite feature for docid {passage.docid}")
    return features


def extract_pairs(teacher: TeacherPermutation) -> list[tuple[int, int]]:
    """All ordered pairs (i, j), 1-indexed, with r_i < r_j; M(M-1)/2 of them."""
    ranks = teacher.ranks
    pairs = []
    for a in range(len(ranks)):
        for b in range(a + 1, len(ranks)):
            if ranks[a] < ranks[b]:
                pairs.append((a + 1, b + 1))
            else:
                pairs.append((b + 1, a + 1))
    return pairs


def _validate_instance(scores, ranks) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    r = np.asarray(list(ranks), dtype=int)
    if sorted(r.tolist()) != list(range(1, s.size + 1)):
        raise ValueError(f"ranks must be a permutation of 1..{s.size}")
    return s, r


def _pair_indices(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # 0-indexed (i, j) arrays with r[i] < r[j], one row per unordered pair.
    a, b = np.triu_indices(len(r), k=1)
    swap = r[a] > r[b]
    return np.where(swap, b, a), np.where(swap, a, b)


def _ranks_from_scores(s: np.ndarray) -> np.ndarray:
    # Position of each candidate when sorted by descending score, ties by index.
    order = np.lexsort((np.arange(s.size), -s))
    positions = np.empty(s.size, dtype=int)
    positions[order] = np.arange(1, s.size + 1)
    return positions


def _lambda_weights(
    r: np.ndarray, pi: np.ndarray, config: LambdaConfig,
    i_idx: np.ndarray, j_idx: np.ndarray,
) -> np.ndarray:
    m = len(r)
    gains = np.array([config.gain(int(rank), m) for rank in r], dtype=float)
    if np.any(gains < 0):
        raise ValueError("gain function produced a negative value")
    by_position = np.array([config.discount(pos) for pos in range(1, m + 1)], dtype=float)
    if np.any(by_position <= 0) or np.any(np.diff(by_position) <= 0):
        raise ValueError("discount function must be positive and strictly increasing")
    inv_discount = 1.0 / by_position[pi - 1]
    return np.abs(gains[i_idx] - gains[j_idx]) * np.abs(inv_discount[i_idx] - inv_discount[j_idx])


def _loss_and_grad(
    kind: LossKind,
    s: np.ndarray,
    r: np.ndarray,
    lambda_config: LambdaConfig,
    pi: Optional[np.ndarray],
) -> tuple[float, np.ndarray]:
    m = s.size
    grad = np.zeros(m)

    if kind.is_pairwise:
        if m < 2:
            raise ValueError(f"{kind.key} needs at least 2 candidates, got {m}")
        i_idx, j_idx = _pair_indices(r)
        diffs = s[i_idx] - s[j_idx]
        # exp(-logaddexp(0, d)) is a numerically stable sigmoid(-d).
        sig_neg = np.exp(-np.logaddexp(0.0, diffs))
        per_pair = np.logaddexp(0.0, -diffs)
        if kind is LossKind.RANKNET:
            loss = float(per_pair.sum())
            pair_grad = sig_neg
        else:
            if pi is None:
                pi = _ranks_from_scores(s)
            delta = _lambda_weights(r, pi, lambda_config, i_idx, j_idx)
            loss = float((delta * per_pair).sum() / LN2)
            pair_grad = delta * sig_neg / LN2
        np.add.at(grad, i_idx, -pair_grad)
        np.add.at(grad, j_idx, pair_grad)
        return loss, grad

    top = int(np.nonzero(r == 1)[0][0])
    if kind is LossKind.LISTWISE_CE:
        shifted = s - s.max()
        log_z = float(np.log(np.exp(shifted).sum()) + s.max())
        loss = log_z - float(s[top])
        grad = np.exp(s - log_z)
        grad[top] -= 1.0
        return loss, grad

    target = (r == 1).astype(float)
    loss = float(
        (target * np.logaddexp(0.0, -s) + (1.0 - target) * np.logaddexp(0.0, s)).sum()
    )
    grad = np.exp(-np.logaddexp(0.0, -s)) - target
    return loss, grad


def loss_and_grad(
    kind: LossKind,
    scores: Sequence[float],
    ranks: Sequence[int],
    lambda_config: Optional[LambdaConfig] = None,
) -> tuple[float, np.ndarray]:
    """Loss value and exact analytic gradient with respect to the scores.

    For the lambda loss, the score-induced ranking pi and the resulting
    pair weights are treated as constants within the update.
    """
    s, r = _validate_instance(scores, ranks)
    return _loss_and_grad(kind, s, r, lambda_config or LambdaConfig(), pi=None)


def grad_check(
    kind: LossKind,
    scores: Sequence[float],
    ranks: Sequence[int],
    lambda_config: Optional[LambdaConfig] = None,
    epsilon: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    s, r = _validate_instance(scores, ranks)
    config = lambda_config or LambdaConfig()
    # Freeze pi at the base point so differencing probes the same function
    # the analytic gradient describes.
    pi = _ranks_from_scores(s) if kind is LossKind.LAMBDA else None
    _, analytic = _loss_and_grad(kind, s, r, config, pi=pi)

    worst = 0.0
    for coord in range(s.size):
        bumped = s.copy()
        bumped[coord] += epsilon
        plus, _ = _loss_and_grad(kind, bumped, r, config, pi=pi)
        bumped[coord] -= 2 * epsilon
        minus, _ = _loss_and_grad(kind, bumped, r, config, pi=pi)
        numeric = (plus - minus) / (2 * epsilon)
        denom = max(1e-12, abs(analytic[coord]) + abs(numeric))
        worst = max(worst, abs(analytic[coord] - numeric) / denom)
    return worst


def gradcheck_suite(
    kinds: Sequence[LossKind],
    trials: int = 100,
    sizes: Sequence[int] = (2, 5, 20),
    epsilon: float = 1e-5,
    seed: int = 0,
) -> dict[str, float]:
    """Max finite-difference error per loss over seeded random instances.

    The default epsilon sits near the float64 central-difference optimum;
    much smaller values let cancellation noise dominate coordinates whose
    true gradient is small.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    results: dict[str, float] = {}
    for kind in kinds:
        rng = random.Random(seed)
        worst = 0.0
        for trial in range(trials):
            m = sizes[trial % len(sizes)]
            scores = [rng.gauss(0.0, 1.0) for _ in range(m)]
            ranks = list(range(1, m + 1))
            rng.shuffle(ranks)
            worst = max(worst, grad_check(kind, scores, ranks, epsilon=epsilon))
        results[kind.key] = worst
    return results


def _loss_normalizer(kind: LossKind, m: int) -> float:
    if kind.is_pairwise:
        return m * (m - 1) / 2.0
    if kind is LossKind.POINTWISE_BCE:
        return float(m)
    return 1.0


@dataclass(frozen=True)
class TrainResult:
    student: LinearStudent
    epoch_losses: tuple[float, ...]


def train(
    teacher_dataset: Sequence[TeacherRecord],
    corpus: Mapping[str, Passage],
    kind: LossKind,
    config: TrainConfig,
    *,
    lambda_config: Optional[LambdaConfig] = None,
    index: Optional[Index] = None,
    params: Optional[Bm25Params] = None,
) -> TrainResult:
    """Fit the linear student to teacher permutations by gradient descent.

    Deterministic given the dataset and config: queries are shuffled with
    the seeded RNG each epoch and every arithmetic step is ordered.
    """
    records = list(teacher_dataset)
    if not records:
        raise ValueError("teacher dataset is empty")
    index = index if index is not None else build_index(corpus)
    params = params if params is not None else Bm25Params()
    lambda_config = lambda_config or LambdaConfig()

    prepared: list[tuple[np.ndarray, np.ndarray]] = []
    for record in records:
        query = Query(id=record.query_id, text=record.query_text)
        for docid in record.docids:
            if docid not in corpus:
                raise ValueError(
                    f"teacher record {record.query_id}: docid {docid} not in corpus"
                )
        features = np.stack(
            [extract_features(query, corpus[docid], index, params) for docid in record.docids]
        )
        ranks = TeacherPermutation.from_identifier_order(
            record.query_id, record.docids, record.permutation
        ).ranks
        prepared.append((features, np.asarray(ranks, dtype=int)))

    weights = np.zeros(len(FEATURE_NAMES))
    rng = random.Random(config.seed)
    order = list(range(len(prepared)))
    epoch_losses = []
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for qi in order:
            features, ranks = prepared[qi]
            scores = features @ weights
            loss, grad = _loss_and_grad(kind, scores, ranks, lambda_config, pi=None)
            scale = _loss_normalizer(kind, len(ranks))
            total += loss / scale
            step = features.T @ (grad / scale) + config.l2 * weights
            weights = weights - config.learning_rate * step
        epoch_losses.append(total / len(prepared))

    student = LinearStudent(tuple(float(w) for w in weights))
    return TrainResult(student=student, epoch_losses=tuple(epoch_losses))


def rank_with_student(
    student: LinearStudent,
    query: Query,
    candidate_list: CandidateList,
    index: Index,
    params: Optional[Bm25Params] = None,
) -> Ranking:
    """Score candidates with the student; ties keep the initial order."""
    weights = student.as_array()
    entries = []
    for candidate in candidate_list.candidates:
        features = extract_features(query, candidate.passage, index, params)
        entries.append((candidate.docid, float(features @ weights)))
    return Ranking(candidate_list.query.id, tuple(entries))


def student_to_dict(student: LinearStudent) -> dict:
    return {"weights": list(student.weights), "feature_names": list(FEATURE_NAMES)}


def student_from_dict(payload: Mapping) -> LinearStudent:
    try:
        names = tuple(payload["feature_names"])
        weights = tuple(float(w) for w in payload["weights"])
    except (KeyError, TypeError, ValueError):
        raise ValueError("student payload needs 'weights' and 'feature_names'") from None
    if names != FEATURE_NAMES:
        raise ValueError(f"feature_names mismatch: expected {FEATURE_NAMES}, got {names}")
    return LinearStudent(weights)


def save_student(student: LinearStudent, path: str) -> None:
    atomic_write_text(path, json.dumps(student_to_dict(student), indent=2) + "\n")


def load_student(path: str) -> LinearStudent:
    with open(path, "r", encoding="utf-8-sig") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid student file: {exc}") from None
    return student_from_dict(payload)
