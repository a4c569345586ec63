import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import reference_parse
from permurank.gateway import (
    CapabilityError,
    GatewayError,
    LlmResponse,
    MockOracleGateway,
    TransportError,
    UsageLedger,
)
from permurank.prompting import InstructionKind
from permurank.rerank import (
    apply_permutation,
    hybrid_topk_rerank,
    parse_permutation,
    ranking_from_scores,
    rerank_many,
    score_query_gen,
    score_relevance_gen,
    sliding_rerank,
    ScoreVector,
)
from permurank.types import (
    CandidateList,
    InitialOrder,
    Passage,
    Query,
    Ranking,
    WindowConfig,
)

REJECTION = "None of the provided passages is directly relevant to the query"


def _candidates(query_id, n):
    query = Query(id=query_id, text=f"query text {query_id}")
    passages = [Passage(docid=f"{query_id}-d{i}", text=f"body {i}") for i in range(n)]
    return CandidateList.from_passages(query, passages)


def _truth_scores(query_id, n, seed=0):
    rng = random.Random(seed)
    values = rng.sample(range(1000), n)
    return {(query_id, f"{query_id}-d{i}"): float(values[i]) for i in range(n)}


def _truth_order(truth, query_id, n):
    return sorted(
        (f"{query_id}-d{i}" for i in range(n)),
        key=lambda d: (-truth[(query_id, d)], d),
    )


class TestParsePermutation:
    def test_clean_listing(self):
        parsed = parse_permutation("[2] > [3] > [1]", 3)
        assert list(parsed.order) == [2, 3, 1]
        assert not parsed.repaired
        assert parsed.repetition == 0
        assert parsed.missing == 0
        assert not parsed.rejected

    def test_duplicate_and_missing_repair(self):
        parsed = parse_permutation("[2] > [2] > [4]", 4)
        assert list(parsed.order) == [2, 4, 1, 3]
        assert parsed.repaired
        assert parsed.repetition == 1
        assert parsed.missing == 2
        assert not parsed.rejected

    def test_rejection_text(self):
        parsed = parse_permutation(REJECTION, 3)
        assert list(parsed.order) == [1, 2, 3]
        assert parsed.rejected
        assert parsed.repaired
        assert parsed.repetition == 0
        assert parsed.missing == 0

    def test_out_of_range_identifiers_dropped(self):
        parsed = parse_permutation("[9] > [2] > [0] > [1]", 3)
        assert list(parsed.order) == [2, 1, 3]
        assert parsed.missing == 1
        assert parsed.repetition == 0

    def test_brackets_and_separators_arbitrary(self):
        parsed = parse_permutation("2, 3 then finally 1", 3)
        assert list(parsed.order) == [2, 3, 1]
        assert not parsed.repaired

    def test_multidigit_runs(self):
        parsed = parse_permutation("[10] > [2]", 10)
        assert parsed.order[0] == 10
        assert parsed.order[1] == 2

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            parse_permutation("[1]", 0)

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=80), st.integers(1, 12))
    def test_matches_reference_parser(self, text, m):
        parsed = parse_permutation(text, m)
        order, repetition, missing, rejected = reference_parse(text, m)
        assert list(parsed.order) == order
        assert parsed.repetition == repetition
        assert parsed.missing == missing
        assert parsed.rejected == rejected
        assert sorted(parsed.order) == list(range(1, m + 1))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_reserialize_reparse_is_clean(self, m, seed):
        rng = random.Random(seed)
        perm = list(range(1, m + 1))
        rng.shuffle(perm)
        text = " > ".join(f"[{i}]" for i in perm)
        parsed = parse_permutation(text, m)
        assert list(parsed.order) == perm
        assert not parsed.repaired
        again = parse_permutation(" > ".join(f"[{i}]" for i in parsed.order), m)
        assert again.order == parsed.order
        assert again.repetition == again.missing == 0


class TestApplyPermutation:
    def test_documented_example(self):
        parsed = parse_permutation("[2] > [3] > [1]", 3)
        assert apply_permutation(["A", "B", "C"], parsed) == ["B", "C", "A"]

    def test_identity(self):
        parsed = parse_permutation("[1] > [2] > [3]", 3)
        assert apply_permutation(["A", "B", "C"], parsed) == ["A", "B", "C"]

    def test_transposition_is_an_involution(self):
        parsed = parse_permutation("[2] > [1]", 2)
        once = apply_permutation(["A", "B"], parsed)
        assert apply_permutation(once, parsed) == ["A", "B"]

    def test_length_mismatch_rejected(self):
        parsed = parse_permutation("[1] > [2]", 2)
        with pytest.raises(ValueError):
            apply_permutation(["A"], parsed)

    @settings(max_examples=150, deadline=None)
    @given(st.text(max_size=60), st.integers(1, 9))
    def test_multiset_preserved_under_malformed_text(self, text, m):
        parsed = parse_permutation(text, m)
        items = [f"item{i}" for i in range(m)]
        assert sorted(apply_permutation(items, parsed)) == sorted(items)


class TestSlidingWindows:
    def test_figure_geometry_8_4_2(self):
        truth = _truth_scores("q", 8)
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", 8),
            WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert [(w.start, w.end) for w in result.windows] == [(5, 8), (3, 6), (1, 4)]

    def test_single_window_when_m_at_most_w(self):
        truth = _truth_scores("q", 5)
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", 5),
            WindowConfig(window=20, step=10),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert [(w.start, w.end) for w in result.windows] == [(1, 5)]
        assert result.ranking.docids == tuple(_truth_order(truth, "q", 5))

    def test_top1_after_one_pass_from_reversed_truth(self):
        n = 8
        truth = {("q", f"q-d{i}"): float(i) for i in range(n)}  # best is q-d7, rank M
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", n),
            WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert result.ranking.docids[0] == "q-d7"

    def test_scores_are_synthetic_descending(self):
        truth = _truth_scores("q", 6)
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", 6),
            WindowConfig(window=3, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert [s for _, s in result.ranking.entries] == [6.0, 5.0, 4.0, 3.0, 2.0, 1.0]

    def test_passes_multiply_windows_and_sort_fully(self):
        truth = _truth_scores("q", 8, seed=5)
        gateway = MockOracleGateway(truth)
        config = WindowConfig(window=3, step=2, passes=8)
        result = sliding_rerank(
            _candidates("q", 8), config, InstructionKind.PERMUTATION_CHAT, gateway
        )
        per_pass = [(w.start, w.end) for w in result.windows if w.pass_index == 1]
        assert {w.pass_index for w in result.windows} == set(range(1, 9))
        assert len(result.windows) == 8 * len(per_pass)
        assert result.ranking.docids == tuple(_truth_order(truth, "q", 8))

    def test_rejected_windows_keep_incoming_order(self):
        truth = _truth_scores("q", 6)
        gateway = MockOracleGateway(truth, reject_rate=1.0)
        result = sliding_rerank(
            _candidates("q", 6),
            WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert result.ranking.docids == _candidates("q", 6).docids
        assert result.rejection == len(result.windows)

    def test_reversed_initial_order_with_rejecting_oracle(self):
        truth = _truth_scores("q", 5)
        gateway = MockOracleGateway(truth, reject_rate=1.0)
        result = sliding_rerank(
            _candidates("q", 5),
            WindowConfig(window=5, step=2, initial_order=InitialOrder.REVERSED),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert result.ranking.docids == tuple(reversed(_candidates("q", 5).docids))

    def test_random_initial_order_reproducible(self):
        truth = _truth_scores("q", 10)

        def run(seed):
            gateway = MockOracleGateway(truth, reject_rate=1.0)
            config = WindowConfig(
                window=10, step=5, initial_order=InitialOrder.RANDOM, seed=seed
            )
            return sliding_rerank(
                _candidates("q", 10), config, InstructionKind.PERMUTATION_CHAT, gateway
            ).ranking.docids

        assert run(3) == run(3)
        assert run(3) != run(4)

    def test_perfect_oracle_rbo_samples_are_one(self):
        truth = _truth_scores("q", 12)
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", 12),
            WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        assert result.rbo_samples
        assert all(s == 1.0 for s in result.rbo_samples)

    def test_gateway_failure_names_the_window(self):
        class Failing:
            ledger = UsageLedger()

            def complete(self, prompt, want_logprobs=False, query_id=None):
                raise TransportError("socket exploded")

        with pytest.raises(GatewayError, match=r"query q pass 1 window \[5\.\.8\]"):
            sliding_rerank(
                _candidates("q", 8),
                WindowConfig(window=4, step=2),
                InstructionKind.PERMUTATION_CHAT,
                Failing(),
            )

    def test_trace_records_have_the_contract_keys(self):
        truth = _truth_scores("q", 4)
        gateway = MockOracleGateway(truth)
        result = sliding_rerank(
            _candidates("q", 4),
            WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT,
            gateway,
        )
        record = result.windows[0].to_record()
        assert set(record) == {
            "query_id",
            "pass",
            "start",
            "end",
            "prompt_sha256",
            "raw_text",
            "order",
            "repetition",
            "missing",
            "rejected",
            "rbo",
        }
        assert record["pass"] == 1
        assert len(record["prompt_sha256"]) == 64


class TestHybridTopK:
    @staticmethod
    def _setup(n):
        query = Query(id="q", text="query text")
        corpus = {
            f"q-d{i}": Passage(docid=f"q-d{i}", text=f"body {i}") for i in range(n)
        }
        base = Ranking("q", tuple((f"q-d{i}", float(n - i)) for i in range(n)))
        truth = _truth_scores("q", n, seed=11)
        return query, corpus, base, truth

    def test_k_1_is_identity(self):
        query, corpus, base, truth = self._setup(6)
        gateway = MockOracleGateway(truth)
        result = hybrid_topk_rerank(
            query, base, corpus, WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT, gateway, k=1,
        )
        assert result.ranking.docids == base.docids

    def test_tail_unchanged(self):
        query, corpus, base, truth = self._setup(10)
        gateway = MockOracleGateway(truth)
        result = hybrid_topk_rerank(
            query, base, corpus, WindowConfig(window=4, step=2),
            InstructionKind.PERMUTATION_CHAT, gateway, k=4,
        )
        assert result.ranking.docids[4:] == base.docids[4:]
        assert set(result.ranking.docids[:4]) == set(base.docids[:4])

    def test_k_equal_m_matches_full_rerank(self):
        query, corpus, base, truth = self._setup(8)
        config = WindowConfig(window=4, step=2)
        hybrid = hybrid_topk_rerank(
            query, base, corpus, config, InstructionKind.PERMUTATION_CHAT,
            MockOracleGateway(truth), k=8,
        )
        candidate_list = CandidateList.from_passages(
            query, [corpus[d] for d in base.docids]
        )
        full = sliding_rerank(
            candidate_list, config, InstructionKind.PERMUTATION_CHAT,
            MockOracleGateway(truth),
        )
        assert hybrid.ranking.docids == full.ranking.docids

    def test_scores_descend_globally(self):
        query, corpus, base, truth = self._setup(7)
        result = hybrid_topk_rerank(
            query, base, corpus, WindowConfig(window=3, step=2),
            InstructionKind.PERMUTATION_CHAT, MockOracleGateway(truth), k=5,
        )
        scores = [s for _, s in result.ranking.entries]
        assert scores == sorted(scores, reverse=True)

    def test_k_out_of_range_rejected(self):
        query, corpus, base, truth = self._setup(4)
        gateway = MockOracleGateway(truth)
        config = WindowConfig(window=4, step=2)
        for bad_k in (0, 5):
            with pytest.raises(ValueError):
                hybrid_topk_rerank(
                    query, base, corpus, config,
                    InstructionKind.PERMUTATION_CHAT, gateway, k=bad_k,
                )

    def test_docid_missing_from_corpus_rejected(self):
        query, corpus, base, truth = self._setup(4)
        del corpus["q-d2"]
        with pytest.raises(ValueError, match="q-d2"):
            hybrid_topk_rerank(
                query, base, corpus, WindowConfig(window=4, step=2),
                InstructionKind.PERMUTATION_CHAT, MockOracleGateway(truth), k=4,
            )


class FakeLogprobGateway:
    """Returns canned (text, token_logprobs) pairs in call order."""

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.prompts = []
        self.ledger = UsageLedger()

    def complete(self, prompt, want_logprobs=False, query_id=None):
        self.prompts.append(prompt)
        text, pairs = self.outputs.pop(0)
        return LlmResponse(text=text, token_logprobs=tuple(pairs))


class TestScoreQueryGen:
    def test_mean_of_token_logprobs(self):
        gateway = FakeLogprobGateway(
            [("", (("what", -1.0), ("causes", -2.0)))]
        )
        scores = score_query_gen(
            gateway, Query(id="q", text="t"), _candidates("q", 1)
        )
        assert scores.scores == (-1.5,)

    def test_single_token(self):
        gateway = FakeLogprobGateway([("", (("t", -0.1),))])
        scores = score_query_gen(gateway, Query(id="q", text="t"), _candidates("q", 1))
        assert scores.scores == (-0.1,)

    def test_dominating_logprobs_score_higher(self):
        gateway = FakeLogprobGateway(
            [
                ("", (("a", -0.2), ("b", -0.3))),
                ("", (("a", -1.2), ("b", -1.3))),
            ]
        )
        scores = score_query_gen(gateway, Query(id="q", text="t"), _candidates("q", 2))
        assert scores.scores[0] > scores.scores[1]

    def test_no_tokens_is_a_capability_error(self):
        gateway = FakeLogprobGateway([("", ())])
        with pytest.raises(CapabilityError):
            score_query_gen(gateway, Query(id="q", text="t"), _candidates("q", 1))


class TestScoreRelevanceGen:
    def test_yes_branch(self):
        gateway = FakeLogprobGateway([("Yes", (("Yes", math.log(0.9)),))])
        result = score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 1))
        assert result.scores.scores[0] == pytest.approx(1.9, abs=1e-12)
        assert result.neutral_count == 0

    def test_no_branch(self):
        gateway = FakeLogprobGateway([("No", (("No", math.log(0.8)),))])
        result = score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 1))
        assert result.scores.scores[0] == pytest.approx(0.2, abs=1e-12)

    def test_neutral_fallback_counted_and_ordered_between(self):
        gateway = FakeLogprobGateway(
            [
                ("Yes", (("Yes", math.log(0.6)),)),
                ("Maybe", (("Maybe", math.log(0.99)),)),
                ("No", (("No", math.log(0.6)),)),
            ]
        )
        result = score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 3))
        yes_score, neutral_score, no_score = result.scores.scores
        assert neutral_score == 1.0
        assert no_score < neutral_score < yes_score
        assert result.neutral_count == 1

    def test_case_and_whitespace_insensitive(self):
        gateway = FakeLogprobGateway([("  yES", ((" yES", math.log(0.5)),))])
        result = score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 1))
        assert result.scores.scores[0] == pytest.approx(1.5, abs=1e-12)

    def test_few_shot_flag_selects_template(self):
        gateway = FakeLogprobGateway(
            [("Yes", (("Yes", -0.1),)), ("Yes", (("Yes", -0.1),))]
        )
        score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 1), few_shot=True)
        score_relevance_gen(gateway, Query(id="q", text="t"), _candidates("q", 1), few_shot=False)
        assert "how many eye drops per ml" in gateway.prompts[0].text
        assert "how many eye drops per ml" not in gateway.prompts[1].text

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(min_value=-20.0, max_value=0.0), min_size=1, max_size=6),
           st.integers(0, 2))
    def test_scores_always_in_0_2(self, logprobs, which):
        words = ["Yes", "No", "Whatever"]
        outputs = [(words[which], ((words[which], lp),)) for lp in logprobs]
        gateway = FakeLogprobGateway(outputs)
        result = score_relevance_gen(
            gateway, Query(id="q", text="t"), _candidates("q", len(logprobs))
        )
        assert all(0.0 <= s <= 2.0 for s in result.scores.scores)


class TestRankingFromScores:
    def test_orders_by_score_descending(self):
        cl = _candidates("q", 3)
        ranking = ranking_from_scores(cl, ScoreVector((0.5, 2.0, 1.0)))
        assert ranking.docids == ("q-d1", "q-d2", "q-d0")

    def test_ties_keep_initial_order(self):
        cl = _candidates("q", 3)
        ranking = ranking_from_scores(cl, ScoreVector((1.0, 1.0, 1.0)))
        assert ranking.docids == cl.docids

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ranking_from_scores(_candidates("q", 3), ScoreVector((1.0,)))


class TestRerankMany:
    def test_parallel_matches_sequential_and_keeps_order(self):
        lists = [_candidates(f"q{i}", 8) for i in range(5)]
        truth = {}
        for i in range(5):
            truth.update(_truth_scores(f"q{i}", 8, seed=i))
        config = WindowConfig(window=4, step=2)

        sequential = rerank_many(
            lists, config, InstructionKind.PERMUTATION_CHAT,
            MockOracleGateway(truth), jobs=1,
        )
        parallel = rerank_many(
            lists, config, InstructionKind.PERMUTATION_CHAT,
            MockOracleGateway(truth), jobs=4,
        )
        assert [r.query_id for r in parallel] == [f"q{i}" for i in range(5)]
        for a, b in zip(sequential, parallel):
            assert a.ranking.entries == b.ranking.entries

    def test_jobs_bound_validated(self):
        with pytest.raises(ValueError):
            rerank_many([], WindowConfig(window=4, step=2),
                        InstructionKind.PERMUTATION_CHAT,
                        MockOracleGateway({}), jobs=0)
