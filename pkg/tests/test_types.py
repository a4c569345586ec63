import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from permurank.types import (
    Candidate,
    CandidateList,
    InitialOrder,
    Judgments,
    Passage,
    Query,
    Ranking,
    TeacherPermutation,
    WindowConfig,
)


def _passages(n):
    return [Passage(docid=f"d{i}", text=f"text {i}") for i in range(n)]


class TestQueryAndPassage:
    def test_rejects_empty_fields(self):
        with pytest.raises(ValueError):
            Query(id="", text="x")
        with pytest.raises(ValueError):
            Query(id="q1", text="")
        with pytest.raises(ValueError):
            Passage(docid="", text="x")

    @pytest.mark.parametrize("bad_id", ["a b", "a\tb", "a\nb", " a"])
    def test_rejects_whitespace_in_ids(self, bad_id):
        with pytest.raises(ValueError):
            Query(id=bad_id, text="x")
        with pytest.raises(ValueError):
            Passage(docid=bad_id, text="x")

    def test_passage_title_optional(self):
        assert Passage(docid="d1", text="x").title is None
        assert Passage(docid="d1", text="x", title="T").title == "T"


class TestCandidateList:
    def test_from_passages_assigns_ranks_1_to_m(self):
        cl = CandidateList.from_passages(Query(id="q", text="t"), _passages(4))
        assert [c.initial_rank for c in cl.candidates] == [1, 2, 3, 4]
        assert cl.docids == ("d0", "d1", "d2", "d3")
        assert len(cl) == 4

    def test_scores_align_with_passages(self):
        cl = CandidateList.from_passages(
            Query(id="q", text="t"), _passages(3), scores=[3.0, 2.0, 1.0]
        )
        assert [c.initial_score for c in cl.candidates] == [3.0, 2.0, 1.0]

    def test_rank_gaps_rejected(self):
        q = Query(id="q", text="t")
        cands = [
            Candidate(passage=p, initial_rank=r, initial_score=0.0)
            for p, r in zip(_passages(3), [1, 2, 4])
        ]
        with pytest.raises(ValueError):
            CandidateList(query=q, candidates=tuple(cands))

    def test_sequence_order_must_match_rank_order(self):
        q = Query(id="q", text="t")
        cands = [
            Candidate(passage=p, initial_rank=r, initial_score=0.0)
            for p, r in zip(_passages(3), [2, 1, 3])
        ]
        with pytest.raises(ValueError):
            CandidateList(query=q, candidates=tuple(cands))

    def test_duplicate_docids_rejected(self):
        q = Query(id="q", text="t")
        p = Passage(docid="dup", text="x")
        with pytest.raises(ValueError):
            CandidateList.from_passages(q, [p, p])

    def test_nan_score_rejected(self):
        with pytest.raises(ValueError):
            Candidate(passage=_passages(1)[0], initial_rank=1, initial_score=math.nan)

    @given(st.permutations(list(range(5))))
    def test_resort_by_initial_rank_is_identity(self, perm):
        cl = CandidateList.from_passages(Query(id="q", text="t"), _passages(5))
        shuffled = [cl.candidates[i] for i in perm]
        resorted = sorted(shuffled, key=lambda c: c.initial_rank)
        assert resorted == list(cl.candidates)

    def test_reordered_applies_window_positions(self):
        cl = CandidateList.from_passages(Query(id="q", text="t"), _passages(3))
        out = cl.reordered([2, 3, 1])
        assert out.docids == ("d1", "d2", "d0")
        assert [c.initial_rank for c in out.candidates] == [1, 2, 3]


class TestWindowConfig:
    def test_defaults(self):
        cfg = WindowConfig(window=20, step=10)
        assert cfg.passes == 1
        assert cfg.initial_order is InitialOrder.AS_RETRIEVED

    @pytest.mark.parametrize("window,step", [(4, 0), (4, 5), (0, 1), (1001, 1)])
    def test_bounds(self, window, step):
        with pytest.raises(ValueError):
            WindowConfig(window=window, step=step)

    def test_random_order_needs_seed(self):
        with pytest.raises(ValueError):
            WindowConfig(window=4, step=2, initial_order=InitialOrder.RANDOM)
        cfg = WindowConfig(window=4, step=2, initial_order=InitialOrder.RANDOM, seed=7)
        assert cfg.seed == 7


class TestTeacherPermutation:
    def test_ranks_must_permute_1_to_m(self):
        with pytest.raises(ValueError):
            TeacherPermutation(query_id="q", docids=("a", "b"), ranks=(1, 3))
        with pytest.raises(ValueError):
            TeacherPermutation(query_id="q", docids=("a", "b"), ranks=(1, 1))

    def test_identifier_order_round_trip(self):
        tp = TeacherPermutation.from_identifier_order("q", ("a", "b", "c"), (2, 3, 1))
        # docid "b" is ranked first, so its rank is 1
        assert tp.ranks == (3, 1, 2)
        assert tp.identifier_order() == (2, 3, 1)


class TestRanking:
    def test_sorts_by_descending_score(self):
        r = Ranking("q", (("a", 1.0), ("b", 3.0), ("c", 2.0)))
        assert r.docids == ("b", "c", "a")

    def test_ties_keep_input_order(self):
        r = Ranking("q", (("a", 1.0), ("b", 1.0), ("c", 1.0)))
        assert r.docids == ("a", "b", "c")

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            Ranking("q", (("a", math.nan),))

    def test_duplicate_docids_rejected(self):
        with pytest.raises(ValueError):
            Ranking("q", (("a", 1.0), ("a", 2.0)))

    @given(
        st.lists(
            st.floats(allow_nan=False, allow_infinity=False, width=32),
            min_size=1,
            max_size=8,
        )
    )
    def test_construction_is_deterministic(self, scores):
        entries = tuple((f"d{i}", s) for i, s in enumerate(scores))
        assert Ranking("q", entries).docids == Ranking("q", entries).docids


class TestJudgments:
    def test_unknown_pairs_default_to_zero(self):
        j = Judgments({("q", "a"): 2})
        assert j.grade("q", "a") == 2
        assert j.grade("q", "zzz") == 0

    @pytest.mark.parametrize("bad", [-1, 4])
    def test_grade_range(self, bad):
        with pytest.raises(ValueError):
            Judgments({("q", "a"): bad})

    def test_merge_last_wins(self):
        j = Judgments.merge([("q", "a", 1), ("q", "a", 3)])
        assert j.grade("q", "a") == 3

    def test_query_lookup(self):
        j = Judgments.merge([("q1", "a", 1), ("q1", "b", 2), ("q2", "a", 3)])
        assert j.query_ids() == {"q1", "q2"}
        assert j.grades_for_query("q1") == {"a": 1, "b": 2}
