import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from permurank import sparse
from permurank.types import Passage, Query


def _corpus(texts, titles=None):
    titles = titles or {}
    return {
        f"d{i}": Passage(docid=f"d{i}", text=t, title=titles.get(i))
        for i, t in enumerate(texts)
    }


class TestTokenize:
    def test_lowercase_and_split(self):
        assert sparse.tokenize("Hello, world") == ["hello", "world"]

    def test_unicode_lowercase(self):
        assert sparse.tokenize("Ärger STRASSE") == ["ärger", "strasse"]

    def test_digits_kept_punctuation_dropped(self):
        assert sparse.tokenize("a-b c_d 42!") == ["a", "b", "c", "d", "42"]

    def test_empty(self):
        assert sparse.tokenize("...") == []


class TestBuildIndex:
    def test_single_doc(self):
        index = sparse.build_index(_corpus(["Hello, world"]))
        assert index.doc_count == 1
        assert list(index.doc_lengths) == [2]
        assert set(index.postings) == {"hello", "world"}

    def test_two_identical_docs(self):
        index = sparse.build_index(_corpus(["same text here", "same text here"]))
        assert list(index.doc_lengths) == [3, 3]
        assert all(len(pairs) == 2 for pairs in index.postings.values())

    def test_title_concatenated_before_text(self):
        index = sparse.build_index(_corpus(["body"], titles={0: "Heading"}))
        assert list(index.doc_lengths) == [2]
        assert "heading" in index.postings

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            sparse.build_index({})

    def test_avg_doclen_is_arithmetic_mean(self):
        rng = random.Random(7)
        texts = [
            " ".join(f"w{rng.randrange(50)}" for _ in range(rng.randrange(1, 40)))
            for _ in range(100)
        ]
        index = sparse.build_index(_corpus(texts))
        lengths = [len(sparse.tokenize(t)) for t in texts]
        assert index.avg_doclen == pytest.approx(sum(lengths) / len(lengths), abs=1e-12)


class TestBm25Score:
    def test_no_shared_terms_scores_zero(self):
        index = sparse.build_index(_corpus(["alpha beta"]))
        params = sparse.Bm25Params()
        assert sparse.bm25_score(index, params, "gamma delta", "d0") == 0.0

    def test_single_doc_closed_form(self):
        # N=1, df=1: idf = ln((N-df+0.5)/(df+0.5) + 1) = ln(4/3); tf=1 at
        # len=avglen makes the tf part exactly 1, so the score is the idf.
        index = sparse.build_index(_corpus(["alpha beta"]))
        score = sparse.bm25_score(index, sparse.Bm25Params(), "alpha", "d0")
        assert score == pytest.approx(math.log((1 - 1 + 0.5) / (1 + 0.5) + 1), abs=1e-12)
        assert score == pytest.approx(0.2877, abs=1e-4)

    def test_k1_invariance_at_tf_1_and_avg_len(self):
        index = sparse.build_index(_corpus(["alpha beta", "gamma delta"]))
        base = sparse.bm25_score(index, sparse.Bm25Params(k1=0.9, b=0.4), "alpha", "d0")
        doubled = sparse.bm25_score(index, sparse.Bm25Params(k1=1.8, b=0.4), "alpha", "d0")
        assert base == pytest.approx(doubled, abs=1e-15)

    def test_repeated_query_terms_count_once(self):
        index = sparse.build_index(_corpus(["alpha beta", "gamma delta"]))
        params = sparse.Bm25Params()
        assert sparse.bm25_score(index, params, "alpha alpha", "d0") == sparse.bm25_score(
            index, params, "alpha", "d0"
        )

    def test_unknown_docid_rejected(self):
        index = sparse.build_index(_corpus(["alpha"]))
        with pytest.raises(ValueError):
            sparse.bm25_score(index, sparse.Bm25Params(), "alpha", "nope")

    def test_param_bounds(self):
        with pytest.raises(ValueError):
            sparse.Bm25Params(k1=-0.1)
        with pytest.raises(ValueError):
            sparse.Bm25Params(b=1.5)


class TestSearch:
    def test_only_matching_docs_returned(self):
        texts = ["needle one", "needle two"] + ["hay stack"] * 8
        texts[2] = "needle three"
        index = sparse.build_index(_corpus(texts))
        result = sparse.search(index, sparse.Bm25Params(), Query(id="q", text="needle"), 100)
        assert len(result) == 3
        assert set(result.docids) == {"d0", "d1", "d2"}

    def test_tie_breaks_by_ascending_docid(self):
        index = sparse.build_index(_corpus(["same words", "same words"]))
        result = sparse.search(index, sparse.Bm25Params(), Query(id="q", text="same"), 10)
        assert result.docids == ("d0", "d1")

    def test_ranks_and_scores_populate_candidates(self):
        index = sparse.build_index(_corpus(["apple apple apple", "apple pie", "plain bread"]))
        result = sparse.search(index, sparse.Bm25Params(), Query(id="q", text="apple"), 10)
        assert [c.initial_rank for c in result.candidates] == [1, 2]
        assert result.candidates[0].initial_score >= result.candidates[1].initial_score

    def test_matches_exhaustive_scoring(self):
        rng = random.Random(13)
        vocab = [f"t{i}" for i in range(30)]
        texts = [
            " ".join(rng.choice(vocab) for _ in range(rng.randrange(3, 25)))
            for _ in range(50)
        ]
        corpus = _corpus(texts)
        index = sparse.build_index(corpus)
        params = sparse.Bm25Params()
        query = Query(id="q", text="t1 t2 t3 t4")
        result = sparse.search(index, params, query, 50)

        scored = [
            (docid, sparse.bm25_score(index, params, query.text, docid))
            for docid in corpus
        ]
        expected = [
            d for d, s in sorted(scored, key=lambda pair: (-pair[1], pair[0])) if s > 0
        ]
        assert list(result.docids) == expected
        for candidate in result.candidates:
            assert candidate.initial_score == sparse.bm25_score(
                index, params, query.text, candidate.docid
            )

    def test_k_cuts_the_list(self):
        index = sparse.build_index(_corpus([f"apple number{i}" for i in range(9)]))
        result = sparse.search(index, sparse.Bm25Params(), Query(id="q", text="apple"), 4)
        assert len(result) == 4

    @given(st.integers(0, 2**32 - 1))
    def test_build_order_does_not_change_scores(self, seed):
        rng = random.Random(seed)
        vocab = [f"w{i}" for i in range(12)]
        corpus = _corpus(
            [" ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 10))) for _ in range(8)]
        )
        shuffled_ids = list(corpus)
        rng.shuffle(shuffled_ids)
        forward = sparse.build_index(corpus)
        backward = sparse.build_index({d: corpus[d] for d in shuffled_ids})
        params = sparse.Bm25Params()
        query_text = "w1 w2 w3"
        for docid in corpus:
            assert sparse.bm25_score(forward, params, query_text, docid) == sparse.bm25_score(
                backward, params, query_text, docid
            )


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        corpus = _corpus(["alpha beta", "beta gamma delta"], titles={1: "T"})
        index = sparse.build_index(corpus)
        path = str(tmp_path / "idx.json")
        sparse.save_index(index, path)
        loaded = sparse.load_index(path)
        params = sparse.Bm25Params()
        for docid in corpus:
            assert sparse.bm25_score(loaded, params, "alpha beta gamma", docid) == (
                sparse.bm25_score(index, params, "alpha beta gamma", docid)
            )
        assert loaded.passage("d1").title == "T"

    def test_version_mismatch_rejected(self):
        payload = sparse.index_to_payload(sparse.build_index(_corpus(["x"])))
        payload["version"] = 999
        with pytest.raises(ValueError, match="version"):
            sparse.index_from_payload(payload)

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "idx.json"
        path.write_text("{not json")
        with pytest.raises(ValueError):
            sparse.load_index(str(path))
