import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ocor import corpus
from ocor.corpus import RetrievalCase, build_cases
from ocor.evaluation import (
    ScoredRanking,
    ScoreFile,
    ensemble,
    ensemble_rankings,
    external_rankings,
    load_score_file,
    mrr,
    mrr_from_ranks,
    normalise_case_scores,
    perfect_ranking_sets,
    rank_case,
    score_pairs,
    write_score_file,
)


def ranking(case_id, rank):
    scores = np.zeros(max(rank, 2))
    scores[: rank - 1] = 1.0
    return ScoredRanking.from_scores(case_id, scores, rank - 1)


class TestScoredRanking:
    def test_positive_first(self):
        r = ScoredRanking.from_scores("c", [0.9, 0.1], 0)
        assert r.positive_rank == 1 and r.order.tolist() == [0, 1]

    def test_ties_by_ascending_index(self):
        assert ScoredRanking.from_scores("c", [0.5] * 4, 2).positive_rank == 3
        assert ScoredRanking.from_scores("c", [0.2, 0.7, 0.7, 0.1], 2).order.tolist() == [1, 2, 0, 3]

    def test_non_finite(self):
        with pytest.raises(ValueError):
            ScoredRanking.from_scores("c", [0.5, np.nan], 0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.data())
    def test_order_is_permutation(self, scores, data):
        pos = data.draw(st.integers(0, len(scores) - 1))
        r = ScoredRanking.from_scores("c", scores, pos)
        assert sorted(r.order.tolist()) == list(range(len(scores)))
        assert 1 <= r.positive_rank <= len(scores)

    @given(st.lists(st.integers(-40, 40), min_size=2, max_size=30), st.data())
    def test_monotone_transform_invariance(self, scores, data):
        pos = data.draw(st.integers(0, len(scores) - 1))
        s = np.array(scores) / 8.0  # grid values stay distinct under exp
        base = ScoredRanking.from_scores("c", s, pos).positive_rank
        assert ScoredRanking.from_scores("c", np.exp(s), pos).positive_rank == base
        assert ScoredRanking.from_scores("c", 3 * s - 7, pos).positive_rank == base


class TestMrr:
    def test_all_first(self):
        assert mrr([ranking(str(i), 1) for i in range(5)]) == 1.0

    def test_hand_example(self):
        value = mrr([ranking("a", 1), ranking("b", 2), ranking("c", 4)])
        assert abs(value - 7 / 12) < 1e-9
        assert round(value, 4) == 0.5833

    def test_worst_of_fifty(self):
        assert mrr_from_ranks([50]) == pytest.approx(0.02)

    def test_empty(self):
        with pytest.raises(ValueError):
            mrr([])
        with pytest.raises(ValueError):
            mrr_from_ranks([])


class TestEnsemble:
    def test_endpoint(self):
        assert ensemble(0.8, 0.5, 1.0) == 0.8
        assert ensemble(0.8, 0.5, 0.0) == 0.5

    def test_default_lambda(self):
        assert ensemble(0.8, 0.5, 0.1) == pytest.approx(0.53)

    def test_fixed_point(self):
        assert ensemble(0.37, 0.37, 0.5) == pytest.approx(0.37)

    @pytest.mark.parametrize("lam", [-0.1, 1.5])
    def test_out_of_range(self, lam):
        with pytest.raises(ValueError):
            ensemble(0.1, 0.2, lam)

    @given(st.floats(0, 1), st.floats(-10, 10), st.floats(0, 1), st.floats(0, 1))
    def test_linear(self, a, lam, s1, s2):
        lam = abs(lam) / 10
        assert ensemble(a * s1, a * s2, lam) == pytest.approx(a * ensemble(s1, s2, lam), abs=1e-12)


def _cases(n=4):
    seq = corpus.prepare("x", corpus.CODE)
    return [
        RetrievalCase(seq, (seq, seq, seq), i % 3, f"q{i}", (f"q{i}", f"n{i}a", f"n{i}b"))
        for i in range(n)
    ]


class TestScoreFiles:
    def test_round_trip_and_external_ranks(self, tmp_path):
        cases = _cases()
        scores = {c.query_id: np.array([0.1, 0.2, 0.3]) for c in cases}
        path = tmp_path / "bm25.jsonl"
        write_score_file(path, cases, scores)
        sf = load_score_file(path)
        assert sf.model_name == "bm25"
        ranks = [r.positive_rank for r in external_rankings(cases, sf)]
        # descending scores put index 2 first, then 1, then 0
        assert ranks == [3, 2, 1, 3]

    def test_malformed(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"case_id": "a", "score": 0.1}\n')
        with pytest.raises(ValueError, match=":1:"):
            load_score_file(path)

    def test_missing_entry(self):
        sf = ScoreFile("m", {("q0", "q0"): 0.5})
        with pytest.raises(KeyError, match="m"):
            sf.case_scores("q0", ["q0", "other"])

    def test_normalisation(self, caplog):
        inside = np.array([0.2, 0.9])
        assert normalise_case_scores(inside) is inside
        with caplog.at_level(logging.WARNING):
            out = normalise_case_scores(np.array([-3.0, 1.0, 5.0]), "q1", "bm25")
        assert out.tolist() == [0.0, 0.5, 1.0]
        assert "bm25" in caplog.text
        assert normalise_case_scores(np.array([4.0, 4.0])).tolist() == [0.5, 0.5]


class TestEnsembleRankings:
    def fixture(self):
        cases = _cases(2)
        own = {"q0": np.array([0.6, 0.5, 0.1]), "q1": np.array([0.2, 0.9, 0.3])}
        ext = ScoreFile("ext", {})
        for case, values in zip(cases, ([0.1, 0.9, 0.2], [0.2, 0.1, 0.9])):
            for cid, v in zip(case.candidate_ids, values):
                ext.entries[(case.query_id, cid)] = v
        return cases, own, ext

    def test_endpoints(self):
        cases, own, ext = self.fixture()
        own_ranks = [ScoredRanking.from_scores(c.query_id, own[c.query_id], c.positive_index) for c in cases]
        assert mrr(ensemble_rankings(cases, own, ext, 1.0)) == mrr(own_ranks)
        assert mrr(ensemble_rankings(cases, own, ext, 0.0)) == mrr(external_rankings(cases, ext))

    def test_small_lambda_changes_a_ranking(self):
        cases, own, ext = self.fixture()
        own_ranks = [ScoredRanking.from_scores(c.query_id, own[c.query_id], c.positive_index).positive_rank
                     for c in cases]
        mixed = [r.positive_rank for r in ensemble_rankings(cases, own, ext, 0.1)]
        assert mixed != own_ranks


class TestPerfectSets:
    def test_single_model(self):
        ranks = [ranking(f"c{i}", 1 if i < 3 else 2) for i in range(10)]
        report = perfect_ranking_sets({"ocor": ranks})
        assert report["sizes"] == {"ocor": 3} and report["n_cases"] == 10

    def test_identical_models(self):
        ranks = [ranking(f"c{i}", 1 + i % 2) for i in range(6)]
        report = perfect_ranking_sets({"a": ranks, "b": ranks})
        assert report["intersections"] == {"a&b": 3}
        assert report["only"] == {"a": 0, "b": 0}

    def test_disjoint(self):
        a = [ranking(f"c{i}", 1 if i < 2 else 3) for i in range(5)]
        b = [ranking(f"c{i}", 1 if i >= 3 else 3) for i in range(5)]
        report = perfect_ranking_sets({"a": a, "b": b})
        assert report["intersections"]["a&b"] == 0
        assert report["union"] == 4

    def test_three_way_keys(self):
        ranks = [ranking("c0", 1)]
        report = perfect_ranking_sets({"a": ranks, "b": ranks, "c": ranks})
        assert set(report["intersections"]) == {"a&b", "a&c", "b&c", "a&b&c"}
        json.dumps(report)

    def test_mismatched_cases(self):
        with pytest.raises(ValueError, match="b"):
            perfect_ranking_sets({"a": [ranking("c0", 1)], "b": [ranking("c1", 1)]})


class TestModelRanking:
    def test_identical_candidates_tie(self, tiny_params):
        q = corpus.prepare("sum values", corpus.NATURAL_LANGUAGE, char_len=4)
        c = corpus.prepare("sum ( values )", corpus.CODE, char_len=4)
        case = RetrievalCase(q, (c, c, c, c), 2, "q", ("a", "b", "c", "d"))
        r = rank_case(case, tiny_params)
        assert len(set(r.scores.tolist())) == 1
        assert r.positive_rank == 3

    def test_fifty_candidates_deterministic(self, tiny_params):
        from ocor.synthetic import synthetic_corpus

        case = build_cases(synthetic_corpus(50, seed=1), 49, seed=0, char_len=4)[0]
        a = rank_case(case, tiny_params)
        b = rank_case(case, tiny_params)
        assert sorted(a.order.tolist()) == list(range(50))
        assert np.array_equal(a.scores, b.scores) and a.positive_rank == b.positive_rank
        assert np.all((a.scores > 0) & (a.scores < 1))

    def test_dedup_matches_individual_scoring(self, tiny_params):
        q = corpus.prepare("open file", corpus.NATURAL_LANGUAGE, char_len=4)
        c1 = corpus.prepare("open ( path )", corpus.CODE, char_len=4)
        c2 = corpus.prepare("close ( f )", corpus.CODE, char_len=4)
        both = score_pairs(q, [c1, c2, c1], tiny_params)
        assert both[0] == both[2]
        assert both[1] == pytest.approx(score_pairs(q, [c2], tiny_params)[0], abs=1e-12)
