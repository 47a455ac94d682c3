import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ocor import corpus
from ocor.corpus import (
    ALPHABET_SIZE,
    CODE,
    NATURAL_LANGUAGE,
    PAD_INDEX,
    UNK_INDEX,
    CorpusError,
    RawPair,
    build_cases,
    load_cases,
    load_corpus,
    to_token_seq,
    tokenize,
    write_cases,
)


def _pairs(n):
    return [RawPair(f"p{i}", f"question {i}", f"code_{i} = {i}") for i in range(n)]


class TestLoadCorpus:
    def test_two_lines_in_order(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(
            '{"id": "a", "question": "q1", "code": "x = 1"}\n{"id": "b", "question": "q2", "code": "y"}\n'
        )
        pairs = load_corpus(path)
        assert [p.id for p in pairs] == ["a", "b"]
        assert pairs[0] == RawPair("a", "q1", "x = 1")

    def test_missing_code_field_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "question": "q", "code": "c"}\n{"id": "b", "question": "q"}\n')
        with pytest.raises(CorpusError, match=r":2:.*code"):
            load_corpus(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert load_corpus(path) == []

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = json.dumps({"id": "dup", "question": "q", "code": "c"})
        path.write_text(rec + "\n" + rec + "\n")
        with pytest.raises(CorpusError, match="dup"):
            load_corpus(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(CorpusError, match=":1:"):
            load_corpus(path)

    def test_blank_question_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "question": "   ", "code": "c"}\n')
        with pytest.raises(CorpusError, match=":1:"):
            load_corpus(path)


class TestTokenize:
    def test_sql_example(self):
        assert tokenize("Select * FROM joint_table_b", CODE) == ["select", "*", "from", "joint_table_b"]

    def test_empty(self):
        assert tokenize("") == []

    def test_dot_split(self):
        assert tokenize("a.b") == ["a", ".", "b"]

    def test_identifiers_kept_whole(self):
        assert tokenize("dataId = data_id2;", CODE) == ["dataid", "=", "data_id2", ";"]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            tokenize("x", "prose")

    @given(st.text())
    @settings(max_examples=300)
    def test_idempotent_on_joined_output(self, text):
        toks = tokenize(text)
        assert tokenize(" ".join(toks)) == toks

    @given(st.text())
    @settings(max_examples=200)
    def test_tokens_nonempty_and_spacefree(self, text):
        for tok in tokenize(text):
            assert tok and not any(ch.isspace() for ch in tok)


class TestToTokenSeq:
    def test_padding(self):
        seq = to_token_seq(["abc"], NATURAL_LANGUAGE, char_len=5)
        a, b, c = (corpus.char_index(ch) for ch in "abc")
        assert seq.chars.tolist() == [[a, b, c, PAD_INDEX, PAD_INDEX]]

    def test_truncation_keeps_head(self):
        tok = "abcdefghijklmnopqrs"  # CL + 3
        seq = to_token_seq([tok], CODE, char_len=16)
        assert seq.chars[0].tolist() == [corpus.char_index(ch) for ch in tok[:16]]

    def test_non_ascii_maps_to_unknown(self):
        seq = to_token_seq(["données"], NATURAL_LANGUAGE)
        row = seq.chars[0]
        assert row[4] == UNK_INDEX  # 'é'
        assert row[0] == corpus.char_index("d")
        assert UNK_INDEX not in row[[0, 1, 2, 3, 5, 6]]

    def test_sequence_cap(self):
        seq = to_token_seq([f"t{i}" for i in range(300)], CODE)
        assert len(seq) == corpus.MAX_LEN[CODE]
        assert seq.tokens[-1] == "t199"

    @given(st.text())
    @settings(max_examples=200)
    def test_rows_index_alphabet(self, text):
        seq = corpus.prepare(text, NATURAL_LANGUAGE)
        assert seq.chars.shape == (len(seq.tokens), corpus.CHAR_LEN)
        assert np.all((seq.chars >= 0) & (seq.chars < ALPHABET_SIZE))
        for tok, row in zip(seq.tokens, seq.chars):
            n = min(len(tok), corpus.CHAR_LEN)
            assert np.all(row[n:] == PAD_INDEX)
            assert np.all(row[:n] != PAD_INDEX)


class TestBuildCases:
    def test_fifty_candidate_cases(self):
        cases = build_cases(_pairs(51), 49, seed=0)
        assert len(cases) == 51
        assert all(len(c.candidates) == 50 for c in cases)

    def test_minimal(self):
        cases = build_cases(_pairs(3), 1, seed=0)
        assert len(cases) == 3
        assert all(len(c.candidates) == 2 for c in cases)

    def test_deterministic(self):
        a = build_cases(_pairs(20), 5, seed=7)
        b = build_cases(_pairs(20), 5, seed=7)
        assert [(c.candidate_ids, c.positive_index) for c in a] == [(c.candidate_ids, c.positive_index) for c in b]

    def test_positive_is_own_code_and_negatives_distinct(self):
        pairs = _pairs(15)
        for case in build_cases(pairs, 6, seed=2):
            assert case.candidate_ids[case.positive_index] == case.query_id
            assert len(set(case.candidate_ids)) == len(case.candidate_ids)

    def test_too_small(self):
        with pytest.raises(CorpusError, match="at least 6"):
            build_cases(_pairs(5), 5, seed=0)

    def test_positive_positions_uniform(self):
        pairs = _pairs(12)
        counts = np.zeros(5)
        seed = 0
        while counts.sum() < 1200:
            for case in build_cases(pairs, 4, seed=seed):
                counts[case.positive_index] += 1
            seed += 1
        assert stats.chisquare(counts).pvalue > 0.001

    def test_case_file_round_trip(self, tmp_path):
        pairs = _pairs(10)
        cases = build_cases(pairs, 3, seed=1)
        path = tmp_path / "cases.jsonl"
        write_cases(cases, path)
        first = json.loads(path.read_text().splitlines()[0])
        assert set(first) == {"query_id", "candidate_ids", "positive_index"}
        again = load_cases(path, pairs)
        assert [(c.query_id, c.candidate_ids, c.positive_index) for c in again] == [
            (c.query_id, c.candidate_ids, c.positive_index) for c in cases
        ]

    def test_case_file_unknown_id(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        path.write_text('{"query_id": "p0", "candidate_ids": ["p0", "zz"], "positive_index": 0}\n')
        with pytest.raises(CorpusError, match="zz"):
            load_cases(path, _pairs(3))

    def test_case_invariants_enforced(self):
        seq = corpus.prepare("x", CODE)
        with pytest.raises(CorpusError):
            corpus.RetrievalCase(seq, (seq,), 0)
        with pytest.raises(CorpusError):
            corpus.RetrievalCase(seq, (seq, seq), 2)
