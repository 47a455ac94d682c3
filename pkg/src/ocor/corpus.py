"""Corpus ingestion, tokenization and retrieval-case construction.

Corpus files are UTF-8 JSON lines with ``id``, ``question`` and ``code``
fields.  Retrieval-case files are JSON lines with ``query_id``,
``candidate_ids`` and ``positive_index``.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NATURAL_LANGUAGE = "natural-language"
CODE = "code"
KINDS = (NATURAL_LANGUAGE, CODE)

CHAR_LEN = 16
MAX_LEN = {NATURAL_LANGUAGE: 50, CODE: 200}

PAD_INDEX = 0
UNK_INDEX = 1
# string.punctuation already contains "_".
_SYMBOLS = string.ascii_lowercase + string.digits + string.punctuation
ALPHABET_SIZE = 100
# Rows 2 + len(_SYMBOLS) .. 99 of the embedding table are reserved and never indexed.
_CHAR_INDEX = {ch: i + 2 for i, ch in enumerate(_SYMBOLS)}
assert len(_CHAR_INDEX) + 2 <= ALPHABET_SIZE

_TOKEN_RE = re.compile(r"[a-z0-9_]+|[^a-z0-9_\s]")


class CorpusError(ValueError):
    """Raised for malformed corpus or case files."""


@dataclass(frozen=True)
class RawPair:
    id: str
    question: str
    code: str


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    chars: np.ndarray  # int64 [len(tokens), char_len]
    kind: str

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class RetrievalCase:
    query: TokenSeq
    candidates: tuple[TokenSeq, ...]
    positive_index: int
    query_id: str = ""
    candidate_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise CorpusError("a retrieval case needs at least 2 candidates")
        if not 0 <= self.positive_index < len(self.candidates):
            raise CorpusError(
                f"positive_index {self.positive_index} out of range for "
                f"{len(self.candidates)} candidates"
            )


def load_corpus(path: str | Path) -> list[RawPair]:
    """Read a JSON-lines corpus. Blank lines are skipped."""
    path = Path(path)
    pairs: list[RawPair] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            for key in ("id", "question", "code"):
                if not isinstance(record.get(key), str):
                    raise CorpusError(f"{path}:{lineno}: missing or non-string field {key!r}")
            pid = record["id"]
            if not pid:
                raise CorpusError(f"{path}:{lineno}: empty id")
            if not record["question"].strip() or not record["code"].strip():
                raise CorpusError(f"{path}:{lineno}: empty question or code")
            if pid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {pid!r}")
            seen.add(pid)
            pairs.append(RawPair(pid, record["question"], record["code"]))
    return pairs


def tokenize(text: str, kind: str = NATURAL_LANGUAGE) -> list[str]:
    """Lowercase ``text`` and split it into word runs and single symbols.

    Word runs are maximal ``[a-z0-9_]`` sequences; every other non-space
    character becomes a one-character token.  Both kinds share the rule, so
    identifiers such as ``joint_table_b`` survive intact.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    return _TOKEN_RE.findall(text.lower())


def char_index(ch: str) -> int:
    return _CHAR_INDEX.get(ch, UNK_INDEX)


def to_token_seq(
    tokens: Sequence[str],
    kind: str,
    char_len: int = CHAR_LEN,
    max_len: int | None = None,
) -> TokenSeq:
    """Map tokens to fixed-width character index rows.

    Sequences beyond ``max_len`` (default: the per-kind cap) lose their tail.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if max_len is None:
        max_len = MAX_LEN[kind]
    tokens = tuple(t.lower() for t in tokens if t)[:max_len]
    chars = np.full((len(tokens), char_len), PAD_INDEX, dtype=np.int64)
    for i, tok in enumerate(tokens):
        for j, ch in enumerate(tok[:char_len]):
            chars[i, j] = char_index(ch)
    return TokenSeq(tokens, chars, kind)


def prepare(text: str, kind: str, char_len: int = CHAR_LEN, max_len: int | None = None) -> TokenSeq:
    return to_token_seq(tokenize(text, kind), kind, char_len, max_len)


def build_cases(
    pairs: Sequence[RawPair],
    negatives_per_case: int,
    seed: int,
    char_len: int = CHAR_LEN,
) -> list[RetrievalCase]:
    """One case per pair: its own code plus negatives drawn from other pairs.

    Negatives are sampled uniformly without replacement and the positive is
    inserted at a uniformly drawn slot; everything comes from one seeded
    generator, so equal seeds give equal case lists.
    """
    if negatives_per_case < 1:
        raise ValueError("negatives_per_case must be >= 1")
    if len(pairs) <= negatives_per_case:
        raise CorpusError(
            f"corpus has {len(pairs)} pairs; at least {negatives_per_case + 1} "
            f"are required for {negatives_per_case} negatives per case"
        )
    rng = np.random.default_rng(seed)
    queries = [prepare(p.question, NATURAL_LANGUAGE, char_len) for p in pairs]
    codes = [prepare(p.code, CODE, char_len) for p in pairs]
    cases = []
    n = len(pairs)
    for i, pair in enumerate(pairs):
        others = rng.choice(n - 1, size=negatives_per_case, replace=False)
        others = [int(j) + (j >= i) for j in others]  # skip index i
        pos = int(rng.integers(0, negatives_per_case + 1))
        order = others[:pos] + [i] + others[pos:]
        cases.append(
            RetrievalCase(
                query=queries[i],
                candidates=tuple(codes[j] for j in order),
                positive_index=pos,
                query_id=pair.id,
                candidate_ids=tuple(pairs[j].id for j in order),
            )
        )
    return cases


def write_cases(cases: Iterable[RetrievalCase], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for case in cases:
            record = {
                "query_id": case.query_id,
                "candidate_ids": list(case.candidate_ids),
                "positive_index": case.positive_index,
            }
            fh.write(json.dumps(record) + "\n")


def load_cases(path: str | Path, pairs: Sequence[RawPair], char_len: int = CHAR_LEN) -> list[RetrievalCase]:
    """Resolve a retrieval-case file against the corpus it was drawn from."""
    path = Path(path)
    by_id = {p.id: p for p in pairs}
    cases = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                qid = record["query_id"]
                cids = [str(c) for c in record["candidate_ids"]]
                pos = int(record["positive_index"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed case record ({exc})") from None
            missing = [c for c in [qid, *cids] if c not in by_id]
            if missing:
                raise CorpusError(f"{path}:{lineno}: unknown id {missing[0]!r}")
            try:
                cases.append(
                    RetrievalCase(
                        query=prepare(by_id[qid].question, NATURAL_LANGUAGE, char_len),
                        candidates=tuple(prepare(by_id[c].code, CODE, char_len) for c in cids),
                        positive_index=pos,
                        query_id=qid,
                        candidate_ids=tuple(cids),
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return cases
