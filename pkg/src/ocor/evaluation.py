"""Ranking, MRR, score ensembling and perfect-ranking analysis."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import RetrievalCase, TokenSeq
from .model import ModelParams, forward, make_batch, relevance_from_logits
from .numerics import no_grad
from .overlap import overlap_vectors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredRanking:
    case_id: str
    scores: np.ndarray
    order: np.ndarray  # candidate indices, best first
    positive_rank: int  # 1-based

    @classmethod
    def from_scores(cls, case_id: str, scores, positive_index: int) -> ScoredRanking:
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError(f"case {case_id!r}: non-finite scores")
        # descending score, ties by ascending index
        order = np.lexsort((np.arange(scores.size), -scores))
        rank = int(np.nonzero(order == positive_index)[0][0]) + 1
        return cls(case_id, scores, order, rank)


@dataclass
class ScoreFile:
    model_name: str
    entries: dict[tuple[str, str], float]

    def case_scores(self, case_id: str, candidate_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.entries[(case_id, c)] for c in candidate_ids], dtype=np.float64)
        except KeyError as exc:
            raise KeyError(f"score file {self.model_name!r} has no score for {exc.args[0]}") from None


def score_pairs(query: TokenSeq, candidates: Sequence[TokenSeq], params: ModelParams,
                batch_size: int = 64) -> np.ndarray:
    """R(Q, c) for every candidate; repeated snippets are scored once."""
    first: dict[tuple[str, ...], TokenSeq] = {}
    for c in candidates:
        first.setdefault(c.tokens, c)
    distinct = list(first.values())
    slot = {seq.tokens: i for i, seq in enumerate(distinct)}
    scores = np.empty(len(distinct))
    with no_grad():
        for start in range(0, len(distinct), batch_size):
            chunk = distinct[start : start + batch_size]
            items = [(query, c, *overlap_vectors(query, c)) for c in chunk]
            logits = forward(make_batch(items, params.config.char_len), params)
            scores[start : start + len(chunk)] = relevance_from_logits(logits)
    return np.array([scores[slot[c.tokens]] for c in candidates])


def rank_case(case: RetrievalCase, params: ModelParams, case_id: str | None = None) -> ScoredRanking:
    scores = score_pairs(case.query, case.candidates, params)
    return ScoredRanking.from_scores(case_id or case.query_id, scores, case.positive_index)


def mrr(rankings: Sequence[ScoredRanking]) -> float:
    if not rankings:
        raise ValueError("mrr of an empty ranking list")
    return sum(1.0 / r.positive_rank for r in rankings) / len(rankings)


def mrr_from_ranks(ranks: Sequence[int]) -> float:
    if not len(ranks):
        raise ValueError("mrr of an empty rank list")
    return float(np.mean([1.0 / r for r in ranks]))


def ensemble(s1, s2, lam: float):
    """``lam * s1 + (1 - lam) * s2``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return lam * s1 + (1.0 - lam) * s2


def load_score_file(path: str | Path, model_name: str | None = None) -> ScoreFile:
    path = Path(path)
    entries: dict[tuple[str, str], float] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["case_id"]), str(rec["candidate_id"]))
                score = float(rec["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed score record ({exc})") from None
            if not np.isfinite(score):
                raise ValueError(f"{path}:{lineno}: non-finite score")
            entries[key] = score
    return ScoreFile(model_name or path.stem, entries)


def write_score_file(path: str | Path, cases: Sequence[RetrievalCase], scores: Mapping[str, np.ndarray]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for case in cases:
            for cid, s in zip(case.candidate_ids, scores[case.query_id]):
                fh.write(json.dumps({"case_id": case.query_id, "candidate_id": cid, "score": float(s)}) + "\n")


def normalise_case_scores(scores: np.ndarray, case_id: str = "", model_name: str = "") -> np.ndarray:
    """Min-max rescale one case's scores when any falls outside (0, 1)."""
    if np.all((scores > 0.0) & (scores < 1.0)):
        return scores
    log.warning("scores of %s for case %s fall outside (0, 1); min-max normalising", model_name, case_id)
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


def external_rankings(cases: Sequence[RetrievalCase], score_file: ScoreFile) -> list[ScoredRanking]:
    return [
        ScoredRanking.from_scores(c.query_id, score_file.case_scores(c.query_id, c.candidate_ids), c.positive_index)
        for c in cases
    ]


def ensemble_rankings(
    cases: Sequence[RetrievalCase],
    own_scores: Mapping[str, np.ndarray],
    score_file: ScoreFile,
    lam: float,
) -> list[ScoredRanking]:
    """Rank every case by ``lam * own + (1 - lam) * external``."""
    out = []
    for case in cases:
        ext = normalise_case_scores(
            score_file.case_scores(case.query_id, case.candidate_ids), case.query_id, score_file.model_name
        )
        mixed = ensemble(np.asarray(own_scores[case.query_id]), ext, lam)
        out.append(ScoredRanking.from_scores(case.query_id, mixed, case.positive_index))
    return out


def perfect_ranking_sets(rankings: Mapping[str, Sequence[ScoredRanking]]) -> dict:
    """Top-1 case sets per model and the sizes of their overlaps."""
    if not rankings:
        raise ValueError("no models given")
    case_lists = {name: [r.case_id for r in rs] for name, rs in rankings.items()}
    reference = sorted(next(iter(case_lists.values())))
    for name, ids in case_lists.items():
        if sorted(ids) != reference:
            raise ValueError(f"model {name!r} was evaluated on a different case list")
    sets = {name: {r.case_id for r in rs if r.positive_rank == 1} for name, rs in rankings.items()}
    names = list(sets)
    report = {
        "n_cases": len(reference),
        "sets": {n: sorted(s) for n, s in sets.items()},
        "sizes": {n: len(s) for n, s in sets.items()},
        "only": {n: len(s - set().union(*(sets[m] for m in names if m != n))) for n, s in sets.items()},
        "intersections": {},
        "union": len(set().union(*sets.values())),
    }
    for r in range(2, len(names) + 1):
        for combo in itertools.combinations(names, r):
            report["intersections"]["&".join(combo)] = len(set.intersection(*(sets[n] for n in combo)))
    return report
