"""Character-overlap features between token sequences."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .corpus import TokenSeq

N_BUCKETS = 100


@dataclass(frozen=True)
class OverlapMatrix:
    values: np.ndarray  # float64 [rows, cols]
    direction: tuple[str, str]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@lru_cache(maxsize=1 << 18)
def lcs_substring_len(s1: str, s2: str) -> int:
    """Length of the longest contiguous substring shared by ``s1`` and ``s2``."""
    if not s1 or not s2:
        return 0
    best = 0
    prev = [0] * (len(s2) + 1)
    for a in s1:
        cur = [0] * (len(s2) + 1)
        for j, b in enumerate(s2, start=1):
            if a == b:
                v = prev[j - 1] + 1
                cur[j] = v
                if v > best:
                    best = v
        prev = cur
    return best


def overlap_score(t1: str, t2: str) -> float:
    """Share of ``t2`` covered by its longest common substring with ``t1``.

    Normalised by the second token, so the score is directional.
    """
    if not t2:
        raise ValueError("overlap_score: second token must be non-empty")
    return lcs_substring_len(t1, t2) / len(t2)


def _tokens(seq: TokenSeq | Sequence[str]) -> tuple[str, ...]:
    return tuple(seq.tokens) if isinstance(seq, TokenSeq) else tuple(seq)


def _kind(seq) -> str:
    return seq.kind if isinstance(seq, TokenSeq) else "tokens"


def overlap_matrix(t1: TokenSeq | Sequence[str], t2: TokenSeq | Sequence[str], metric=None) -> OverlapMatrix:
    """Pairwise overlap scores, rows indexed by ``t1``.

    ``metric`` replaces the substring score; it takes ``(a, b)`` and returns
    the score normalised by ``b``.
    """
    a, b = _tokens(t1), _tokens(t2)
    if not a or not b:
        raise ValueError("overlap_matrix: both sequences must be non-empty")
    score = metric or overlap_score
    values = np.array([[score(x, y) for y in b] for x in a], dtype=np.float64)
    return OverlapMatrix(values, (_kind(t1), _kind(t2)))


def pool_overlap_vector(matrix: OverlapMatrix | np.ndarray) -> np.ndarray:
    values = matrix.values if isinstance(matrix, OverlapMatrix) else np.asarray(matrix, dtype=np.float64)
    return values.max(axis=1)


def overlap_vectors(query: TokenSeq, code: TokenSeq, metric=None) -> tuple[np.ndarray, np.ndarray]:
    """Pooled overlap vectors for both encoders: a(NL) from A(nl, code) and a(CODE) from A(code, nl)."""
    return (
        pool_overlap_vector(overlap_matrix(query, code, metric)),
        pool_overlap_vector(overlap_matrix(code, query, metric)),
    )


def bucketize(score):
    """Index of the width-0.01 bucket holding ``score``; 1.0 falls in the last bucket.

    Accepts a scalar or an array and returns the same shape.
    """
    arr = np.asarray(score, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"bucketize: scores must lie in [0, 1], got {score!r}")
    # Round first so 0.75 / 0.01 = 74.999... lands in bucket 75.
    idx = np.floor(np.round(arr * N_BUCKETS, 9)).astype(np.int64)
    idx = np.minimum(idx, N_BUCKETS - 1)
    return int(idx) if idx.ndim == 0 else idx


def _common_prefix_len(a: str, b: str) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def lcp_score(t1: str, t2: str) -> tuple[float, float]:
    """Prefix/suffix overlap scores normalised by each token.

    The longer of the common prefix and the common suffix is used.
    """
    if not t1 or not t2:
        raise ValueError("lcp_score: tokens must be non-empty")
    p = max(_common_prefix_len(t1, t2), _common_prefix_len(t1[::-1], t2[::-1]))
    return p / len(t1), p / len(t2)


def lcp_overlap(t1: str, t2: str) -> float:
    """``lcp_score`` in the directional slot used by ``overlap_matrix``."""
    return lcp_score(t1, t2)[1]


def format_matrix_tsv(matrix: OverlapMatrix, row_labels: Sequence[str], col_labels: Sequence[str]) -> str:
    lines = ["\t" + "\t".join(col_labels)]
    for label, row in zip(row_labels, matrix.values):
        lines.append(label + "\t" + "\t".join(f"{v:.4f}" for v in row))
    return "\n".join(lines) + "\n"
