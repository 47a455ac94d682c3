"""Seeded toy corpora whose queries share identifiers with their code."""

from __future__ import annotations

import numpy as np

from .corpus import RawPair

_WORDS = (
    "account address amount buffer cache client column config counter cursor "
    "date device email event file filter folder graph header image index item "
    "joint key label layer length list logger matrix message model node number "
    "order output packet page parser path point price queue record region report "
    "request result row sample schema score session socket stack status stream "
    "string table task thread timer token total user value vector window worker"
).split()
_VERBS = ("get", "set", "load", "save", "parse", "update", "delete", "sort", "count", "merge")
_TEMPLATES = (
    "how to {verb} the {a} {b} from {c}",
    "{verb} {a} {b} given a {c}",
    "what is the best way to {verb} {a} {b} by {c}",
    "{verb} every {a} in the {b} {c}",
)
_CODE = (
    "def {verb}_{a}_{b}({c}):\n    return {c}.{a}_{b}",
    "{a}_{b} = {c}_list.{verb}({a})\nprint({a}_{b})",
    "SELECT {a}_{b} FROM {c}_table WHERE {a} = 1",
    "for {a} in {c}.{b}s:\n    {verb}_{a}({a})",
)


def synthetic_corpus(n_pairs: int = 30, seed: int = 0) -> list[RawPair]:
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        a, b, c = (str(w) for w in rng.choice(_WORDS, size=3, replace=False))
        verb = str(rng.choice(_VERBS))
        question = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))].format(verb=verb, a=a, b=b, c=c)
        code = _CODE[int(rng.integers(len(_CODE)))].format(verb=verb, a=a, b=b, c=c)
        pairs.append(RawPair(f"q{i:04d}", question, code))
    return pairs
