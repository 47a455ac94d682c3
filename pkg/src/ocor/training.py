"""Cross-entropy training with per-epoch negative sampling."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import corpus
from .corpus import RawPair, TokenSeq
from .model import ModelParams, forward, make_batch
from .numerics import Adam, NonFiniteError, Tensor, clip_min, log, no_grad, save_checkpoint, softmax
from .overlap import overlap_vectors

log_ = logging.getLogger(__name__)

RELATED = 1
UNRELATED = 2
PROB_FLOOR = 1e-12


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss; the last good checkpoint is kept."""


@dataclass(frozen=True)
class TrainExample:
    query: TokenSeq
    code: TokenSeq
    label: int
    query_id: str = ""
    code_id: str = ""

    def __post_init__(self):
        if self.label not in (RELATED, UNRELATED):
            raise ValueError(f"label must be 1 (related) or 2 (unrelated), got {self.label}")


@dataclass
class TrainConfig:
    epochs: int = 10
    negatives_per_query: int = 5
    learning_rate: float = 1e-4
    dropout_rate: float = 0.2
    batch_size: int = 32
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 writes only the final one
    patience: int = 5

    def __post_init__(self):
        if self.negatives_per_query < 1:
            raise ValueError("negatives_per_query must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)
    dev_mrr: list[float] = field(default_factory=list)
    steps: int = 0
    best_epoch: int | None = None


def cross_entropy(probs, target) -> Tensor:
    """Mean of ``-log p[target]`` with p floored at 1e-12.

    ``probs`` is [2] or [B, 2]; ``target`` holds classes 1 (related) or
    2 (unrelated).
    """
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if np.any((target != RELATED) & (target != UNRELATED)):
        raise ValueError("targets must be class 1 or 2")
    batched = probs.ndim == 2
    p2 = probs if batched else probs.reshape(1, -1)
    picked = p2[np.arange(p2.shape[0]), target - 1]
    return -log(clip_min(picked, PROB_FLOOR)).mean()


def loss_from_logits(logits: Tensor, target) -> Tensor:
    return cross_entropy(softmax(logits, axis=-1), target)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


class SequenceCache:
    """Prepared token sequences and overlap vectors, keyed by pair id."""

    def __init__(self, pairs: Sequence[RawPair], char_len: int = corpus.CHAR_LEN,
                 max_len_nl: int | None = None, max_len_code: int | None = None):
        self.pairs = {p.id: p for p in pairs}
        self.char_len = char_len
        self.max_len_nl = max_len_nl
        self.max_len_code = max_len_code
        self._queries: dict[str, TokenSeq] = {}
        self._codes: dict[str, TokenSeq] = {}
        self._overlaps: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def query(self, pid: str) -> TokenSeq:
        if pid not in self._queries:
            self._queries[pid] = corpus.prepare(
                self.pairs[pid].question, corpus.NATURAL_LANGUAGE, self.char_len, self.max_len_nl
            )
        return self._queries[pid]

    def code(self, pid: str) -> TokenSeq:
        if pid not in self._codes:
            self._codes[pid] = corpus.prepare(self.pairs[pid].code, corpus.CODE, self.char_len, self.max_len_code)
        return self._codes[pid]

    def overlaps(self, query: TokenSeq, code: TokenSeq) -> tuple[np.ndarray, np.ndarray]:
        key = (query.tokens, code.tokens)
        if key not in self._overlaps:
            self._overlaps[key] = overlap_vectors(query, code)
        return self._overlaps[key]


def sample_epoch(pairs: Sequence[RawPair], negatives_per_query: int, epoch_seed,
                 cache: SequenceCache | None = None) -> list[TrainExample]:
    """One positive plus ``negatives_per_query`` random other-pair codes per query."""
    if len(pairs) <= negatives_per_query:
        raise ValueError(
            f"corpus has {len(pairs)} pairs; need more than {negatives_per_query} to sample negatives"
        )
    cache = cache or SequenceCache(pairs)
    rng = epoch_seed if isinstance(epoch_seed, np.random.Generator) else np.random.default_rng(epoch_seed)
    n = len(pairs)
    examples = []
    for i, pair in enumerate(pairs):
        q = cache.query(pair.id)
        examples.append(TrainExample(q, cache.code(pair.id), RELATED, pair.id, pair.id))
        for j in rng.choice(n - 1, size=negatives_per_query, replace=False):
            other = pairs[int(j) + (j >= i)]
            examples.append(TrainExample(q, cache.code(other.id), UNRELATED, pair.id, other.id))
    return examples


def batch_examples(examples: Sequence[TrainExample], cache: SequenceCache):
    items = [(ex.query, ex.code, *cache.overlaps(ex.query, ex.code)) for ex in examples]
    return make_batch(items, cache.char_len), np.array([ex.label for ex in examples])


def evaluate_loss(params: ModelParams, examples: Sequence[TrainExample], cache: SequenceCache,
                  batch_size: int = 64) -> float:
    """Mean inference-mode loss over ``examples``."""
    total = 0.0
    with no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch, labels = batch_examples(chunk, cache)
            total += loss_from_logits(forward(batch, params), labels).item() * len(chunk)
    return total / len(examples)


def _write_log(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def train(
    config: TrainConfig,
    pairs: Sequence[RawPair],
    params: ModelParams,
    dev_eval: Callable[[ModelParams], float] | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    checkpoint_extra: dict | None = None,
    on_epoch: Callable[[int, ModelParams, float], bool] | None = None,
) -> TrainResult:
    """Train ``params`` in place.

    Per epoch: resample negatives, shuffle, then mini-batch forward, mean
    cross-entropy, backward and an Adam step.  ``dev_eval`` (params -> MRR)
    turns on early stopping with ``config.patience``; the best epoch's
    weights are restored at the end.  ``on_epoch(epoch, params, mean_loss)``
    returning True stops training after that epoch.
    """
    if params.config.dropout_rate != config.dropout_rate:
        params.config = dataclasses.replace(params.config, dropout_rate=config.dropout_rate)
    cfg = params.config
    cache = SequenceCache(pairs, cfg.char_len, cfg.max_len_nl, cfg.max_len_code)
    opt = Adam(params.tensors, lr=config.learning_rate)
    result = TrainResult(params)
    best_mrr = -1.0
    best_arrays = None
    stale = 0
    extra = {"seed": config.seed, **(checkpoint_extra or {})}

    def checkpoint(epoch: int) -> None:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, params.arrays(), cfg.to_dict(), opt.state.step_count,
                            {**extra, "epoch": epoch})

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            started = time.perf_counter()
            rng = epoch_rng(config.seed, epoch)
            examples = sample_epoch(pairs, config.negatives_per_query, rng, cache)
            order = rng.permutation(len(examples))
            examples = [examples[i] for i in order]
            batch_losses = []
            for start in range(0, len(examples), config.batch_size):
                chunk = examples[start : start + config.batch_size]
                batch, labels = batch_examples(chunk, cache)
                opt.zero_grad()
                try:
                    loss = loss_from_logits(forward(batch, params, training=True, rng=rng), labels)
                except NonFiniteError as exc:
                    raise TrainingAborted(f"epoch {epoch}: {exc}") from exc
                if not np.isfinite(loss.item()):
                    raise TrainingAborted(f"epoch {epoch}: non-finite loss")
                loss.backward()
                try:
                    opt.step()
                except FloatingPointError as exc:
                    raise TrainingAborted(f"epoch {epoch}: {exc}") from exc
                batch_losses.append((loss.item(), len(chunk)))
            mean_loss = sum(l * n for l, n in batch_losses) / sum(n for _, n in batch_losses)
            result.losses.append(mean_loss)
            record = {"epoch": epoch, "mean_loss": round(mean_loss, 8)}
            if dev_eval is not None:
                dev = dev_eval(params)
                result.dev_mrr.append(dev)
                record["dev_mrr"] = round(dev, 8)
                if dev > best_mrr:
                    best_mrr, best_arrays, stale = dev, params.arrays(), 0
                    result.best_epoch = epoch
                else:
                    stale += 1
            record["wall_time"] = round(time.perf_counter() - started, 3)
            _write_log(log_fh, record)
            log_.info("epoch %d mean loss %.5f", epoch, mean_loss)
            if config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
                checkpoint(epoch)
            if dev_eval is not None and stale >= config.patience:
                log_.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
            if on_epoch is not None and on_epoch(epoch, params, mean_loss):
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    if best_arrays is not None:
        for name, arr in best_arrays.items():
            params[name].data = arr
    result.steps = opt.state.step_count
    checkpoint(len(result.losses) - 1)
    return result
