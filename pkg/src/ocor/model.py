"""The overlap-aware retrieval network.

Every forward function accepts arrays with arbitrary leading batch
dimensions: ``[L, d]`` for a single sequence or ``[B, L, d]`` for a padded
batch.  Padded batches carry a float mask ``[B, L]`` (1 = real token) which
keeps padding out of attention keys, convolution windows and max pooling,
so a padded row computes the same function as the unpadded sequence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import corpus
from .corpus import TokenSeq
from .numerics import (
    Tensor,
    VECTOR_PAD,
    ZERO_PAD,
    NO_PAD,
    broadcast_to,
    concat,
    conv1d,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    softmax,
    stack,
    swapaxes,
    tmax,
    tsum,
)
from .overlap import N_BUCKETS, bucketize

PARAMS_VERSION = 1
ENCODERS = ("nl", "code")
_MASK_FILL = 1e9


@dataclass(frozen=True)
class ModelConfig:
    N: int = 3
    d: int = 256
    H: int = 8
    char_len: int = corpus.CHAR_LEN
    d_conv_first: int = 1024
    conv_kernel: int = 3
    mlp_hidden: int = 1024
    cross_kernel: int = 3
    max_len_nl: int = corpus.MAX_LEN[corpus.NATURAL_LANGUAGE]
    max_len_code: int = corpus.MAX_LEN[corpus.CODE]
    dropout_rate: float = 0.2
    alphabet_size: int = corpus.ALPHABET_SIZE
    dtype: str = "float64"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.d % self.H:
            raise ValueError(f"d={self.d} is not divisible by H={self.H}")
        if self.d % 2:
            raise ValueError("d must be even for the sinusoidal position table")
        if self.conv_kernel % 2 == 0 or self.cross_kernel % 2 == 0:
            raise ValueError("convolution kernels must be odd")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def d_k(self) -> int:
        return self.d // self.H

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


class ModelParams:
    """Named learnable tensors plus the config that shaped them."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor], version: int = PARAMS_VERSION):
        self.config = config
        self.tensors = dict(tensors)
        self.version = version

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def copy(self) -> ModelParams:
        return ModelParams.from_arrays(self.config, self.arrays())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> ModelParams:
        expected = param_shapes(config)
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            unknown = sorted(set(arrays) - set(expected))
            raise ValueError(f"parameter names do not match config (missing={missing[:3]}, unknown={unknown[:3]})")
        tensors = {}
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=config.dtype)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match config shape {shape}")
            tensors[name] = Tensor(arr, requires_grad=True, name=name)
        return cls(config, tensors)


# ---------------------------------------------------------------------------
# parameter layout


def _attention_shapes(prefix: str, d: int) -> dict[str, tuple]:
    out = {}
    for p in ("q", "k", "v", "o"):
        out[f"{prefix}.w{p}"] = (d, d)
        out[f"{prefix}.b{p}"] = (d,)
    return out


def _gate_shapes(prefix: str, d: int) -> dict[str, tuple]:
    out = {}
    for p in ("q", "ko", "vo", "kc", "vc", "o"):
        out[f"{prefix}.w{p}"] = (d, d)
        out[f"{prefix}.b{p}"] = (d,)
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d = cfg.d
    shapes: dict[str, tuple] = {
        "char_embedding": (cfg.alphabet_size, d),
        "overlap_embedding": (N_BUCKETS, d),
    }
    for i, k in enumerate((3, 5, cfg.char_len), start=1):
        shapes[f"char_conv{i}.kernel"] = (k, d, d)
        shapes[f"char_conv{i}.bias"] = (d,)
    for enc in ENCODERS:
        for m in range(cfg.N):
            pre = f"{enc}.mech{m}"
            shapes.update(_attention_shapes(f"{pre}.attn", d))
            shapes.update(_gate_shapes(f"{pre}.gate", d))
            shapes[f"{pre}.conv1.kernel"] = (cfg.conv_kernel, d, cfg.d_conv_first)
            shapes[f"{pre}.conv1.bias"] = (cfg.d_conv_first,)
            shapes[f"{pre}.conv2.kernel"] = (cfg.conv_kernel, cfg.d_conv_first, d)
            shapes[f"{pre}.conv2.bias"] = (d,)
            shapes[f"{pre}.ln.gain"] = (d,)
            shapes[f"{pre}.ln.bias"] = (d,)
        shapes[f"{enc}.pool_conv.kernel"] = (cfg.conv_kernel, d, d)
        shapes[f"{enc}.pool_conv.bias"] = (d,)
        shapes[f"{enc}.pad_vector"] = (d,)
        pre = f"cross_{enc}"
        shapes.update(_attention_shapes(f"{pre}.attn", d))
        for i in (1, 2):
            shapes[f"{pre}.conv{i}.kernel"] = (cfg.cross_kernel, d, d)
            shapes[f"{pre}.conv{i}.bias"] = (d,)
    shapes["mlp.w1"] = (4 * d, cfg.mlp_hidden)
    shapes["mlp.b1"] = (cfg.mlp_hidden,)
    shapes["mlp.w2"] = (cfg.mlp_hidden, 2)
    shapes["mlp.b2"] = (2,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Embeddings and the pad vector ~ N(0, 0.02); weights ~ U(+-1/sqrt(fan_in)); biases 0; LN gain 1."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("char_embedding", "overlap_embedding") or leaf == "pad_vector":
            arr = rng.normal(0.0, 0.02, size=shape)
        elif leaf == "gain":
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        arrays[name] = arr
    return ModelParams.from_arrays(cfg, arrays)


# ---------------------------------------------------------------------------
# building blocks


def _mask3(mask, like: Tensor):
    """[..., L] mask -> [..., L, 1] array in the tensor's dtype."""
    if mask is None:
        return None
    return np.asarray(mask, dtype=like.dtype)[..., None]


def _apply_mask(x: Tensor, mask) -> Tensor:
    m = _mask3(mask, x)
    return x if m is None else x * m


def _masked_max(x: Tensor, mask) -> Tensor:
    """Max over the sequence axis (-2), ignoring padded rows."""
    m = _mask3(mask, x)
    if m is not None:
        x = x + (m - 1.0) * _MASK_FILL
    return tmax(x, axis=-2)


def embed_overlap(ov, params: ModelParams) -> Tensor:
    """Look up each pooled score's bucket in the overlap-bucket table."""
    return embedding(params["overlap_embedding"], bucketize(np.asarray(ov, dtype=np.float64)))


def position_table(length: int, d: int, dtype="float64") -> np.ndarray:
    if d % 2:
        raise ValueError(f"position encoding needs an even width, got d={d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((length, d))
    table[:, 0::2] = np.sin(pos / rates)
    table[:, 1::2] = np.cos(pos / rates)
    return table.astype(dtype)


def position_encode(x: Tensor) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x + position_table(x.shape[-2], x.shape[-1], x.dtype)


def _split_heads(x: Tensor, H: int) -> Tensor:
    """[..., L, d] -> [..., H, L, d/H]"""
    *lead, L, d = x.shape
    return swapaxes(reshape(x, (*lead, L, H, d // H)), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., H, L, dk] -> [..., L, H*dk]"""
    x = swapaxes(x, -3, -2)
    *lead, L, H, dk = x.shape
    return reshape(x, (*lead, L, H * dk))


def attention_weights(q_in, k_in, params: ModelParams, prefix: str, H: int, key_mask=None) -> Tensor:
    """Per-head softmax(QK^T / sqrt(d_k)), shape [..., H, Lq, Lk]."""
    p = params
    q = _split_heads(linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), H)
    k = _split_heads(linear(k_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), H)
    logits = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=logits.dtype)[..., None, None, :]
        logits = logits + (km - 1.0) * _MASK_FILL
    return softmax(logits, axis=-1)


def multi_head_attention(q_in, k_in, v_in, params: ModelParams, prefix: str, H: int, key_mask=None) -> Tensor:
    q_in, k_in, v_in = (t if isinstance(t, Tensor) else Tensor(t) for t in (q_in, k_in, v_in))
    if q_in.shape[-1] != k_in.shape[-1] or k_in.shape[:-1] != v_in.shape[:-1]:
        raise ValueError(f"attention shape mismatch: Q {q_in.shape}, K {k_in.shape}, V {v_in.shape}")
    if q_in.shape[-1] % H:
        raise ValueError(f"width {q_in.shape[-1]} not divisible by {H} heads")
    weights = attention_weights(q_in, k_in, params, prefix, H, key_mask)
    v = _split_heads(linear(v_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"]), H)
    heads = _merge_heads(matmul(weights, v))
    return linear(heads, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def gating_heads(control, semantic, params: ModelParams, prefix: str, H: int):
    """Per-head gate mixtures before the output projection.

    Returns ``(h, mix, v_control, v_semantic)``; ``h``, ``v_*`` are
    [..., L, H, d_k] and ``mix`` [..., L, H, 2] holds the normalised
    weights of the control and semantic values.
    """
    p = params
    control = control if isinstance(control, Tensor) else Tensor(control)
    semantic = semantic if isinstance(semantic, Tensor) else Tensor(semantic)
    if control.shape != semantic.shape:
        raise ValueError(f"gating: control {control.shape} and semantic {semantic.shape} differ")
    *lead, L, d = control.shape

    def heads(x, w):
        return reshape(linear(x, p[f"{prefix}.w{w}"], p[f"{prefix}.b{w}"]), (*lead, L, H, d // H))

    q = heads(control, "q")
    k_o, v_o = heads(control, "ko"), heads(control, "vo")
    k_c, v_c = heads(semantic, "kc"), heads(semantic, "vc")
    # exp(q.k)/sqrt(d) normalised over the two sources; the 1/sqrt(d) cancels,
    # leaving a two-way softmax of the raw dot products.
    scores = stack([tsum(q * k_o, axis=-1), tsum(q * k_c, axis=-1)], axis=-1)
    mix = softmax(scores, axis=-1)
    h = mix[..., 0:1] * v_o + mix[..., 1:2] * v_c
    return h, mix, v_o, v_c


def gating(control, semantic, params: ModelParams, prefix: str, H: int) -> Tensor:
    h = gating_heads(control, semantic, params, prefix, H)[0]
    *lead, L, H_, dk = h.shape
    return linear(reshape(h, (*lead, L, H_ * dk)), params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def char_embed(chars, params: ModelParams) -> Tensor:
    """Token vectors from character indices [..., L, CL] -> [..., L, d]."""
    chars = chars.chars if isinstance(chars, TokenSeq) else np.asarray(chars)
    *lead, L, CL = chars.shape
    d = params.config.d
    x = embedding(params["char_embedding"], chars.reshape(-1, CL))  # [T, CL, d]
    x = gelu(conv1d(x, params["char_conv1.kernel"], params["char_conv1.bias"], ZERO_PAD))
    x = gelu(conv1d(x, params["char_conv2.kernel"], params["char_conv2.bias"], ZERO_PAD))
    x = conv1d(x, params["char_conv3.kernel"], params["char_conv3.bias"], NO_PAD)  # [T, 1, d]
    return reshape(x, (*lead, L, d))


def _conv_pair(x: Tensor, mask, params: ModelParams, prefix: str) -> Tensor:
    p = params
    y = conv1d(_apply_mask(x, mask), p[f"{prefix}.conv1.kernel"], p[f"{prefix}.conv1.bias"], ZERO_PAD)
    y = gelu(y)
    return conv1d(_apply_mask(y, mask), p[f"{prefix}.conv2.kernel"], p[f"{prefix}.conv2.bias"], ZERO_PAD)


def mechanism(x: Tensor, semantic: Tensor, params: ModelParams, prefix: str, mask=None,
              training: bool = False, rng=None) -> Tensor:
    """Self-attention -> gating -> conv pair, then residual and layer norm."""
    cfg = params.config
    e = position_encode(x)
    a = multi_head_attention(e, e, e, params, f"{prefix}.attn", cfg.H, key_mask=mask)
    c = gating(a, semantic, params, f"{prefix}.gate", cfg.H)
    y = _conv_pair(c, mask, params, prefix)
    y = dropout(y, cfg.dropout_rate, training, rng)
    return layer_norm(x + y, params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])


def encode(chars, overlap_buckets, params: ModelParams, encoder: str, mask=None,
           training: bool = False, rng=None, semantic: Tensor | None = None) -> Tensor:
    """Token-level encoder output [..., L, d]."""
    if semantic is None:
        semantic = char_embed(chars, params)
    x = embedding(params["overlap_embedding"], overlap_buckets)
    for m in range(params.config.N):
        x = mechanism(x, semantic, params, f"{encoder}.mech{m}", mask, training, rng)
    return x


def encoder_forward(seq: TokenSeq, ov, params: ModelParams, encoder: str = "nl") -> Tensor:
    return encode(seq.chars, bucketize(np.asarray(ov, dtype=np.float64)), params, encoder)


def pool_encoder(x, params: ModelParams, encoder: str = "nl", mask=None) -> Tensor:
    """Pad-vector convolution followed by a max over the sequence."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-2] == 0:
        raise ValueError("pool_encoder: empty sequence")
    pad = params[f"{encoder}.pad_vector"]
    m = _mask3(mask, x)
    if m is not None:
        x = x * m + broadcast_to(pad, x.shape) * (1.0 - m)
    y = conv1d(x, params[f"{encoder}.pool_conv.kernel"], params[f"{encoder}.pool_conv.bias"], VECTOR_PAD, pad)
    return _masked_max(y, mask)


def cross_direction(query_enc, kv_enc, params: ModelParams, prefix: str, q_mask=None, kv_mask=None) -> Tensor:
    a = multi_head_attention(query_enc, kv_enc, kv_enc, params, f"{prefix}.attn", params.config.H, key_mask=kv_mask)
    y = _conv_pair(a, q_mask, params, prefix)
    return _masked_max(y, q_mask)


def cross_attention_block(nl_enc, code_enc, params: ModelParams, nl_mask=None, code_mask=None):
    nl_enc = nl_enc if isinstance(nl_enc, Tensor) else Tensor(nl_enc)
    code_enc = code_enc if isinstance(code_enc, Tensor) else Tensor(code_enc)
    return (
        cross_direction(nl_enc, code_enc, params, "cross_nl", nl_mask, code_mask),
        cross_direction(code_enc, nl_enc, params, "cross_code", code_mask, nl_mask),
    )


def predict_logits(features, params: ModelParams, training: bool = False, rng=None) -> Tensor:
    p = params
    h = gelu(linear(features, p["mlp.w1"], p["mlp.b1"]))
    h = dropout(h, p.config.dropout_rate, training, rng)
    return linear(h, p["mlp.w2"], p["mlp.b2"])


def predict(features, params: ModelParams):
    """Return ``(R, logits)`` where R is the class-1 (related) probability."""
    logits = predict_logits(features, params)
    probs = softmax(logits, axis=-1)
    return probs.data[..., 0], logits


def relevance_from_logits(logits) -> np.ndarray:
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return softmax(Tensor(logits), axis=-1).data[..., 0]


# ---------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class Batch:
    nl_chars: np.ndarray  # [B, Ln, CL]
    nl_buckets: np.ndarray  # [B, Ln]
    nl_mask: np.ndarray  # [B, Ln]
    code_chars: np.ndarray
    code_buckets: np.ndarray
    code_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.nl_chars.shape[0]


def _pad_stack(seqs: Sequence[TokenSeq], vectors: Sequence[np.ndarray], char_len: int):
    L = max(len(s) for s in seqs)
    B = len(seqs)
    chars = np.full((B, L, char_len), corpus.PAD_INDEX, dtype=np.int64)
    buckets = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    for b, (s, v) in enumerate(zip(seqs, vectors)):
        n = len(s)
        chars[b, :n] = s.chars
        buckets[b, :n] = bucketize(v)
        mask[b, :n] = 1.0
    return chars, buckets, mask


def make_batch(items: Sequence[tuple[TokenSeq, TokenSeq, np.ndarray, np.ndarray]], char_len: int) -> Batch:
    """Pad ``(query, code, ov_nl, ov_code)`` tuples into one batch."""
    if not items:
        raise ValueError("make_batch: no items")
    q, c, ovq, ovc = zip(*items)
    return Batch(*_pad_stack(q, ovq, char_len), *_pad_stack(c, ovc, char_len))


def shared_char_embed(nl_chars: np.ndarray, code_chars: np.ndarray, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Character embeddings for both sides, running the CNN once per distinct token."""
    CL = nl_chars.shape[-1]
    rows = np.concatenate([nl_chars.reshape(-1, CL), code_chars.reshape(-1, CL)])
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    table = char_embed(uniq, params)  # [U, d]
    n_nl = nl_chars.shape[0] * nl_chars.shape[1]
    return (
        embedding(table, inverse[:n_nl].reshape(nl_chars.shape[:-1])),
        embedding(table, inverse[n_nl:].reshape(code_chars.shape[:-1])),
    )


def forward(batch: Batch, params: ModelParams, training: bool = False, rng=None) -> Tensor:
    """Class logits [B, 2] for a padded batch."""
    nl_sem, code_sem = shared_char_embed(batch.nl_chars, batch.code_chars, params)
    nl_enc = encode(batch.nl_chars, batch.nl_buckets, params, "nl", batch.nl_mask, training, rng, nl_sem)
    code_enc = encode(batch.code_chars, batch.code_buckets, params, "code", batch.code_mask, training, rng, code_sem)
    nl_vec = pool_encoder(nl_enc, params, "nl", batch.nl_mask)
    code_vec = pool_encoder(code_enc, params, "code", batch.code_mask)
    cross_nl, cross_code = cross_attention_block(nl_enc, code_enc, params, batch.nl_mask, batch.code_mask)
    features = concat([nl_vec, code_vec, cross_nl, cross_code], axis=-1)
    return predict_logits(features, params, training, rng)


def describe(params: ModelParams) -> str:
    lines = [f"{name}\t{'x'.join(map(str, t.shape))}\t{t.size}" for name, t in params.items()]
    lines.append(f"total\t-\t{params.count()}")
    return "\n".join(lines) + "\n"
