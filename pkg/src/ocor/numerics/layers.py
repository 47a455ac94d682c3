"""Layer primitives built on the autodiff ops."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, broadcast_to, concat, matmul, mul, normalize, reshape, unfold

LN_EPS = 1e-5

ZERO_PAD = "zero"
VECTOR_PAD = "special-vector"
NO_PAD = "none"


def linear(x, weight, bias=None) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    else:
        out = matmul(x, weight)
    return out if bias is None else out + bias


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != as_tensor(gain).shape[-1]:
        raise ValueError(f"layer_norm: last extent {x.shape[-1]} != gain size {as_tensor(gain).shape[-1]}")
    return normalize(x, eps) * gain + bias


def conv1d(x, kernel, bias=None, padding: str = ZERO_PAD, pad_vector=None) -> Tensor:
    """1-D convolution along axis -2 of ``x`` ([..., L, d_in]).

    ``kernel`` is [k, d_in, d_out].  Output row ``i`` is the affine map of the
    window ``x[i-w .. i+w]`` with ``w = (k-1)/2``.  ``zero`` and
    ``special-vector`` padding keep the length (odd ``k`` only); ``none``
    gives ``L-k+1`` rows.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    k, d_in, d_out = kernel.shape
    if x.shape[-1] != d_in:
        raise ValueError(f"conv1d: input width {x.shape[-1]} != kernel input width {d_in}")
    if padding != NO_PAD:
        if k % 2 == 0:
            raise ValueError(f"conv1d: length-preserving padding needs an odd kernel, got k={k}")
        w = (k - 1) // 2
        if w:
            edge_shape = x.shape[:-2] + (w, d_in)
            if padding == ZERO_PAD:
                edge = Tensor(np.zeros(edge_shape, dtype=x.dtype))
            elif padding == VECTOR_PAD:
                if pad_vector is None:
                    raise ValueError("conv1d: special-vector padding needs pad_vector")
                edge = broadcast_to(pad_vector, edge_shape)
            else:
                raise ValueError(f"conv1d: unknown padding {padding!r}")
            x = concat([edge, x, edge], axis=-2)
    windows = unfold(x, k)  # [..., L', k, d_in]
    flat = reshape(windows, windows.shape[:-2] + (k * d_in,))
    out = matmul(flat, reshape(kernel, (k * d_in, d_out)))
    return out if bias is None else out + bias


def dropout(x, rate: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout; ``seed`` may be an int or a numpy Generator."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, keep)
