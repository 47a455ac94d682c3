from .checkpoint import CheckpointError, config_hash, load_checkpoint, save_checkpoint
from .layers import NO_PAD, VECTOR_PAD, ZERO_PAD, conv1d, dropout, layer_norm, linear
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clip_min,
    concat,
    div,
    embedding,
    exp,
    gelu,
    getitem,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    normalize,
    power,
    reshape,
    softmax,
    stack,
    sub,
    swapaxes,
    tanh,
    tmax,
    transpose,
    tsum,
    unbroadcast,
    unfold,
)


def backward(loss: Tensor) -> None:
    loss.backward()
