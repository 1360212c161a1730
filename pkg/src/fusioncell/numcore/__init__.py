from .checkpoint import load_checkpoint, save_checkpoint
from .nn import LayerNorm, Linear, ParamStore
from .optim import AdamWState, adamw_step, clip_grads, grad_norm
from .tensor import (
    MASK_VALUE,
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    current_tape,
    dropout,
    gelu,
    index,
    layer_norm,
    masked_fill,
    matmul,
    mean,
    mul,
    permute,
    reshape,
    softmax,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "MASK_VALUE", "Tape", "Tensor", "add", "as_tensor", "concat", "current_tape",
    "dropout", "gelu", "index", "layer_norm", "masked_fill", "matmul", "mean", "mul",
    "permute", "reshape", "softmax", "sub", "transpose", "tsum",
    "AdamWState", "adamw_step", "clip_grads", "grad_norm",
    "LayerNorm", "Linear", "ParamStore",
    "load_checkpoint", "save_checkpoint",
]
