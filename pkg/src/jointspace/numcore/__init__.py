"""Float64 tensors, reverse-mode gradients, AdamW and tensor persistence."""

from .optim import AdamWState, adamw_step
from .rng import derive
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    diagonal,
    finite_diff_grad,
    l2_normalize,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    max_,
    mean,
    mul,
    neg,
    normalize_rows,
    relu,
    scale,
    sum_,
    take_rows,
    transpose,
    zero_grad,
)

__all__ = [
    "AdamWState", "Tensor", "add", "adamw_step", "as_tensor", "backward", "derive",
    "diagonal", "finite_diff_grad", "l2_normalize", "layer_norm", "linear", "log_softmax",
    "matmul", "max_", "mean", "mul", "neg", "normalize_rows", "relu", "scale", "sum_",
    "take_rows", "transpose", "zero_grad",
]
