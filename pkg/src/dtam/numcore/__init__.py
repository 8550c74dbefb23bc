"""Differentiable numeric kernel: tensors, reverse-mode gradients, probabilistic primitives."""

from dtam.numcore.tensor import (
    Tensor,
    as_tensor,
    concat,
    clip,
    clip_min,
    debug_checks,
    dropout,
    exp,
    gather_rows,
    grad_enabled,
    log,
    no_grad,
    relu,
    set_debug_checks,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
    tile_rows,
    zeros,
)
from dtam.numcore.nn import (
    GruParams,
    LstmParams,
    MlpParams,
    glorot_uniform,
    gru_init,
    gru_sequence,
    lstm_init,
    lstm_sequence,
    mlp_apply,
    mlp_init,
    recurrence_hidden_size,
    recurrence_sequence,
)
from dtam.numcore.gaussian import DiagGaussian, gaussian_reparam_sample, kl_diag_gaussian
from dtam.numcore.gradcheck import GradCheckReport, grad_check
from dtam.numcore.blob import load_tensor_blob, save_tensor_blob

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "clip",
    "clip_min",
    "debug_checks",
    "dropout",
    "exp",
    "gather_rows",
    "grad_enabled",
    "log",
    "no_grad",
    "relu",
    "set_debug_checks",
    "sigmoid",
    "softmax",
    "sqrt",
    "stack",
    "tanh",
    "tile_rows",
    "zeros",
    "GruParams",
    "LstmParams",
    "MlpParams",
    "glorot_uniform",
    "gru_init",
    "gru_sequence",
    "lstm_init",
    "lstm_sequence",
    "mlp_apply",
    "mlp_init",
    "recurrence_hidden_size",
    "recurrence_sequence",
    "DiagGaussian",
    "gaussian_reparam_sample",
    "kl_diag_gaussian",
    "GradCheckReport",
    "grad_check",
    "load_tensor_blob",
    "save_tensor_blob",
]
