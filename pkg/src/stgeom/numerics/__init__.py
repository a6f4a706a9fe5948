"""Minimal differentiable tensor core (float64, reverse mode)."""
from .container import (
    ContainerError,
    CorruptContainerError,
    VersionMismatchError,
    load as load_container,
    save as save_container,
)
from .functional import gru_step, layer_norm, linear, multi_head_attention, silu
from .gradcheck import NonDeterministicLoss, finite_diff_check
from .optim import OptimState, adamw_step
from .tensor import (
    DegenerateAttentionError,
    GradTape,
    NonFiniteError,
    Tensor,
    as_tensor,
    masked_softmax,
    no_grad,
)

__all__ = [
    "ContainerError", "CorruptContainerError", "VersionMismatchError",
    "load_container", "save_container", "gru_step", "layer_norm", "linear",
    "multi_head_attention", "silu", "NonDeterministicLoss", "finite_diff_check",
    "OptimState", "adamw_step", "DegenerateAttentionError", "GradTape",
    "NonFiniteError", "Tensor", "as_tensor", "masked_softmax", "no_grad",
]
