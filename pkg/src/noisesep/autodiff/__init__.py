"""Minimal reverse-mode differentiation over numpy arrays."""

from .tensor import (
    Graph,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    no_grad,
)
from . import ops
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Graph",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "is_grad_enabled",
    "no_grad",
    "ops",
    "GradCheckReport",
    "grad_check",
]
