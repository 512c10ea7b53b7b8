from .errors import (
    CapacityError,
    DegenerateMaskError,
    DimensionError,
    EdgeTransformerError,
    NonFiniteError,
    SpecParseError,
    TargetIndexError,
)
from .gradcheck import grad_check, grad_check_by_parameter
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .tensor import Function, Parameter, Tensor, detect_anomaly, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "CapacityError",
    "DegenerateMaskError",
    "DimensionError",
    "EdgeTransformerError",
    "Function",
    "NonFiniteError",
    "Parameter",
    "SpecParseError",
    "TargetIndexError",
    "Tensor",
    "adam_step",
    "clip_grad_norm",
    "detect_anomaly",
    "grad_check",
    "grad_check_by_parameter",
    "no_grad",
]
