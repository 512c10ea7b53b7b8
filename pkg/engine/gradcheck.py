from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check_by_parameter(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """
    Compare reverse-mode gradients of a scalar ``f()`` against central differences.

    Returns the worst relative error per parameter, keyed by parameter name
    (``param<i>`` for unnamed tensors). Parameters must be float64 leaves.
    """
    for param in params:
        if param.dtype != np.float64:
            raise ValueError("gradient checks need float64 parameters")

    for param in params:
        param.zero_grad()
    loss = f()
    if loss.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {loss.shape}")
    if loss.requires_grad:
        loss.backward()
    analytic = [
        param.grad.copy() if param.grad is not None else np.zeros_like(param.data)
        for param in params
    ]

    report: dict[str, float] = {}
    with no_grad():
        for position, (param, grad) in enumerate(zip(params, analytic)):
            name = getattr(param, "name", f"param{position}")
            worst = 0.0
            for index in np.ndindex(param.shape):
                original = param.data[index]
                param.data[index] = original + h
                plus = f().item()
                param.data[index] = original - h
                minus = f().item()
                param.data[index] = original
                numeric = (plus - minus) / (2.0 * h)
                worst = max(worst, _relative_error(float(grad[index]), numeric))
            report[name] = worst
    logger.debug("grad_check worst per parameter: %s", report)
    return report


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max over all parameter entries of |analytic - central| / max(1, |analytic|, |central|)."""
    report = grad_check_by_parameter(f, params, h)
    return max(report.values(), default=0.0)
