from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import NonFiniteError
from .tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moment estimates per parameter name plus the shared step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[Parameter],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """
    Apply one bias-corrected Adam update in place.

    Parameters without an entry in ``grads`` are left untouched. Every gradient is
    checked before any parameter moves, so a non-finite gradient aborts the step
    with the model unchanged.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for param in params:
        grad = grads.get(param.name)
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {param.name}")

    state.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for param in params:
        grad = grads.get(param.name)
        if grad is None:
            continue
        m = state.m.get(param.name)
        v = state.v.get(param.name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[param.name], state.v[param.name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.data -= update.astype(param.dtype, copy=False)
    return state


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    total = 0.0
    for param in params:
        if param.grad is None:
            continue
        if not np.all(np.isfinite(param.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {param.name}")
        total += float(np.sum(np.square(param.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for param in params:
            if param.grad is not None:
                param.grad = (param.grad * scale).astype(param.dtype, copy=False)
    return norm


class Adam:
    """Stateful wrapper over ``adam_step`` for a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: Optional[float] = 1.0,
    ) -> None:
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState()
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> float:
        """Clip (when configured) and update; returns the pre-clip gradient norm."""
        norm = float("nan")
        if self.clip_norm is not None:
            norm = clip_grad_norm(self.params, self.clip_norm)
        grads = {p.name: p.grad for p in self.params if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps)
        self.logger.debug("adam step %s grad_norm=%.6g", self.state.step, norm)
        return norm
