from __future__ import annotations

import logging
import threading
from abc import ABC, abstractmethod
from contextlib import contextmanager
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from .errors import NonFiniteError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Grad recording and anomaly checks are per thread.
_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "grad_enabled", True)


def is_anomaly_detection_enabled() -> bool:
    return getattr(_mode, "detect_anomaly", False)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread (inference, evaluation, benchmarks)."""
    previous = is_grad_enabled()
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = previous


@contextmanager
def detect_anomaly() -> Iterator[None]:
    """Check every forward output for NaN/Inf and raise NonFiniteError naming the op."""
    previous = is_anomaly_detection_enabled()
    _mode.detect_anomaly = True
    try:
        yield
    finally:
        _mode.detect_anomaly = previous


def _as_float_array(data: Any, dtype: Any = None) -> np.ndarray:
    array = np.asarray(data, dtype=dtype)
    if array.dtype not in FLOAT_DTYPES:
        array = array.astype(np.float32)
    return array


class Tensor:
    """
    Dense n-dimensional array that records the operations producing it.

    Calling ``backward`` on a scalar result walks the recorded graph in reverse
    and accumulates ``grad`` on every tensor created with ``requires_grad``.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        _ctx: Optional["Function"] = None,
    ) -> None:
        self.data = _as_float_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad})"
        )

    def _topological_order(self) -> list["Tensor"]:
        # iterative post-order
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() needs an explicit grad for non-scalar tensors")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"grad shape {grad.shape} does not match tensor shape {self.shape}")

        order = self._topological_order()
        logger.debug("backward over %s recorded tensors", len(order))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            ctx = node._ctx
            if ctx is None or node.grad is None:
                continue
            parent_grads = ctx.backward(node.grad)
            for parent, parent_grad in zip(ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = np.asarray(parent_grad, dtype=parent.dtype)
                if parent_grad.shape != parent.shape:
                    raise RuntimeError(
                        f"{type(ctx).__name__} returned grad of shape {parent_grad.shape} "
                        f"for input of shape {parent.shape}"
                    )
                parent.grad = (
                    parent_grad if parent.grad is None else parent.grad + parent_grad
                )
            # Interior gradients are not kept once propagated.
            node.grad = None

    # Operator sugar; the differentiable kernels live in engine.functional.
    def __add__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from . import functional

        return functional.mul(other, self)

    def __neg__(self) -> "Tensor":
        from . import functional

        return functional.neg(self)

    def __getitem__(self, index: Any) -> "Tensor":
        from . import functional

        return functional.getitem(self, index)


class Parameter(Tensor):
    """A named leaf tensor that always requires grad."""

    def __init__(self, name: str, data: Any, dtype: Any = None) -> None:
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Function(ABC):
    """
    One differentiable operation.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient (or None) per input tensor.
    """

    def __init__(self) -> None:
        self.parents: tuple[Tensor, ...] = ()
        self._needs_grad: tuple[bool, ...] = ()

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        fn._needs_grad = tuple(t.requires_grad for t in inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if is_anomaly_detection_enabled() and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        requires_grad = is_grad_enabled() and any(fn._needs_grad)
        if requires_grad:
            fn.parents = inputs
        return Tensor(out, requires_grad=requires_grad, _ctx=fn if requires_grad else None)

    def needs_grad(self, position: int) -> bool:
        return self._needs_grad[position]

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        """Compute the output array."""

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        """Return the gradient for each input, in input order."""
