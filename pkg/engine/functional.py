from __future__ import annotations

import logging
import string
from functools import lru_cache
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DegenerateMaskError, DimensionError, SpecParseError, TargetIndexError
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

# Additive penalty for masked softmax positions; masked outputs are then forced to 0.
MASK_PENALTY = -1e9
LAYER_NORM_EPS = 1e-5


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    """Wrap a constant so it can enter the graph, matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype if like is not None else None))


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(*shapes: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {shapes}") from exc


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_shape(a.shape, b.shape)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad: np.ndarray):
        shape_a, shape_b = self.shapes
        return (
            unbroadcast(grad, shape_a) if self.needs_grad(0) else None,
            unbroadcast(grad, shape_b) if self.needs_grad(1) else None,
        )


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray):
        return (
            unbroadcast(grad * self.b, self.a.shape) if self.needs_grad(0) else None,
            unbroadcast(grad * self.a, self.b.shape) if self.needs_grad(1) else None,
        )


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray):
        return (-grad,)


class ReLU(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.positive = a > 0
        return np.where(self.positive, a, np.zeros((), dtype=a.dtype))

    def backward(self, grad: np.ndarray):
        # Subgradient at 0 is 0.
        return (np.where(self.positive, grad, np.zeros((), dtype=grad.dtype)),)


@lru_cache(maxsize=256)
def parse_einsum_spec(spec: str, num_operands: int) -> tuple[tuple[str, ...], str]:
    """
    Split an explicit index signature such as ``"ild,ldj->ij"`` into operand and output labels.

    Labels are single ASCII letters; an operand may not repeat a label and every
    output label must occur in some operand.
    """
    if not isinstance(spec, str) or spec.count("->") != 1:
        raise SpecParseError(f"index signature needs exactly one '->': {spec!r}")
    lhs, output = (part.replace(" ", "") for part in spec.split("->"))
    inputs = tuple(lhs.split(","))
    if len(inputs) != num_operands:
        raise SpecParseError(
            f"index signature {spec!r} names {len(inputs)} operands, got {num_operands}"
        )
    for subs in inputs + (output,):
        if any(ch not in string.ascii_letters for ch in subs):
            raise SpecParseError(f"index signature {spec!r} has a non-letter label")
        if len(set(subs)) != len(subs):
            raise SpecParseError(f"index signature {spec!r} repeats a label in {subs!r}")
    seen = set("".join(inputs))
    missing = [ch for ch in output if ch not in seen]
    if missing:
        raise SpecParseError(f"output labels {missing} of {spec!r} appear in no operand")
    return inputs, output


def _check_extents(inputs: Sequence[str], arrays: Sequence[np.ndarray], spec: str) -> None:
    extents: dict[str, int] = {}
    for subs, array in zip(inputs, arrays):
        if len(subs) != array.ndim:
            raise SpecParseError(
                f"operand with shape {array.shape} does not match labels {subs!r} in {spec!r}"
            )
        for label, extent in zip(subs, array.shape):
            if extents.setdefault(label, extent) != extent:
                raise DimensionError(
                    f"axis {label!r} has extents {extents[label]} and {extent} in {spec!r}"
                )


class Einsum(Function):
    def forward(self, *arrays: np.ndarray, spec: str) -> np.ndarray:
        inputs, output = parse_einsum_spec(spec, len(arrays))
        _check_extents(inputs, arrays, spec)
        self.inputs, self.output, self.arrays = inputs, output, arrays
        return np.einsum(f"{','.join(inputs)}->{output}", *arrays, optimize=True)

    def backward(self, grad: np.ndarray):
        grads: list[Optional[np.ndarray]] = []
        for k, (subs, array) in enumerate(zip(self.inputs, self.arrays)):
            if not self.needs_grad(k):
                grads.append(None)
                continue
            others = [i for i in range(len(self.arrays)) if i != k]
            available = set(self.output).union(*(self.inputs[i] for i in others))
            kept = "".join(ch for ch in subs if ch in available)
            operand_subs = [self.output] + [self.inputs[i] for i in others]
            partial = np.einsum(
                f"{','.join(operand_subs)}->{kept}",
                grad,
                *(self.arrays[i] for i in others),
                optimize=True,
            )
            if len(kept) != len(subs):
                # Labels private to this operand were summed out in forward.
                expanded = partial.reshape(
                    [array.shape[i] if ch in available else 1 for i, ch in enumerate(subs)]
                )
                partial = np.broadcast_to(expanded, array.shape).copy()
            grads.append(partial)
        return tuple(grads)


class SoftmaxMasked(Function):
    def forward(
        self, scores: np.ndarray, *, axis: int, mask: Optional[np.ndarray]
    ) -> np.ndarray:
        if mask is None:
            mask = np.ones(scores.shape, dtype=bool)
        try:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        except ValueError as exc:
            raise DimensionError(
                f"mask of shape {np.shape(mask)} does not broadcast to {scores.shape}"
            ) from exc
        if not mask.any(axis=axis).all():
            raise DegenerateMaskError("softmax slice with every position masked")
        penalty = np.where(mask, 0.0, MASK_PENALTY).astype(scores.dtype)
        shifted = scores + penalty
        shifted = shifted - shifted.max(axis=axis, keepdims=True)
        weights = np.where(mask, np.exp(shifted), np.zeros((), dtype=scores.dtype))
        weights = weights / weights.sum(axis=axis, keepdims=True)
        self.axis, self.weights = axis, weights
        return weights

    def backward(self, grad: np.ndarray):
        p = self.weights
        return (p * (grad - (grad * p).sum(axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
        d = x.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise DimensionError(
                f"layer_norm over {d} features got gain {gain.shape} and bias {bias.shape}"
            )
        centered = x - x.mean(axis=-1, keepdims=True)
        variance = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(variance + LAYER_NORM_EPS)
        self.normalized = centered * self.inv_std
        self.gain = gain
        return self.normalized * gain + bias

    def backward(self, grad: np.ndarray):
        d = grad.shape[-1]
        xhat = self.normalized
        grad_x = None
        if self.needs_grad(0):
            g = grad * self.gain
            grad_x = self.inv_std * (
                g
                - g.mean(axis=-1, keepdims=True)
                - xhat * (g * xhat).mean(axis=-1, keepdims=True)
            )
        grad_gain = (grad * xhat).reshape(-1, d).sum(axis=0) if self.needs_grad(1) else None
        grad_bias = grad.reshape(-1, d).sum(axis=0) if self.needs_grad(2) else None
        return grad_x, grad_gain, grad_bias


class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        if w.ndim != 2 or x.shape[-1] != w.shape[0]:
            raise DimensionError(f"linear maps {w.shape} cannot take input {x.shape}")
        if b.shape != (w.shape[1],):
            raise DimensionError(f"bias {b.shape} does not match weight {w.shape}")
        self.x, self.w = x, w
        return np.matmul(x, w) + b

    def backward(self, grad: np.ndarray):
        d_in, d_out = self.w.shape
        flat_grad = grad.reshape(-1, d_out)
        return (
            np.matmul(grad, self.w.T) if self.needs_grad(0) else None,
            self.x.reshape(-1, d_in).T @ flat_grad if self.needs_grad(1) else None,
            flat_grad.sum(axis=0) if self.needs_grad(2) else None,
        )


class CrossEntropy(Function):
    def forward(
        self, logits: np.ndarray, *, target: np.ndarray, ignore_index: Optional[int]
    ) -> np.ndarray:
        target = np.asarray(target)
        if target.shape != logits.shape[:-1]:
            raise DimensionError(
                f"targets of shape {target.shape} do not match logits {logits.shape}"
            )
        num_classes = logits.shape[-1]
        flat_target = target.reshape(-1).astype(np.int64)
        valid = (
            np.ones(flat_target.shape, dtype=bool)
            if ignore_index is None
            else flat_target != ignore_index
        )
        if np.any((flat_target[valid] < 0) | (flat_target[valid] >= num_classes)):
            raise TargetIndexError(f"target outside [0, {num_classes})")
        count = int(valid.sum())
        if count == 0:
            raise ValueError("cross_entropy needs at least one non-ignored target")
        flat = logits.reshape(-1, num_classes)
        shifted = flat - flat.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        safe_target = np.where(valid, flat_target, 0)
        rows = np.arange(flat.shape[0])
        picked = log_probs[rows, safe_target]
        self.log_probs, self.safe_target, self.valid, self.count = (
            log_probs,
            safe_target,
            valid,
            count,
        )
        self.shape = logits.shape
        return np.asarray(-(picked * valid).sum() / count, dtype=logits.dtype)

    def backward(self, grad: np.ndarray):
        probs = np.exp(self.log_probs)
        probs[np.arange(probs.shape[0]), self.safe_target] -= 1.0
        probs *= self.valid[:, None]
        return ((probs * (grad / self.count)).reshape(self.shape),)


class GetItem(Function):
    def forward(self, x: np.ndarray, *, index: Any) -> np.ndarray:
        self.index, self.shape, self.dtype = index, x.shape, x.dtype
        try:
            return np.array(x[index], copy=True)
        except IndexError as exc:
            raise TargetIndexError(str(exc)) from exc

    def backward(self, grad: np.ndarray):
        full = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(full, self.index, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        try:
            out = np.concatenate(arrays, axis=axis)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return out

    def backward(self, grad: np.ndarray):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Reshape(Function):
    def forward(self, x: np.ndarray, *, shape: tuple[int, ...]) -> np.ndarray:
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.shape),)


class Sum(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray):
        return (np.broadcast_to(grad, self.shape).copy(),)


def add(a: Any, b: Any) -> Tensor:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    return Add.apply(a, as_tensor(b, a))


def sub(a: Any, b: Any) -> Tensor:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    return Add.apply(a, Neg.apply(as_tensor(b, a)))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def mul(a: Any, b: Any) -> Tensor:
    if not isinstance(a, Tensor):
        a = as_tensor(a, b)
    return Mul.apply(a, as_tensor(b, a))


elementwise_mul = mul


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def einsum(spec: str, *operands: Tensor) -> Tensor:
    """Differentiable generalized contraction over any number of operands."""
    return Einsum.apply(*operands, spec=spec)


def contract(a: Tensor, b: Tensor, spec: str) -> Tensor:
    """Two-operand tensor contraction, e.g. ``contract(a, b, "ild,ldj->ij")``."""
    return Einsum.apply(a, b, spec=spec)


def softmax_masked(
    scores: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get weight exactly 0."""
    return SoftmaxMasked.apply(scores, axis=axis, mask=mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return LayerNorm.apply(x, gain, bias)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return Linear.apply(x, w, b)


def cross_entropy(
    logits: Tensor, target: Any, ignore_index: Optional[int] = None
) -> Tensor:
    """Mean negative log-likelihood of ``target`` over non-ignored positions."""
    return CrossEntropy.apply(logits, target=np.asarray(target), ignore_index=ignore_index)


def getitem(x: Tensor, index: Any) -> Tensor:
    return GetItem.apply(x, index=index)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def reduce_sum(x: Tensor) -> Tensor:
    return Sum.apply(x)
