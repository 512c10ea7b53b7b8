from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum

from engine import Parameter, Tensor
from engine.errors import DimensionError
from engine.functional import einsum, getitem, linear, mul, reshape, softmax_masked

from .masks import PivotMask


class AblationMode(str, Enum):
    BASE = "base"
    VALUE_ABLATION = "value_ablation"
    ATTENTION_ABLATION = "attention_ablation"


@dataclass
class HeadParams:
    """Query/key/value maps of one head; each matrix is (d, d_head)."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    v1: Tensor
    b1: Tensor
    v2: Tensor
    b2: Tensor

    @property
    def d_head(self) -> int:
        return self.wq.shape[1]


@dataclass
class TriAttnParams:
    """
    All heads of one triangular attention block.

    Head matrices are stored fused as (d, d); head ``h`` owns the column block
    ``[h * d_head, (h + 1) * d_head)`` of each of them. ``wo``/``bo`` project the
    concatenated head outputs.
    """

    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    v1: Parameter
    b1: Parameter
    v2: Parameter
    b2: Parameter
    wo: Parameter
    bo: Parameter
    num_heads: int

    def __post_init__(self) -> None:
        d = self.wq.shape[0]
        if self.num_heads < 1 or d % self.num_heads:
            raise DimensionError(f"{self.num_heads} heads do not divide width {d}")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.d // self.num_heads

    def head(self, h: int) -> HeadParams:
        """Differentiable view of head ``h``'s column blocks."""
        if not 0 <= h < self.num_heads:
            raise IndexError(f"head {h} out of range for {self.num_heads} heads")
        cols = slice(h * self.d_head, (h + 1) * self.d_head)
        return HeadParams(
            wq=getitem(self.wq, (slice(None), cols)),
            bq=getitem(self.bq, cols),
            wk=getitem(self.wk, (slice(None), cols)),
            bk=getitem(self.bk, cols),
            v1=getitem(self.v1, (slice(None), cols)),
            b1=getitem(self.b1, cols),
            v2=getitem(self.v2, (slice(None), cols)),
            b2=getitem(self.b2, cols),
        )

    @property
    def heads(self) -> list[HeadParams]:
        return [self.head(h) for h in range(self.num_heads)]

    def parameters(self) -> list[Parameter]:
        return [
            getattr(self, f.name)
            for f in fields(self)
            if isinstance(getattr(self, f.name), Parameter)
        ]


def _check_state(x: Tensor, d: int, mask: PivotMask) -> None:
    if x.ndim != 4 or x.shape[1] != x.shape[2]:
        raise DimensionError(f"edge state must be (batch, n, n, d), got {x.shape}")
    if x.shape[3] != d:
        raise DimensionError(f"edge state width {x.shape[3]} does not match parameters ({d})")
    if mask.n != x.shape[1]:
        raise DimensionError(f"pivot mask over {mask.n} nodes for a state over {x.shape[1]}")
    if mask.allowed.ndim == 4 and mask.allowed.shape[0] != x.shape[0]:
        raise DimensionError("batched pivot mask does not match the state's batch size")


def triangular_attention_weights(
    x: Tensor, head: HeadParams, mask: PivotMask, mode: AblationMode = AblationMode.BASE
) -> Tensor:
    """Attention weights alpha laid out as (batch, i, l, j); normalized over the pivot axis l."""
    _check_state(x, head.wq.shape[0], mask)
    q = linear(x, head.wq, head.bq)
    k = linear(x, head.wk, head.bk)
    if AblationMode(mode) is AblationMode.ATTENTION_ABLATION:
        # Key taken from the edge being updated, so it does not vary with the pivot.
        scores = einsum("bile,bije->bilj", q, k)
    else:
        scores = einsum("bile,blje->bilj", q, k)
    scores = mul(scores, 1.0 / math.sqrt(head.d_head))
    allowed = mask.allowed if mask.allowed.ndim == 4 else mask.allowed[None]
    return softmax_masked(scores, axis=2, mask=allowed)


def triangular_attention_head(
    x: Tensor, head: HeadParams, mask: PivotMask, mode: AblationMode = AblationMode.BASE
) -> Tensor:
    """One head's update sum_l alpha_ilj * v_ilj, shape (batch, n, n, d_head), before W^o."""
    alpha = triangular_attention_weights(x, head, mask, mode)
    v1 = linear(x, head.v1, head.b1)
    if AblationMode(mode) is AblationMode.VALUE_ABLATION:
        return einsum("bilj,bile->bije", alpha, v1)
    v2 = linear(x, head.v2, head.b2)
    return einsum("bilj,bile,blje->bije", alpha, v1, v2)


def triangular_attention(
    x: Tensor, p: TriAttnParams, mask: PivotMask, mode: AblationMode = AblationMode.BASE
) -> Tensor:
    """
    Multi-head triangular attention with all heads batched in one contraction.

    Equivalent to running ``triangular_attention_head`` per head, concatenating on
    the feature axis and applying ``wo``.
    """
    _check_state(x, p.d, mask)
    mode = AblationMode(mode)
    batch, n = x.shape[0], x.shape[1]
    split = (batch, n, n, p.num_heads, p.d_head)

    q = reshape(linear(x, p.wq, p.bq), split)
    k = reshape(linear(x, p.wk, p.bk), split)
    if mode is AblationMode.ATTENTION_ABLATION:
        scores = einsum("bilhe,bijhe->bhilj", q, k)
    else:
        scores = einsum("bilhe,bljhe->bhilj", q, k)
    scores = mul(scores, 1.0 / math.sqrt(p.d_head))
    alpha = softmax_masked(scores, axis=3, mask=mask.for_scores())

    v1 = reshape(linear(x, p.v1, p.b1), split)
    if mode is AblationMode.VALUE_ABLATION:
        heads = einsum("bhilj,bilhe->bijhe", alpha, v1)
    else:
        v2 = reshape(linear(x, p.v2, p.b2), split)
        heads = einsum("bhilj,bilhe,bljhe->bijhe", alpha, v1, v2)
    return linear(reshape(heads, (batch, n, n, p.d)), p.wo, p.bo)
