from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from engine import Parameter, Tensor
from engine.functional import add, layer_norm, linear, relu

from .attention import AblationMode, TriAttnParams, triangular_attention
from .masks import PivotMask

logger = logging.getLogger(__name__)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, int], dtype: Any) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class EdgeLayerParams:
    """Weights of one edge transformer layer; the FFN hidden width is 4 * d."""

    attn: TriAttnParams
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln1_gain: Parameter
    ln1_bias: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter

    @classmethod
    def initialize(
        cls,
        prefix: str,
        d: int,
        heads: int,
        rng: np.random.Generator,
        dtype: Any = np.float32,
    ) -> "EdgeLayerParams":
        """Xavier-uniform matrices, zero biases, unit layer-norm gains."""

        def matrix(name: str, rows: int, cols: int) -> Parameter:
            return Parameter(f"{prefix}.{name}", xavier_uniform(rng, (rows, cols), dtype))

        def vector(name: str, size: int, value: float = 0.0) -> Parameter:
            return Parameter(f"{prefix}.{name}", np.full(size, value, dtype=dtype))

        attn = TriAttnParams(
            wq=matrix("attn.wq", d, d),
            bq=vector("attn.bq", d),
            wk=matrix("attn.wk", d, d),
            bk=vector("attn.bk", d),
            v1=matrix("attn.v1", d, d),
            b1=vector("attn.b1", d),
            v2=matrix("attn.v2", d, d),
            b2=vector("attn.b2", d),
            wo=matrix("attn.wo", d, d),
            bo=vector("attn.bo", d),
            num_heads=heads,
        )
        return cls(
            attn=attn,
            ffn_w1=matrix("ffn.w1", d, 4 * d),
            ffn_b1=vector("ffn.b1", 4 * d),
            ffn_w2=matrix("ffn.w2", 4 * d, d),
            ffn_b2=vector("ffn.b2", d),
            ln1_gain=vector("ln1.gain", d, 1.0),
            ln1_bias=vector("ln1.bias", d),
            ln2_gain=vector("ln2.gain", d, 1.0),
            ln2_bias=vector("ln2.bias", d),
        )

    def parameters(self) -> list[Parameter]:
        return self.attn.parameters() + [
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
            self.ln1_gain,
            self.ln1_bias,
            self.ln2_gain,
            self.ln2_bias,
        ]


def feed_forward(x: Tensor, p: EdgeLayerParams) -> Tensor:
    """Per-edge two-layer relu network."""
    return linear(relu(linear(x, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2)


def edge_layer(
    x: Tensor,
    p: EdgeLayerParams,
    mask: PivotMask,
    mode: AblationMode = AblationMode.BASE,
    ffn_residual: bool = False,
) -> Tensor:
    """
    One edge transformer layer.

    ``ffn_residual=False``: X' = FFN(LN2(X + A(LN1(X)))), the layer exactly as printed.
    ``ffn_residual=True``:  X' = Y + FFN(LN2(Y)) with Y = X + A(LN1(X)).
    """
    attended = triangular_attention(layer_norm(x, p.ln1_gain, p.ln1_bias), p.attn, mask, mode)
    y = add(x, attended)
    out = feed_forward(layer_norm(y, p.ln2_gain, p.ln2_bias), p)
    if ffn_residual:
        out = add(y, out)
    return out
