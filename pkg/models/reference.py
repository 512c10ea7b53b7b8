"""
Literal loop implementations used as oracles by the test suite and ``selftest``.

Everything here works on plain float64 numpy arrays of a single (unbatched) edge
state and loops over i, l, j explicitly; nothing is shared with the batched code.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .attention import AblationMode


def softmax(values: np.ndarray) -> np.ndarray:
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


def attention_head(
    x: np.ndarray,
    head: Mapping[str, np.ndarray],
    allowed: np.ndarray,
    mode: AblationMode = AblationMode.BASE,
) -> np.ndarray:
    """x: (n, n, d); head: wq, bq, wk, bk, v1, b1, v2, b2; allowed: (n, n, n) as [i, l, j]."""
    n = x.shape[0]
    d_head = head["wq"].shape[1]
    out = np.zeros((n, n, d_head))
    for i in range(n):
        for j in range(n):
            pivots = [l for l in range(n) if allowed[i, l, j]]
            scores = []
            for l in pivots:
                q = x[i, l] @ head["wq"] + head["bq"]
                if mode == AblationMode.ATTENTION_ABLATION:
                    k = x[i, j] @ head["wk"] + head["bk"]
                else:
                    k = x[l, j] @ head["wk"] + head["bk"]
                scores.append(float(q @ k) / math.sqrt(d_head))
            weights = softmax(np.array(scores))
            for weight, l in zip(weights, pivots):
                value = x[i, l] @ head["v1"] + head["b1"]
                if mode != AblationMode.VALUE_ABLATION:
                    value = value * (x[l, j] @ head["v2"] + head["b2"])
                out[i, j] += weight * value
    return out


def split_heads(attn: Mapping[str, np.ndarray], num_heads: int) -> list[dict[str, np.ndarray]]:
    """Column blocks of fused (d, d) head matrices."""
    d = attn["wq"].shape[0]
    d_head = d // num_heads
    heads = []
    for h in range(num_heads):
        cols = slice(h * d_head, (h + 1) * d_head)
        heads.append(
            {
                name: attn[name][:, cols] if attn[name].ndim == 2 else attn[name][cols]
                for name in ("wq", "bq", "wk", "bk", "v1", "b1", "v2", "b2")
            }
        )
    return heads


def attention(
    x: np.ndarray,
    attn: Mapping[str, np.ndarray],
    num_heads: int,
    allowed: np.ndarray,
    mode: AblationMode = AblationMode.BASE,
) -> np.ndarray:
    heads = [attention_head(x, head, allowed, mode) for head in split_heads(attn, num_heads)]
    joined = np.concatenate(heads, axis=-1)
    return joined @ attn["wo"] + attn["bo"]


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    out = np.empty_like(x)
    for index in np.ndindex(x.shape[:-1]):
        row = x[index]
        mean = row.sum() / row.size
        variance = ((row - mean) ** 2).sum() / row.size
        out[index] = (row - mean) / math.sqrt(variance + eps) * gain + bias
    return out


def feed_forward(x: np.ndarray, layer: Mapping[str, np.ndarray]) -> np.ndarray:
    hidden = np.maximum(x @ layer["ffn.w1"] + layer["ffn.b1"], 0.0)
    return hidden @ layer["ffn.w2"] + layer["ffn.b2"]


def edge_layer(
    x: np.ndarray,
    layer: Mapping[str, np.ndarray],
    num_heads: int,
    allowed: np.ndarray,
    mode: AblationMode = AblationMode.BASE,
    ffn_residual: bool = False,
) -> np.ndarray:
    """``layer`` keys as produced by ``layer_arrays``."""
    attn = {name[len("attn."):]: value for name, value in layer.items() if name.startswith("attn.")}
    y = x + attention(layer_norm(x, layer["ln1.gain"], layer["ln1.bias"]), attn, num_heads, allowed, mode)
    out = feed_forward(layer_norm(y, layer["ln2.gain"], layer["ln2.bias"]), layer)
    return y + out if ffn_residual else out


def layer_arrays(layer) -> dict[str, np.ndarray]:
    """Parameter arrays of an ``EdgeLayerParams`` keyed by their name suffix (``attn.wq``, ``ffn.w1``...)."""
    arrays = {}
    for param in layer.parameters():
        # "<stack>.<index>.<weight>"
        arrays[param.name.split(".", 2)[2]] = np.array(param.data, dtype=np.float64)
    return arrays


def causal_allowed(n_enc: int, n_dec: int) -> np.ndarray:
    """Pivot rule enumerated case by case."""
    total = n_enc + n_dec

    def dec_index(position: int) -> float:
        return -math.inf if position < n_enc else float(position - n_enc)

    allowed = np.zeros((total, total, total), dtype=bool)
    for i in range(total):
        for j in range(total):
            horizon = max(dec_index(i), dec_index(j))
            for l in range(total):
                if l < n_enc:
                    allowed[i, l, j] = True
                else:
                    allowed[i, l, j] = dec_index(l) <= horizon
    return allowed
