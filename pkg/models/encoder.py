from __future__ import annotations

import logging
from typing import Any, Optional, Sequence

import numpy as np

from engine import Parameter, Tensor
from engine.errors import DimensionError, TargetIndexError
from engine.functional import cross_entropy, getitem, linear, mul

from .config import ModelConfig
from .inputs import graph_init_batch
from .layers import EdgeLayerParams, edge_layer, xavier_uniform
from .masks import PivotMask, edge_mask, full_pivot_mask, pivot_mask_from_real, real_positions

logger = logging.getLogger(__name__)


class EdgeStack:
    """
    L edge layers sharing one parameter set (tied) or owning one set each (untied).
    Parameter names carry the layer index: ``<prefix>.<index>.<weight>``.
    """

    def __init__(
        self, prefix: str, config: ModelConfig, rng: np.random.Generator, dtype: Any
    ) -> None:
        self.num_layers = config.num_layers
        self.tied = config.tied
        self.mode = config.mode
        self.ffn_residual = config.ffn_residual
        self.layers = [
            EdgeLayerParams.initialize(f"{prefix}.{index}", config.d, config.heads, rng, dtype)
            for index in range(config.num_layer_params)
        ]

    def layer_for(self, depth: int) -> EdgeLayerParams:
        return self.layers[0] if self.tied else self.layers[depth]

    def parameters(self) -> list[Parameter]:
        return [param for layer in self.layers for param in layer.parameters()]


def encode(
    x0: Tensor,
    stack: EdgeStack,
    mask: PivotMask,
    edge_weights: Optional[Tensor] = None,
) -> Tensor:
    """
    Apply the stack's L layers to ``x0``; L = 0 returns ``x0`` unchanged.

    ``edge_weights`` (batch, n, n, 1) zeroes padded edges after every layer.
    """
    x = x0
    for depth in range(stack.num_layers):
        x = edge_layer(x, stack.layer_for(depth), mask, stack.mode, stack.ffn_residual)
        if edge_weights is not None:
            x = mul(x, edge_weights)
    return x


def classify_query_edge(
    x: Tensor, query: Sequence[int] | np.ndarray, head_weight: Tensor, head_bias: Tensor
) -> Tensor:
    """Logits (batch, C) read from the final state of each row's query edge."""
    query = np.asarray(query, dtype=np.int64)
    if query.ndim == 1:
        query = query[None]
    batch, n = x.shape[0], x.shape[1]
    if query.shape != (batch, 2):
        raise DimensionError(f"queries must be (batch, 2), got {query.shape}")
    if np.any((query < 0) | (query >= n)):
        raise TargetIndexError(f"query edge outside a graph of {n} nodes")
    selected = getitem(x, (np.arange(batch), query[:, 0], query[:, 1]))
    return linear(selected, head_weight, head_bias)


def edge_logits(x: Tensor, head_weight: Tensor, head_bias: Tensor) -> Tensor:
    """Per-edge logits (batch, n, n, C)."""
    return linear(x, head_weight, head_bias)


def edge_cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Cross-entropy over every labeled edge; edges marked ``ignore_index`` carry no loss."""
    return cross_entropy(logits, targets, ignore_index=ignore_index)


def padding_weights(real: np.ndarray, dtype: Any) -> Tensor:
    """(batch, n, n, 1) constant: 1 on edges between real nodes, 0 elsewhere."""
    return Tensor(edge_mask(real)[..., None].astype(dtype))


class EncoderModel:
    """Graph encoder with a query-edge classification head."""

    kind = "encoder"

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        if config.num_edge_labels < 1 or config.num_output_labels < 1:
            raise ValueError("encoder models need num_edge_labels and num_output_labels >= 1")
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        rng = np.random.default_rng(seed)
        d = config.d
        self.edge_label_table = Parameter(
            "embeddings.edge_labels",
            xavier_uniform(rng, (config.num_edge_labels + 1, d), self.dtype),
        )
        self.stack = EdgeStack("layers", config, rng, self.dtype)
        self.head_weight = Parameter(
            "head.weight", xavier_uniform(rng, (d, config.num_output_labels), self.dtype)
        )
        self.head_bias = Parameter(
            "head.bias", np.zeros(config.num_output_labels, dtype=self.dtype)
        )
        self.logger.debug(
            "built encoder: %s parameter tensors, tied=%s, mode=%s",
            len(self.parameters()),
            config.tied,
            config.mode.value,
        )

    def parameters(self) -> list[Parameter]:
        return [self.edge_label_table, *self.stack.parameters(), self.head_weight, self.head_bias]

    def named_parameters(self) -> dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}

    def encode_graphs(
        self, label_ids: np.ndarray, lengths: Optional[Sequence[int]] = None
    ) -> Tensor:
        """Final edge states for a (batch, n, n) batch of label rows; ``lengths`` marks padding."""
        x0 = graph_init_batch(self.edge_label_table, label_ids)
        n = x0.shape[1]
        if lengths is None:
            return encode(x0, self.stack, full_pivot_mask(n))
        real = real_positions(n, lengths)
        weights = padding_weights(real, self.dtype)
        return encode(mul(x0, weights), self.stack, pivot_mask_from_real(real), weights)

    def forward(
        self,
        label_ids: np.ndarray,
        queries: np.ndarray,
        lengths: Optional[Sequence[int]] = None,
    ) -> Tensor:
        """Query-edge logits (batch, num_output_labels)."""
        x = self.encode_graphs(label_ids, lengths)
        return classify_query_edge(x, queries, self.head_weight, self.head_bias)

    def predict_edges(
        self, label_ids: np.ndarray, lengths: Optional[Sequence[int]] = None
    ) -> Tensor:
        """Per-edge logits (batch, n, n, num_output_labels) from the same head."""
        return edge_logits(self.encode_graphs(label_ids, lengths), self.head_weight, self.head_bias)
