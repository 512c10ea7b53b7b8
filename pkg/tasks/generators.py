from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from engine.errors import EdgeTransformerError

from .composition import CompositionTable, compose_oracle

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 1000


class GenerationError(EdgeTransformerError, RuntimeError):
    """No chain with a defined composition was found within the attempt bound."""


class RelationInstance(BaseModel):
    """
    A noiseless chain graph: exactly ``k`` labelled edges along a path over ``n = k + 1`` nodes.

    Field order is the on-disk order.
    """

    model_config = ConfigDict(extra="forbid")

    n: int
    edges: list[tuple[int, int, int]]
    query: tuple[int, int]
    target: int
    k: int

    @model_validator(mode="after")
    def _check_shape(self) -> "RelationInstance":
        if self.k < 1 or len(self.edges) != self.k:
            raise ValueError(f"expected k={self.k} edges, got {len(self.edges)}")
        if self.n != self.k + 1:
            raise ValueError(f"a chain of {self.k} edges has {self.k + 1} nodes, got n={self.n}")
        for src, dst, _ in self.edges:
            if not (0 <= src < self.n and 0 <= dst < self.n):
                raise ValueError(f"edge ({src}, {dst}) outside 0..{self.n - 1}")
        return self

    def chain_labels(self) -> list[int]:
        """Edge labels in path order, walking from the query source."""
        outgoing = {src: (dst, label) for src, dst, label in self.edges}
        if len(outgoing) != len(self.edges):
            raise ValueError("edges do not form a simple path")
        node, labels = self.query[0], []
        for _ in range(self.k):
            if node not in outgoing:
                raise ValueError(f"path breaks at node {node}")
            node, label = outgoing[node]
            labels.append(label)
        if node != self.query[1]:
            raise ValueError(f"path ends at {node}, query ends at {self.query[1]}")
        return labels


class Seq2SeqInstance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    src: list[int]
    tgt: list[int]


def _sample_chain(
    table: CompositionTable, k: int, rng: np.random.Generator, max_attempts: int
) -> list[int]:
    for _ in range(max_attempts):
        labels = [int(rng.integers(table.num_labels))]
        accumulated = labels[0]
        for _ in range(k - 1):
            options = table.continuations(accumulated)
            if options.size == 0:
                break
            label = int(options[rng.integers(options.size)])
            labels.append(label)
            accumulated = table.compose(accumulated, label)
        if len(labels) == k:
            return labels
    raise GenerationError(
        f"no composable chain of length {k} over {table.variant} after {max_attempts} attempts"
    )


def gen_relation_instance(
    table: CompositionTable,
    k: int,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> RelationInstance:
    """
    Sample a path v0 -> v1 -> ... -> vk with composable labels.

    Node ids are a uniform permutation of 0..k, so the query endpoints land anywhere.
    """
    if k < 2:
        raise ValueError(f"relation length must be >= 2, got {k}")
    labels = _sample_chain(table, k, rng, max_attempts)
    nodes = rng.permutation(k + 1).tolist()
    edges = [(nodes[t], nodes[t + 1], labels[t]) for t in range(k)]
    return RelationInstance(
        n=k + 1,
        edges=edges,
        query=(nodes[0], nodes[k]),
        target=compose_oracle(table, labels),
        k=k,
    )


def gen_reverse_instance(vocab_size: int, length: int, rng: np.random.Generator) -> Seq2SeqInstance:
    if vocab_size < 1 or length < 1:
        raise ValueError(f"vocab_size and length must be positive, got {vocab_size}, {length}")
    src = rng.integers(vocab_size, size=length).tolist()
    return Seq2SeqInstance(src=src, tgt=src[::-1])
