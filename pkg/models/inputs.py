from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from engine import Tensor
from engine.errors import DimensionError, TargetIndexError
from engine.functional import add, einsum, getitem

NULL_LABEL_ROW = 0


def relative_positions(n: int, clip: int) -> np.ndarray:
    """Row index into the relative-position table: clip(i - j, -c, c) + c."""
    offsets = np.arange(n)[:, None] - np.arange(n)[None, :]
    return np.clip(offsets, -clip, clip) + clip


def edge_label_ids(n: int, edges: Iterable[tuple[int, int, int]], num_labels: int) -> np.ndarray:
    """
    (n, n) table row ids for a labeled graph: label ``l`` sits in row ``l + 1``,
    unlabeled pairs (self-edges included) in the null row 0.
    """
    ids = np.full((n, n), NULL_LABEL_ROW, dtype=np.int64)
    seen: set[tuple[int, int]] = set()
    for src, dst, label in edges:
        if not (0 <= src < n and 0 <= dst < n):
            raise TargetIndexError(f"edge ({src}, {dst}) outside a graph of {n} nodes")
        if not 0 <= label < num_labels:
            raise TargetIndexError(f"edge label {label} outside [0, {num_labels})")
        if (src, dst) in seen:
            raise ValueError(f"duplicate directed edge ({src}, {dst})")
        seen.add((src, dst))
        ids[src, dst] = label + 1
    return ids


def graph_init_batch(edge_label_table: Tensor, label_ids: np.ndarray) -> Tensor:
    """Embed a (batch, n, n) array of label rows into the initial edge state."""
    label_ids = np.asarray(label_ids)
    if label_ids.ndim != 3 or label_ids.shape[1] != label_ids.shape[2]:
        raise DimensionError(f"label ids must be (batch, n, n), got {label_ids.shape}")
    return getitem(edge_label_table, label_ids)


def graph_init(
    edge_label_table: Tensor, n: int, edges: Iterable[tuple[int, int, int]]
) -> Tensor:
    """Initial state (1, n, n, d) of a single labeled graph."""
    ids = edge_label_ids(n, edges, edge_label_table.shape[0] - 1)
    return graph_init_batch(edge_label_table, ids[None])


def sequence_init(
    token_table: Tensor, rel_table: Tensor, tokens: Sequence[Sequence[int]] | np.ndarray, clip: int
) -> Tensor:
    """
    Initial state (batch, n, n, d) of token sequences.

    Self-edges get e(t_i) + a(0); every other edge gets a(clip(i - j)).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.ndim != 2:
        raise DimensionError(f"tokens must be (batch, n), got {tokens.shape}")
    vocab = token_table.shape[0]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise TargetIndexError(f"token id outside [0, {vocab})")
    if rel_table.shape[0] != 2 * clip + 1:
        raise DimensionError(
            f"relative table has {rel_table.shape[0]} rows, clip {clip} needs {2 * clip + 1}"
        )
    n = tokens.shape[1]
    positional = getitem(rel_table, relative_positions(n, clip))
    embedded = getitem(token_table, tokens)
    diagonal = einsum(
        "bid,ij->bijd", embedded, Tensor(np.eye(n, dtype=token_table.dtype))
    )
    return add(diagonal, positional)
