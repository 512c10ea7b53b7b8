from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from engine.errors import DegenerateMaskError, DimensionError


@dataclass(frozen=True)
class PivotMask:
    """
    Which pivots each edge may attend through.

    ``allowed[..., i, l, j]`` permits pivot ``l`` for edge ``(i, j)``. The array is
    either ``(n, n, n)`` (shared by the batch) or ``(batch, n, n, n)``.
    """

    allowed: np.ndarray

    def __post_init__(self) -> None:
        allowed = np.asarray(self.allowed, dtype=bool)
        if allowed.ndim not in (3, 4) or len(set(allowed.shape[-3:])) != 1:
            raise DimensionError(f"pivot mask must be (..., n, n, n), got {allowed.shape}")
        if not allowed.any(axis=-2).all():
            raise DegenerateMaskError("pivot mask leaves an edge without any pivot")
        object.__setattr__(self, "allowed", allowed)

    @property
    def n(self) -> int:
        return self.allowed.shape[-1]

    def __and__(self, other: "PivotMask") -> "PivotMask":
        if other.n != self.n:
            raise DimensionError(f"cannot intersect masks over {self.n} and {other.n} nodes")
        return PivotMask(self.allowed & other.allowed)

    def for_scores(self) -> np.ndarray:
        """Broadcastable against scores laid out as (batch, head, i, l, j)."""
        if self.allowed.ndim == 3:
            return self.allowed[None, None]
        return self.allowed[:, None]


def real_positions(n: int, lengths: Sequence[int]) -> np.ndarray:
    """Boolean (batch, n): True where a position holds a real (non-padding) node."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.ndim != 1 or np.any(lengths < 1) or np.any(lengths > n):
        raise DimensionError(f"lengths {lengths.tolist()} must lie in [1, {n}]")
    return np.arange(n)[None, :] < lengths[:, None]


def full_pivot_mask(n: int, lengths: Optional[Sequence[int]] = None) -> PivotMask:
    """
    Every pivot allowed; with ``lengths`` the padding positions of each batch row are
    disallowed as pivots for all edges.
    """
    if lengths is None:
        return PivotMask(np.ones((n, n, n), dtype=bool))
    real = real_positions(n, lengths)
    return PivotMask(np.broadcast_to(real[:, None, :, None], (len(real), n, n, n)))


def pivot_mask_from_real(real: np.ndarray) -> PivotMask:
    """Batch mask allowing only real pivots, given a boolean (batch, n) position mask."""
    batch, n = real.shape
    return PivotMask(np.broadcast_to(real[:, None, :, None], (batch, n, n, n)))


def edge_mask(real: np.ndarray) -> np.ndarray:
    """Boolean (batch, n, n): True where both endpoints are real."""
    return real[:, :, None] & real[:, None, :]


def causal_pivot_mask(n_enc: int, n_dec: int) -> PivotMask:
    """
    Pivot rule for the joint encoder/decoder state, decoder positions after encoder ones.

    Pivot ``l`` is allowed for edge ``(i, j)`` iff ``l`` is an encoder position or its
    decoder index is at most ``max(dec(i), dec(j))``, where encoder positions count as
    decoder index -inf. The loop edge of decoder position p therefore only ever sees
    decoder tokens at positions <= p.
    """
    if n_enc < 0 or n_dec < 1:
        raise DimensionError(f"need n_enc >= 0 and n_dec >= 1, got {n_enc}, {n_dec}")
    dec_index = np.concatenate(
        [np.full(n_enc, -np.inf), np.arange(n_dec, dtype=np.float64)]
    )
    horizon = np.maximum(dec_index[:, None], dec_index[None, :])
    is_encoder = np.isinf(dec_index)
    allowed = is_encoder[None, :, None] | (
        dec_index[None, :, None] <= horizon[:, None, :]
    )
    return PivotMask(allowed)
