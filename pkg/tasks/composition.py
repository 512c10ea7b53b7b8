from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

UNDEFINED = -1
DATA_DIR = Path(__file__).resolve().parent / "data"
BUNDLED_TABLES = {"kinship": DATA_DIR / "kinship.csv"}


@dataclass(frozen=True)
class CompositionTable:
    """
    Binary operation on relation labels: ``r1(x, z), r2(z, y) => table[r1, r2](x, y)``.

    ``table`` is an (M, M) integer array with UNDEFINED where the composition is
    not defined.
    """

    labels: tuple[str, ...]
    table: np.ndarray
    variant: str

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def is_total(self) -> bool:
        return bool(np.all(self.table != UNDEFINED))

    def compose(self, left: int, right: int) -> Optional[int]:
        result = int(self.table[left, right])
        return None if result == UNDEFINED else result

    def continuations(self, left: int) -> np.ndarray:
        """Labels ``r`` for which ``compose(left, r)`` is defined."""
        return np.flatnonzero(self.table[left] != UNDEFINED)

    @classmethod
    def cyclic_group(cls, modulus: int) -> "CompositionTable":
        """Addition mod M; label ``r`` is named ``r<index>``."""
        if modulus < 2:
            raise ValueError(f"cyclic group needs modulus >= 2, got {modulus}")
        index = np.arange(modulus)
        return cls(
            labels=tuple(f"r{i}" for i in range(modulus)),
            table=(index[:, None] + index[None, :]) % modulus,
            variant=f"cyclic_group({modulus})",
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "CompositionTable":
        """
        Read a CSV with columns ``left,right,result`` naming relations.

        Labels are numbered in sorted name order; absent pairs are undefined.
        """
        path = Path(path)
        logger.debug("loading composition table from %s", path)
        try:
            frame = pd.read_csv(path, dtype=str)
        except Exception as exc:
            logger.debug("failed to read composition table: %s", exc, exc_info=True)
            raise
        expected = ["left", "right", "result"]
        if list(frame.columns) != expected:
            raise ValueError(f"{path}: columns must be {expected}, got {list(frame.columns)}")
        frame = frame.apply(lambda column: column.str.strip())
        labels = tuple(sorted(set(frame["left"]) | set(frame["right"]) | set(frame["result"])))
        position = {label: i for i, label in enumerate(labels)}
        table = np.full((len(labels), len(labels)), UNDEFINED, dtype=np.int64)
        for row in frame.itertuples(index=False):
            left, right = position[row.left], position[row.right]
            if table[left, right] not in (UNDEFINED, position[row.result]):
                raise ValueError(f"{path}: conflicting entries for ({row.left}, {row.right})")
            table[left, right] = position[row.result]
        logger.debug("composition table with %s labels and %s entries", len(labels), len(frame))
        return cls(labels=labels, table=table, variant=f"custom_table({path.name})")


def load_table(name: str, modulus: int = 5) -> CompositionTable:
    """``cyclic`` (with ``modulus``), a bundled table name such as ``kinship``, or a CSV path."""
    if name == "cyclic":
        return CompositionTable.cyclic_group(modulus)
    if name in BUNDLED_TABLES:
        return CompositionTable.from_file(BUNDLED_TABLES[name])
    return CompositionTable.from_file(name)


def compose_oracle(table: CompositionTable, chain: Sequence[int]) -> Optional[int]:
    """Left fold of the table over ``chain``; None marks an undefined composition."""
    if not chain:
        raise ValueError("compose_oracle needs a non-empty chain")
    for label in chain:
        if not 0 <= label < table.num_labels:
            raise IndexError(f"label {label} outside [0, {table.num_labels})")
    result: Optional[int] = chain[0]
    for label in chain[1:]:
        result = table.compose(result, label)
        if result is None:
            return None
    return result
