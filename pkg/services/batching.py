from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

import numpy as np

from models.inputs import edge_label_ids
from models.seq2seq import BOS_ID, EOS_ID, NUM_SPECIAL_TOKENS, pad_sequences
from tasks.generators import RelationInstance, Seq2SeqInstance

logger = logging.getLogger(__name__)

IGNORE_INDEX = -1

T = TypeVar("T")
B = TypeVar("B")


@dataclass
class RelationBatch:
    label_ids: np.ndarray
    queries: np.ndarray
    lengths: list[int]
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.lengths)


@dataclass
class Seq2SeqBatch:
    """Model token ids; ``tgt_out`` is ``tgt_in`` shifted left with IGNORE_INDEX on padding."""

    src_ids: np.ndarray
    src_lengths: list[int]
    tgt_in: np.ndarray
    tgt_lengths: list[int]
    tgt_out: np.ndarray

    def __len__(self) -> int:
        return len(self.src_lengths)


def to_model_ids(tokens: Sequence[int]) -> list[int]:
    return [token + NUM_SPECIAL_TOKENS for token in tokens]


def from_model_ids(ids: Sequence[int]) -> list[int]:
    return [token - NUM_SPECIAL_TOKENS for token in ids]


def relation_batch(instances: Sequence[RelationInstance], num_labels: int) -> RelationBatch:
    """Pad graphs to the largest ``n``; padded rows and columns stay in the null label row."""
    n_max = max(instance.n for instance in instances)
    label_ids = np.zeros((len(instances), n_max, n_max), dtype=np.int64)
    for row, instance in enumerate(instances):
        label_ids[row, : instance.n, : instance.n] = edge_label_ids(
            instance.n, instance.edges, num_labels
        )
    return RelationBatch(
        label_ids=label_ids,
        queries=np.array([instance.query for instance in instances], dtype=np.int64),
        lengths=[instance.n for instance in instances],
        targets=np.array([instance.target for instance in instances], dtype=np.int64),
    )


def seq2seq_batch(instances: Sequence[Seq2SeqInstance]) -> Seq2SeqBatch:
    """Decoder input is ``<bos> tgt``, decoder target is ``tgt <eos>``."""
    src_ids, src_lengths = pad_sequences([to_model_ids(instance.src) for instance in instances])
    tgt_in, tgt_lengths = pad_sequences(
        [[BOS_ID, *to_model_ids(instance.tgt)] for instance in instances]
    )
    tgt_out = np.full(tgt_in.shape, IGNORE_INDEX, dtype=np.int64)
    for row, instance in enumerate(instances):
        tgt_out[row, : tgt_lengths[row]] = [*to_model_ids(instance.tgt), EOS_ID]
    return Seq2SeqBatch(src_ids, src_lengths, tgt_in, tgt_lengths, tgt_out)


def shuffled_batches(
    instances: Sequence[T], batch_size: int, rng: np.random.Generator | None = None
) -> Iterator[list[T]]:
    """Mini-batches in a seeded random order; ``rng=None`` keeps file order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(instances)) if rng is not None else np.arange(len(instances))
    for start in range(0, len(order), batch_size):
        yield [instances[index] for index in order[start : start + batch_size]]


_DONE = object()


class _Failure:
    def __init__(self, exc: BaseException) -> None:
        self.exc = exc


def prefetch(items: Iterable[T], build: Callable[[T], B], depth: int = 2) -> Iterator[B]:
    """
    Yield ``build(item)`` for every item, assembling up to ``depth`` results ahead
    on a producer thread. ``depth = 0`` builds inline. Output order is input order.
    """
    if depth <= 0:
        for item in items:
            yield build(item)
        return

    handoff: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def _put(value: object) -> bool:
        while not stop.is_set():
            try:
                handoff.put(value, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce() -> None:
        try:
            for item in items:
                if not _put(build(item)):
                    return
        except BaseException as exc:
            logger.debug("batch producer failed: %s", exc, exc_info=True)
            _put(_Failure(exc))
            return
        _put(_DONE)

    producer = threading.Thread(target=_produce, name="batch-prefetch", daemon=True)
    producer.start()
    try:
        while True:
            value = handoff.get()
            if value is _DONE:
                break
            if isinstance(value, _Failure):
                raise value.exc
            yield value
    finally:
        stop.set()
        producer.join()
