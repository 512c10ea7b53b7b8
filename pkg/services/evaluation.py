from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from engine import no_grad
from engine.errors import EdgeTransformerError
from models.encoder import EncoderModel
from models.seq2seq import (
    BOS_ID,
    EOS_ID,
    NUM_SPECIAL_TOKENS,
    Seq2SeqModel,
    greedy_decode,
    greedy_decode_batch,
    seq2seq_forward,
)
from tasks.datasets import Dataset
from tasks.generators import RelationInstance, Seq2SeqInstance

from .batching import from_model_ids, relation_batch, shuffled_batches, to_model_ids

logger = logging.getLogger(__name__)

DEFAULT_EVAL_BATCH_SIZE = 256

Model = Union[EncoderModel, Seq2SeqModel]
Instances = Union[Dataset, Sequence[RelationInstance], Sequence[Seq2SeqInstance]]


class EmptyDatasetError(EdgeTransformerError, ValueError):
    """Evaluation was asked for a metric over zero instances."""


class LabelSpaceError(EdgeTransformerError, ValueError):
    """The dataset uses labels or tokens the model cannot represent."""


@dataclass(frozen=True)
class EvalResult:
    metric: str
    correct: int
    total: int

    @property
    def value(self) -> float:
        return self.correct / self.total


def _instances(data: Instances) -> list:
    return list(data.instances if isinstance(data, Dataset) else data)


def check_label_space(model: Model, instances: Sequence) -> None:
    """Raise LabelSpaceError unless every label or token fits the model's tables."""
    config = model.config
    if isinstance(model, EncoderModel):
        if not all(isinstance(instance, RelationInstance) for instance in instances):
            raise LabelSpaceError("encoder models evaluate relation instances only")
        edge_max = max(label for instance in instances for _, _, label in instance.edges)
        target_max = max(instance.target for instance in instances)
        if edge_max >= config.num_edge_labels or target_max >= config.num_output_labels:
            raise LabelSpaceError(
                f"dataset labels up to edge={edge_max} target={target_max}, model has "
                f"{config.num_edge_labels} edge and {config.num_output_labels} output labels"
            )
        return
    if not all(isinstance(instance, Seq2SeqInstance) for instance in instances):
        raise LabelSpaceError("seq2seq models evaluate sequence instances only")
    src_max = max(max(instance.src) for instance in instances)
    tgt_max = max(max(instance.tgt, default=0) for instance in instances)
    if src_max + NUM_SPECIAL_TOKENS >= config.vocab_size or (
        tgt_max + NUM_SPECIAL_TOKENS >= config.target_vocab_size
    ):
        raise LabelSpaceError(
            f"dataset tokens up to src={src_max} tgt={tgt_max} do not fit vocabularies "
            f"{config.vocab_size}/{config.target_vocab_size} after {NUM_SPECIAL_TOKENS} special ids"
        )


def predict_relations(
    model: EncoderModel, instances: Sequence[RelationInstance], batch_size: int = DEFAULT_EVAL_BATCH_SIZE
) -> np.ndarray:
    """Argmax query-edge label per instance, in input order."""
    predictions = []
    with no_grad():
        for chunk in shuffled_batches(instances, batch_size):
            batch = relation_batch(chunk, model.config.num_edge_labels)
            logits = model.forward(batch.label_ids, batch.queries, batch.lengths)
            predictions.append(logits.data.argmax(axis=-1))
    return np.concatenate(predictions)


def decode_sources(
    model: Seq2SeqModel,
    sources: Sequence[Sequence[int]],
    max_len: int,
    batch_size: int = DEFAULT_EVAL_BATCH_SIZE,
) -> list[tuple[list[int], bool]]:
    """Greedy outputs in dataset token space, each with its truncation flag."""
    outputs = []
    for chunk in shuffled_batches(list(sources), batch_size):
        results = greedy_decode_batch([to_model_ids(src) for src in chunk], model, max_len)
        outputs.extend((from_model_ids(result.tokens), result.truncated) for result in results)
    return outputs


def prefix_consistency_failures(
    model: Seq2SeqModel, sources: Sequence[Sequence[int]], max_len: int
) -> list[tuple[int, int]]:
    """
    ``(source index, step)`` pairs where the greedy token at ``step`` is not the
    argmax of a fresh forward pass on ``<bos>`` plus the tokens decoded before it.
    Sources are in dataset token space; an untruncated output also checks its <eos>.
    """
    failures = []
    with no_grad():
        for index, src in enumerate(sources):
            src_ids = to_model_ids(src)
            result = greedy_decode(src_ids, model, max_len)
            emitted = result.tokens if result.truncated else result.tokens + [EOS_ID]
            for step, token in enumerate(emitted):
                logits = seq2seq_forward(src_ids, [BOS_ID, *result.tokens[:step]], model).data
                if int(logits[-1].argmax()) != token:
                    failures.append((index, step))
    if failures:
        logger.debug("%s greedy steps disagree with a fresh forward pass", len(failures))
    return failures


def evaluate(model: Model, data: Instances, batch_size: int = DEFAULT_EVAL_BATCH_SIZE) -> EvalResult:
    """
    Relation task: fraction of instances whose argmax query-edge label equals the target.
    Sequence task: fraction whose greedy output equals the target exactly.
    """
    instances = _instances(data)
    if not instances:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    check_label_space(model, instances)

    if isinstance(model, EncoderModel):
        predictions = predict_relations(model, instances, batch_size)
        targets = np.array([instance.target for instance in instances])
        result = EvalResult("accuracy", int(np.sum(predictions == targets)), len(instances))
    else:
        max_len = max(len(instance.tgt) for instance in instances) + 1
        outputs = decode_sources(model, [instance.src for instance in instances], max_len, batch_size)
        correct = sum(
            1
            for (tokens, truncated), instance in zip(outputs, instances)
            if not truncated and tokens == instance.tgt
        )
        result = EvalResult("exact_match", correct, len(instances))
    logger.debug("%s = %s/%s", result.metric, result.correct, result.total)
    return result
