from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from engine import Adam, Tensor
from engine.errors import CapacityError, NonFiniteError
from engine.functional import cross_entropy
from models.checkpoint import Model, build_model, save_checkpoint
from models.config import ModelConfig
from models.encoder import EncoderModel
from models.seq2seq import NUM_SPECIAL_TOKENS
from tasks.datasets import Dataset, DatasetSpec, generate_splits

from .batching import IGNORE_INDEX, prefetch, relation_batch, seq2seq_batch, shuffled_batches
from .evaluation import LabelSpaceError, check_label_space, evaluate

if TYPE_CHECKING:
    from run_config import RunConfig

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "split", "metric", "value", "seconds"]
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.bin"
SHUFFLE_STREAM = 1


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    clip_norm: Optional[float] = Field(default=1.0, gt=0.0)


class TrainSettings(BaseModel):
    """Loop settings; ``record_seconds = false`` writes 0.0 timings so metrics files compare byte for byte."""

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=50, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)
    record_seconds: bool = True
    prefetch: int = Field(default=2, ge=0)


@dataclass
class TrainResult:
    metrics: pd.DataFrame
    best_epoch: int
    best_score: float
    checkpoint_path: Path
    metrics_path: Path


def model_kind(spec: DatasetSpec) -> str:
    return EncoderModel.kind if spec.task == "relation" else "seq2seq"


def resolve_model_config(config: ModelConfig, spec: DatasetSpec) -> ModelConfig:
    """Fill label/vocabulary sizes left at 0 from the dataset and check the rest fit it."""
    if spec.task == "relation":
        labels = spec.load_table().num_labels
        updates = {
            field: labels
            for field in ("num_edge_labels", "num_output_labels")
            if getattr(config, field) == 0
        }
        resolved = config.model_copy(update=updates)
        if min(resolved.num_edge_labels, resolved.num_output_labels) < labels:
            raise LabelSpaceError(f"the {spec.table} table has {labels} labels, model config has fewer")
        return resolved

    vocab = spec.vocab_size + NUM_SPECIAL_TOKENS
    updates = {
        field: vocab for field in ("vocab_size", "target_vocab_size") if getattr(config, field) == 0
    }
    resolved = config.model_copy(update=updates)
    if min(resolved.vocab_size, resolved.target_vocab_size) < vocab:
        raise LabelSpaceError(f"{spec.vocab_size} dataset tokens need vocabularies of {vocab}")
    longest = max(spec.train_sizes + spec.test_sizes)
    if longest > min(resolved.max_src_len, resolved.max_tgt_len):
        raise CapacityError(
            f"sequences of length {longest} exceed max_src_len/max_tgt_len "
            f"{resolved.max_src_len}/{resolved.max_tgt_len}"
        )
    return resolved


def batch_loss(model: Model, batch) -> Tensor:
    if isinstance(model, EncoderModel):
        logits = model.forward(batch.label_ids, batch.queries, batch.lengths)
        return cross_entropy(logits, batch.targets)
    logits = model.forward(batch.src_ids, batch.src_lengths, batch.tgt_in, batch.tgt_lengths)
    return cross_entropy(logits, batch.tgt_out, ignore_index=IGNORE_INDEX)


class MetricsLog:
    """Accumulates ``epoch,split,metric,value,seconds`` rows and rewrites the CSV after each epoch."""

    def __init__(self, path: Path, record_seconds: bool = True) -> None:
        self.path = path
        self.record_seconds = record_seconds
        self.rows: list[dict[str, object]] = []

    def add(self, epoch: int, split: str, metric: str, value: float, seconds: float) -> None:
        self.rows.append(
            {
                "epoch": epoch,
                "split": split,
                "metric": metric,
                "value": float(value),
                "seconds": float(seconds) if self.record_seconds else 0.0,
            }
        )

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=METRICS_COLUMNS)

    def flush(self) -> None:
        self.frame().to_csv(self.path, index=False)


def train(
    config: "RunConfig",
    out_dir: Union[str, Path],
    datasets: Optional[dict[str, Dataset]] = None,
) -> TrainResult:
    """
    Train with seeded shuffles, clipped Adam and per-epoch evaluation of every
    non-train split. The checkpoint tracks the best validation score.

    ``datasets`` defaults to generating the configured splits in memory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = DatasetSpec(**config.data.model_dump(), seed=config.seed)
    if datasets is None:
        splits = {
            name: Dataset(spec=spec, split=name, instances=instances)
            for name, instances in generate_splits(spec).items()
        }
    else:
        splits = datasets
        spec = next(iter(splits.values())).spec
    if "train" not in splits or "valid" not in splits:
        raise ValueError(f"training needs train and valid splits, got {sorted(splits)}")

    model_config = resolve_model_config(config.model, spec)
    model = build_model(model_config, model_kind(spec), seed=config.seed)
    train_instances = splits["train"].instances
    check_label_space(model, train_instances)
    optimizer = Adam(
        model.parameters(),
        lr=config.optimizer.lr,
        betas=(config.optimizer.beta1, config.optimizer.beta2),
        eps=config.optimizer.eps,
        clip_norm=config.optimizer.clip_norm,
    )
    settings = config.train
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    if isinstance(model, EncoderModel):
        num_labels = model_config.num_edge_labels

        def build(chunk):
            return relation_batch(chunk, num_labels)

    else:
        build = seq2seq_batch

    metrics = MetricsLog(out_dir / METRICS_FILE, settings.record_seconds)
    checkpoint_path = out_dir / CHECKPOINT_FILE
    best_epoch, best_score = 0, -1.0
    logger.info(
        "training %s model on %s instances for %s epochs",
        model.kind,
        len(train_instances),
        settings.epochs,
    )
    for epoch in range(1, settings.epochs + 1):
        started = time.perf_counter()
        total_loss, seen = 0.0, 0
        batches = prefetch(
            shuffled_batches(train_instances, settings.batch_size, rng), build, settings.prefetch
        )
        for step, batch in enumerate(batches, start=1):
            optimizer.zero_grad()
            loss = batch_loss(model, batch)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteError(f"non-finite loss {value} at epoch {epoch} step {step}")
            loss.backward()
            optimizer.step()
            total_loss += value * len(batch)
            seen += len(batch)
        metrics.add(epoch, "train", "loss", total_loss / seen, time.perf_counter() - started)

        scores = {}
        for name, dataset in splits.items():
            if name == "train":
                continue
            started = time.perf_counter()
            result = evaluate(model, dataset, settings.eval_batch_size)
            metrics.add(epoch, name, result.metric, result.value, time.perf_counter() - started)
            scores[name] = result.value
        metrics.flush()

        if scores["valid"] > best_score:
            best_epoch, best_score = epoch, scores["valid"]
            save_checkpoint(model, checkpoint_path)
        logger.info(
            "epoch %s loss=%.6f %s",
            epoch,
            total_loss / seen,
            " ".join(f"{name}={score:.4f}" for name, score in scores.items()),
        )

    logger.info("best valid score %.4f at epoch %s; checkpoint %s", best_score, best_epoch, checkpoint_path)
    return TrainResult(
        metrics=metrics.frame(),
        best_epoch=best_epoch,
        best_score=best_score,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics.path,
    )
