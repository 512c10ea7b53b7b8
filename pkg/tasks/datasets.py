from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from engine.errors import EdgeTransformerError

from .composition import CompositionTable, compose_oracle, load_table
from .generators import (
    DEFAULT_MAX_ATTEMPTS,
    GenerationError,
    RelationInstance,
    Seq2SeqInstance,
    gen_relation_instance,
    gen_reverse_instance,
)

logger = logging.getLogger(__name__)

SPLIT_SUFFIX = ".jsonl"
Instance = Union[RelationInstance, Seq2SeqInstance]


class DatasetError(EdgeTransformerError, ValueError):
    """A dataset file is malformed or disagrees with its header or the task oracle."""


class DataConfig(BaseModel):
    """
    What to generate. ``*_sizes`` are relation lengths k for the relation task and
    source lengths for the reverse task.
    """

    model_config = ConfigDict(extra="forbid")

    task: Literal["relation", "reverse"] = "relation"
    table: str = "cyclic"
    modulus: int = Field(default=5, ge=2)
    train_sizes: list[int] = Field(default_factory=lambda: [2, 3])
    test_sizes: list[int] = Field(default_factory=lambda: [4, 5, 6])
    train_examples: int = Field(default=5000, ge=1)
    valid_examples: int = Field(default=500, ge=1)
    test_examples: int = Field(default=2000, ge=1)
    vocab_size: int = Field(default=20, ge=1)
    max_attempts: int = Field(default=DEFAULT_MAX_ATTEMPTS, ge=1)

    @field_validator("train_sizes", "test_sizes")
    @classmethod
    def _check_sizes(cls, sizes: list[int]) -> list[int]:
        if not sizes:
            raise ValueError("at least one size is required")
        if min(sizes) < 1:
            raise ValueError(f"sizes must be positive, got {sizes}")
        return sorted(set(sizes))

    def load_table(self) -> CompositionTable:
        return load_table(self.table, self.modulus)

    def split_sizes(self) -> dict[str, list[int]]:
        """Split name -> sizes drawn in it; valid holds out the largest training size."""
        splits = {"train": list(self.train_sizes), "valid": [max(self.train_sizes)]}
        for size in self.test_sizes:
            splits[f"test_{size}"] = [size]
        return splits

    def split_examples(self, split: str) -> int:
        if split == "train":
            return self.train_examples
        if split == "valid":
            return self.valid_examples
        return self.test_examples


class DatasetSpec(DataConfig):
    seed: int = 0


class DatasetHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spec: DatasetSpec
    split: str


@dataclass
class Dataset:
    spec: DatasetSpec
    split: str
    instances: list[Instance]

    def __len__(self) -> int:
        return len(self.instances)


def _split_rng(spec: DatasetSpec) -> dict[str, np.random.Generator]:
    names = list(spec.split_sizes())
    children = np.random.SeedSequence(spec.seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def instance_key(instance: Instance) -> tuple:
    """Identity of an instance for holding evaluation splits out of training."""
    if isinstance(instance, RelationInstance):
        return (instance.n, tuple(sorted(instance.edges)), instance.query)
    return tuple(instance.src)


def generate_splits(spec: DatasetSpec) -> dict[str, list[Instance]]:
    """
    Every split as a list of instances; a pure function of ``spec``. Instances of
    valid and test splits never repeat a training instance.
    """
    rngs = _split_rng(spec)
    table = spec.load_table() if spec.task == "relation" else None
    seen: set[tuple] = set()
    splits: dict[str, list[Instance]] = {}
    for split, sizes in spec.split_sizes().items():
        rng = rngs[split]
        count = spec.split_examples(split)
        instances: list[Instance] = []
        attempts = 0
        while len(instances) < count:
            attempts += 1
            if attempts > count * spec.max_attempts:
                raise GenerationError(
                    f"split {split}: only {len(instances)} of {count} held-out instances found"
                )
            size = sizes[int(rng.integers(len(sizes)))]
            if table is not None:
                instance = gen_relation_instance(table, size, rng, spec.max_attempts)
            else:
                instance = gen_reverse_instance(spec.vocab_size, size, rng)
            if split != "train" and instance_key(instance) in seen:
                continue
            instances.append(instance)
        if split == "train":
            seen.update(instance_key(instance) for instance in instances)
        splits[split] = instances
        logger.debug("generated %s instances for split %s", len(instances), split)
    return splits


def _header_line(spec: DatasetSpec, split: str) -> str:
    return json.dumps({"spec": spec.model_dump(mode="json"), "split": split})


def write_split(path: Union[str, Path], spec: DatasetSpec, split: str, instances: list[Instance]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(_header_line(spec, split) + "\n")
        for instance in instances:
            handle.write(instance.model_dump_json() + "\n")
    return path


def generate_datasets(spec: DatasetSpec, out_dir: Union[str, Path]) -> dict[str, Path]:
    """Write ``<split>.jsonl`` for train, valid and each test size."""
    out_dir = Path(out_dir)
    paths = {}
    for split, instances in generate_splits(spec).items():
        paths[split] = write_split(out_dir / f"{split}{SPLIT_SUFFIX}", spec, split, instances)
        logger.info("wrote %s (%s instances)", paths[split], len(instances))
    return paths


def _check_instance(
    instance: Instance, spec: DatasetSpec, sizes: list[int], table: CompositionTable | None
) -> None:
    if isinstance(instance, RelationInstance):
        if instance.k not in sizes:
            raise ValueError(f"relation length {instance.k} not in {sizes}")
        labels = instance.chain_labels()
        for label in labels + [instance.target]:
            if not 0 <= label < table.num_labels:
                raise ValueError(f"label {label} outside [0, {table.num_labels})")
        expected = compose_oracle(table, labels)
        if expected != instance.target:
            raise ValueError(f"target {instance.target} but the chain composes to {expected}")
    else:
        if len(instance.src) not in sizes:
            raise ValueError(f"source length {len(instance.src)} not in {sizes}")
        if any(not 0 <= token < spec.vocab_size for token in instance.src + instance.tgt):
            raise ValueError(f"token outside [0, {spec.vocab_size})")
        if instance.tgt != instance.src[::-1]:
            raise ValueError("target is not the reversed source")


def load_split(path: Union[str, Path], spec: DatasetSpec | None = None) -> Dataset:
    """Read one split file, validating every record against the header and the task oracle."""
    path = Path(path)
    logger.debug("loading dataset split %s", path)
    with path.open("r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}:1: missing header line")
    try:
        header = DatasetHeader.model_validate_json(lines[0])
    except ValidationError as exc:
        raise DatasetError(f"{path}:1: invalid header: {exc}") from exc
    if spec is not None and header.spec != spec:
        raise DatasetError(f"{path}:1: header does not match the expected dataset spec")
    sizes = header.spec.split_sizes().get(header.split)
    if sizes is None:
        raise DatasetError(f"{path}:1: unknown split {header.split!r}")
    table = header.spec.load_table() if header.spec.task == "relation" else None
    record_cls = RelationInstance if table is not None else Seq2SeqInstance
    instances: list[Instance] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            instance = record_cls.model_validate_json(line)
            _check_instance(instance, header.spec, sizes, table)
        except (ValidationError, ValueError) as exc:
            logger.debug("rejected %s:%s", path, lineno, exc_info=True)
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        instances.append(instance)
    return Dataset(spec=header.spec, split=header.split, instances=instances)


def _split_order(name: str) -> tuple[int, int]:
    if name == "train":
        return (0, 0)
    if name == "valid":
        return (1, 0)
    return (2, int(name.rsplit("_", 1)[-1]))


def load_datasets(data_dir: Union[str, Path], spec: DatasetSpec | None = None) -> dict[str, Dataset]:
    """Every ``*.jsonl`` split under ``data_dir``, keyed by split name (train, valid, test_<size>...)."""
    data_dir = Path(data_dir)
    datasets = [load_split(path, spec) for path in sorted(data_dir.glob(f"*{SPLIT_SUFFIX}"))]
    if not datasets:
        raise DatasetError(f"{data_dir}: no {SPLIT_SUFFIX} split files found")
    specs = {dataset.spec.model_dump_json() for dataset in datasets}
    if len(specs) > 1:
        raise DatasetError(f"{data_dir}: split files were generated from different specs")
    return {
        dataset.split: dataset
        for dataset in sorted(datasets, key=lambda dataset: _split_order(dataset.split))
    }
