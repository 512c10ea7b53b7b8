from .composition import UNDEFINED, CompositionTable, compose_oracle, load_table
from .datasets import (
    DataConfig,
    Dataset,
    DatasetError,
    DatasetSpec,
    generate_datasets,
    generate_splits,
    instance_key,
    load_datasets,
    load_split,
    write_split,
)
from .generators import (
    GenerationError,
    RelationInstance,
    Seq2SeqInstance,
    gen_relation_instance,
    gen_reverse_instance,
)

__all__ = [
    "UNDEFINED",
    "CompositionTable",
    "DataConfig",
    "Dataset",
    "DatasetError",
    "DatasetSpec",
    "GenerationError",
    "RelationInstance",
    "Seq2SeqInstance",
    "compose_oracle",
    "gen_relation_instance",
    "gen_reverse_instance",
    "generate_datasets",
    "generate_splits",
    "instance_key",
    "load_datasets",
    "load_split",
    "load_table",
    "write_split",
]
