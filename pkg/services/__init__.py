from .ablation import AblationConfig, ablation_gap, compare_variants
from .batching import RelationBatch, Seq2SeqBatch, prefetch, relation_batch, seq2seq_batch, shuffled_batches
from .benchmark import BenchConfig, ScalingReport, bench_scaling
from .evaluation import EmptyDatasetError, EvalResult, LabelSpaceError, evaluate
from .training import OptimizerConfig, TrainResult, TrainSettings, train
from .verification import gradcheck_suite, selftest_suite

__all__ = [
    "AblationConfig",
    "BenchConfig",
    "EmptyDatasetError",
    "EvalResult",
    "LabelSpaceError",
    "OptimizerConfig",
    "RelationBatch",
    "ScalingReport",
    "Seq2SeqBatch",
    "TrainResult",
    "TrainSettings",
    "ablation_gap",
    "bench_scaling",
    "compare_variants",
    "evaluate",
    "gradcheck_suite",
    "prefetch",
    "relation_batch",
    "selftest_suite",
    "seq2seq_batch",
    "shuffled_batches",
    "train",
]
