from __future__ import annotations

import os
import threading

import numpy as np
import pandas as pd
import pytest

from engine import Adam, NonFiniteError, Tensor
from engine.functional import cross_entropy
from models.attention import AblationMode
from models.checkpoint import load_checkpoint
from models.config import ModelConfig
from models.encoder import EncoderModel
from models.seq2seq import BOS_ID, EOS_ID
from run_config import RunConfig
from services import training
from services.ablation import ABLATION_COLUMNS, AblationConfig, ablation_gap, compare_variants
from services.batching import IGNORE_INDEX, prefetch, relation_batch, seq2seq_batch, shuffled_batches
from services.benchmark import bench_scaling, loglog_slope
from services.evaluation import EmptyDatasetError, LabelSpaceError, evaluate, prefix_consistency_failures
from services.training import METRICS_COLUMNS, OptimizerConfig, TrainSettings, train
from tasks.composition import CompositionTable
from tasks.datasets import DataConfig, DatasetSpec, generate_splits
from tasks.generators import RelationInstance, Seq2SeqInstance, gen_relation_instance

requires_slow = pytest.mark.skipif(
    not os.getenv("RUN_SLOW"), reason="set RUN_SLOW=1 to run desk-scale training"
)


def tiny_run(**sections) -> RunConfig:
    defaults = dict(
        seed=0,
        model=ModelConfig(num_layers=1, d=8, heads=2),
        optimizer=OptimizerConfig(lr=1e-2),
        train=TrainSettings(epochs=2, batch_size=8, record_seconds=False),
        data=DataConfig(train_examples=24, valid_examples=8, test_examples=8, test_sizes=[4]),
    )
    defaults.update(sections)
    return RunConfig(**defaults)


def relation_model(**overrides) -> EncoderModel:
    config = ModelConfig(num_layers=1, d=8, heads=2, num_edge_labels=5, num_output_labels=5)
    return EncoderModel(config.model_copy(update=overrides), seed=0)


def test_relation_batch_pads_smaller_graphs() -> None:
    rng = np.random.default_rng(0)
    table = CompositionTable.cyclic_group(5)
    instances = [gen_relation_instance(table, 2, rng), gen_relation_instance(table, 4, rng)]
    batch = relation_batch(instances, num_labels=5)

    assert batch.label_ids.shape == (2, 5, 5)
    assert batch.lengths == [3, 5]
    assert np.all(batch.label_ids[0, 3:] == 0)
    assert np.count_nonzero(batch.label_ids[1]) == 4
    np.testing.assert_array_equal(batch.targets, [instances[0].target, instances[1].target])


def test_seq2seq_batch_shifts_targets_behind_bos() -> None:
    batch = seq2seq_batch([Seq2SeqInstance(src=[0, 1], tgt=[1, 0]), Seq2SeqInstance(src=[2], tgt=[2])])

    np.testing.assert_array_equal(batch.src_ids, [[3, 4], [5, 0]])
    np.testing.assert_array_equal(batch.tgt_in, [[BOS_ID, 4, 3], [BOS_ID, 5, 0]])
    np.testing.assert_array_equal(batch.tgt_out, [[4, 3, EOS_ID], [5, EOS_ID, IGNORE_INDEX]])
    assert batch.tgt_lengths == [3, 2]


def test_shuffled_batches_are_seeded_and_complete() -> None:
    items = list(range(10))
    first = list(shuffled_batches(items, 3, np.random.default_rng(5)))
    second = list(shuffled_batches(items, 3, np.random.default_rng(5)))
    assert first == second
    assert [len(chunk) for chunk in first] == [3, 3, 3, 1]
    assert sorted(item for chunk in first for item in chunk) == items
    assert list(shuffled_batches(items, 4)) == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_prefetch_preserves_order(depth: int) -> None:
    assert list(prefetch(range(20), lambda item: item * item, depth)) == [i * i for i in range(20)]


def test_prefetch_builds_on_another_thread() -> None:
    names = []

    def build(item):
        names.append(threading.current_thread().name)
        return item

    list(prefetch(range(3), build, depth=2))
    assert set(names) == {"batch-prefetch"}


def test_prefetch_reraises_producer_errors() -> None:
    def build(item):
        if item == 2:
            raise RuntimeError("bad batch")
        return item

    seen = []
    with pytest.raises(RuntimeError, match="bad batch"):
        for value in prefetch(range(5), build, depth=2):
            seen.append(value)
    assert seen == [0, 1]


def test_evaluate_empty_dataset_is_an_error() -> None:
    with pytest.raises(EmptyDatasetError):
        evaluate(relation_model(), [])


def test_evaluate_detects_label_space_mismatch() -> None:
    instance = RelationInstance(n=3, edges=[(0, 1, 6), (1, 2, 0)], query=(0, 2), target=1, k=2)
    with pytest.raises(LabelSpaceError):
        evaluate(relation_model(), [instance])
    with pytest.raises(LabelSpaceError):
        evaluate(relation_model(), [Seq2SeqInstance(src=[1], tgt=[1])])


def test_memorized_constant_dataset_scores_one() -> None:
    model = relation_model()
    model.head_bias.data[:] = 0.0
    model.head_bias.data[2] = 1e4
    instances = [RelationInstance(n=3, edges=[(0, 1, 1), (1, 2, 1)], query=(0, 2), target=2, k=2)] * 10
    result = evaluate(model, instances)
    assert result.metric == "accuracy"
    assert result.value == 1.0
    assert (result.correct, result.total) == (10, 10)


def test_uninformative_model_scores_at_chance() -> None:
    table = CompositionTable.cyclic_group(5)
    rng = np.random.default_rng(1)
    instances = [gen_relation_instance(table, 2 + i % 2, rng) for i in range(2000)]
    model = relation_model()
    model.head_weight.data[:] = 0.0
    model.head_bias.data[:] = 0.0
    result = evaluate(model, instances)
    sigma = np.sqrt(0.2 * 0.8 / 2000)
    assert abs(result.value - 0.2) <= 3 * sigma


def test_overfits_a_single_example() -> None:
    model = EncoderModel(
        ModelConfig(num_layers=2, d=16, heads=2, num_edge_labels=5, num_output_labels=5), seed=0
    )
    instance = RelationInstance(n=3, edges=[(2, 0, 3), (0, 1, 4)], query=(2, 1), target=2, k=2)
    batch = relation_batch([instance], num_labels=5)
    optimizer = Adam(model.parameters(), lr=1e-2)
    for _ in range(200):
        optimizer.zero_grad()
        loss = cross_entropy(model.forward(batch.label_ids, batch.queries, batch.lengths), batch.targets)
        loss.backward()
        optimizer.step()
    assert loss.item() < 1e-3


def test_zero_learning_rate_leaves_parameters_and_metrics_unchanged(tmp_path) -> None:
    config = tiny_run(optimizer=OptimizerConfig(lr=0.0), train=TrainSettings(epochs=3, batch_size=8, record_seconds=False))
    result = train(config, tmp_path)

    restored = load_checkpoint(result.checkpoint_path)
    initial = EncoderModel(restored.config, seed=config.seed)
    for name, param in initial.named_parameters().items():
        assert np.array_equal(restored.named_parameters()[name].data, param.data)

    metrics = result.metrics
    for split in ("valid", "test_4"):
        values = metrics.loc[metrics["split"] == split, "value"].to_numpy()
        assert np.all(values == values[0])
    losses = metrics.loc[metrics["split"] == "train", "value"].to_numpy()
    np.testing.assert_allclose(losses, losses[0], rtol=1e-5)


def test_metrics_csv_is_identical_across_seeded_runs(tmp_path) -> None:
    first = train(tiny_run(), tmp_path / "a")
    second = train(tiny_run(), tmp_path / "b")
    assert first.metrics_path.read_bytes() == second.metrics_path.read_bytes()

    frame = pd.read_csv(first.metrics_path)
    assert list(frame.columns) == METRICS_COLUMNS
    assert set(frame["metric"]) == {"loss", "accuracy"}
    assert (frame["seconds"] == 0.0).all()
    assert len(frame) == 2 * 3
    assert frame.loc[frame["metric"] == "accuracy", "value"].between(0.0, 1.0).all()


def test_best_checkpoint_follows_validation(tmp_path) -> None:
    result = train(tiny_run(train=TrainSettings(epochs=3, batch_size=8, record_seconds=False, prefetch=0)), tmp_path)
    valid = result.metrics.loc[result.metrics["split"] == "valid"]
    assert result.best_score == valid["value"].max()
    assert result.best_epoch == int(valid.loc[valid["value"].idxmax(), "epoch"])
    assert result.checkpoint_path.exists()


def test_non_finite_loss_aborts_with_location(tmp_path, monkeypatch) -> None:
    monkeypatch.setattr(training, "batch_loss", lambda model, batch: Tensor(np.array(np.nan)))
    with pytest.raises(NonFiniteError, match="epoch 1 step 1"):
        train(tiny_run(), tmp_path)


def test_reverse_task_trains_a_seq2seq_model(tmp_path) -> None:
    config = tiny_run(
        data=DataConfig(
            task="reverse",
            vocab_size=4,
            train_sizes=[2, 3],
            test_sizes=[3],
            train_examples=16,
            valid_examples=4,
            test_examples=4,
        ),
        train=TrainSettings(epochs=1, batch_size=8, record_seconds=False),
    )
    result = train(config, tmp_path)
    assert set(result.metrics["metric"]) == {"loss", "exact_match"}
    assert load_checkpoint(result.checkpoint_path).kind == "seq2seq"


def test_loglog_slope_of_cubic_times() -> None:
    sizes = np.array([16, 32, 64])
    assert loglog_slope(sizes, 1e-6 * sizes.astype(float) ** 3) == pytest.approx(3.0)
    assert np.isnan(loglog_slope([16], [1.0]))


def test_single_repeat_bench_reports_that_sample() -> None:
    report = bench_scaling(ModelConfig(num_layers=1, d=8, heads=2), sizes=[4, 8], repeats=1, warmup=0)
    assert list(report.table["n"]) == [4, 8]
    assert (report.table["repeats"] == 1).all()
    assert (report.table["median_seconds"] > 0).all()


def test_bench_fits_the_slope_over_upper_sizes() -> None:
    report = bench_scaling(ModelConfig(num_layers=1, d=8, heads=2), sizes=[4, 8, 16], repeats=1, warmup=0, fit_from=8)
    upper = report.table.loc[report.table["n"] >= 8]
    assert len(report.table) == 3
    assert report.slope == pytest.approx(loglog_slope(upper["n"].to_numpy(), upper["median_seconds"].to_numpy()))


def test_compare_variants_trains_every_mode_and_seed(tmp_path) -> None:
    config = tiny_run(
        train=TrainSettings(epochs=1, batch_size=8, record_seconds=False),
        ablation=AblationConfig(modes=[AblationMode.BASE, AblationMode.VALUE_ABLATION], seeds=[0, 1]),
    )
    table = compare_variants(config, tmp_path)

    assert list(table.columns) == ABLATION_COLUMNS
    # modes x seeds x (valid, test_4)
    assert len(table) == 2 * 2 * 2
    assert set(table["split"]) == {"valid", "test_4"}
    assert (table["best_epoch"] == 1).all()
    assert sorted(path.name for path in tmp_path.iterdir()) == [
        "base-seed0",
        "base-seed1",
        "value_ablation-seed0",
        "value_ablation-seed1",
    ]
    restored = load_checkpoint(tmp_path / "value_ablation-seed1" / "checkpoint.bin")
    assert restored.config.mode is AblationMode.VALUE_ABLATION


def test_ablation_gap_averages_over_seeds() -> None:
    table = pd.DataFrame(
        {
            "mode": ["base", "base", "value_ablation", "value_ablation"],
            "seed": [0, 1, 0, 1],
            "split": ["test_6"] * 4,
            "metric": ["accuracy"] * 4,
            "value": [0.9, 0.7, 0.5, 0.6],
            "best_epoch": [3] * 4,
        }
    )
    assert ablation_gap(table, "test_6") == pytest.approx(0.25)
    with pytest.raises(KeyError):
        ablation_gap(table, "test_9")


def test_ablation_config_rejects_empty_or_repeated_entries() -> None:
    with pytest.raises(ValueError):
        AblationConfig(seeds=[])
    with pytest.raises(ValueError):
        AblationConfig(modes=["base", "base"])


@pytest.mark.slow
@requires_slow
def test_forward_time_scales_cubically() -> None:
    # the pivot contraction dominates the per-edge projections from n = 64 on at this width
    report = bench_scaling(
        ModelConfig(num_layers=1, d=8, heads=2), sizes=[16, 32, 64, 128], repeats=5, fit_from=64
    )
    assert 2.5 <= report.slope <= 3.5


@pytest.mark.slow
@requires_slow
def test_length_generalization_on_cyclic_chains(tmp_path) -> None:
    config = RunConfig(train=TrainSettings(record_seconds=False))
    result = train(config, tmp_path)
    model = load_checkpoint(result.checkpoint_path)
    splits = generate_splits(DatasetSpec(**config.data.model_dump(), seed=config.seed))
    assert evaluate(model, splits["test_4"]).value >= 0.95
    assert evaluate(model, splits["test_6"]).value >= 0.60


@pytest.mark.slow
@requires_slow
def test_value_ablation_trails_base_on_six_hop_chains(tmp_path) -> None:
    config = RunConfig(
        train=TrainSettings(record_seconds=False),
        ablation=AblationConfig(modes=[AblationMode.BASE, AblationMode.VALUE_ABLATION], seeds=[0, 1, 2]),
    )
    table = compare_variants(config, tmp_path)
    assert ablation_gap(table, "test_6") >= 0.10


@pytest.mark.slow
@requires_slow
def test_reverse_task_reaches_exact_match(tmp_path) -> None:
    config = RunConfig(
        seed=0,
        model=ModelConfig(num_layers=3, d=32, heads=4, max_src_len=8, max_tgt_len=8),
        train=TrainSettings(epochs=20, batch_size=64, record_seconds=False),
        data=DataConfig(task="reverse", vocab_size=20, train_sizes=list(range(3, 9)), test_sizes=list(range(3, 9))),
    )
    result = train(config, tmp_path)
    model = load_checkpoint(result.checkpoint_path)
    splits = generate_splits(DatasetSpec(**config.data.model_dump(), seed=config.seed))
    for name, instances in splits.items():
        if not name.startswith("test_"):
            continue
        assert evaluate(model, instances).value >= 0.99
        sources = [instance.src for instance in instances]
        assert prefix_consistency_failures(model, sources, model.config.max_tgt_len + 1) == []
