from __future__ import annotations

import numpy as np
import pytest

from engine import CapacityError, TargetIndexError, Tensor, no_grad
from models.config import ModelConfig
from models.encoder import EncoderModel, edge_cross_entropy, encode
from models.masks import full_pivot_mask
from models.seq2seq import (
    BOS_ID,
    EOS_ID,
    Seq2SeqModel,
    greedy_decode,
    greedy_decode_batch,
    seq2seq_forward,
)
from services.evaluation import decode_sources, prefix_consistency_failures
from tasks.datasets import DatasetSpec, generate_splits


def encoder_config(**overrides) -> ModelConfig:
    base = dict(num_layers=2, d=8, heads=2, num_edge_labels=3, num_output_labels=4)
    base.update(overrides)
    return ModelConfig(**base)


def seq_config(**overrides) -> ModelConfig:
    base = dict(num_layers=2, d=8, heads=2, vocab_size=9, target_vocab_size=9, rel_clip=4, max_src_len=6, max_tgt_len=6)
    base.update(overrides)
    return ModelConfig(**base)


def test_encoder_forward_shapes() -> None:
    model = EncoderModel(encoder_config(), seed=0)
    ids = np.random.default_rng(0).integers(4, size=(3, 5, 5))
    logits = model.forward(ids, np.array([[0, 4], [1, 2], [3, 3]]))
    assert logits.shape == (3, 4)
    assert model.predict_edges(ids).shape == (3, 5, 5, 4)


def test_zero_layers_return_the_initial_state() -> None:
    model = EncoderModel(encoder_config(num_layers=0), seed=0)
    x0 = Tensor(np.random.default_rng(1).normal(size=(1, 3, 3, 8)))
    assert encode(x0, model.stack, full_pivot_mask(3)) is x0


def test_tied_stack_shares_one_parameter_set() -> None:
    tied = EncoderModel(encoder_config(num_layers=4, tied=True), seed=0)
    untied = EncoderModel(encoder_config(num_layers=4, tied=False), seed=0)
    assert len(untied.stack.layers) == 4
    assert len(tied.stack.layers) == 1
    assert tied.stack.layer_for(3) is tied.stack.layer_for(0)
    assert len(untied.parameters()) - len(tied.parameters()) == 3 * len(tied.stack.layers[0].parameters())


def test_tied_equals_untied_with_one_layer() -> None:
    ids = np.random.default_rng(2).integers(4, size=(2, 4, 4))
    queries = np.array([[0, 1], [2, 3]])
    tied = EncoderModel(encoder_config(num_layers=1, tied=True), seed=3).forward(ids, queries)
    untied = EncoderModel(encoder_config(num_layers=1, tied=False), seed=3).forward(ids, queries)
    assert np.array_equal(tied.data, untied.data)


@pytest.mark.parametrize("seed", range(5))
def test_encoder_is_permutation_equivariant(seed: int) -> None:
    rng = np.random.default_rng(seed)
    model = EncoderModel(encoder_config(), seed=seed)
    ids = rng.integers(4, size=(5, 5))
    perm = rng.permutation(5)
    with no_grad():
        out = model.encode_graphs(ids[None]).data[0]
        permuted = model.encode_graphs(ids[np.ix_(perm, perm)][None]).data[0]
    np.testing.assert_allclose(permuted, out[np.ix_(perm, perm)], atol=1e-5)


def test_padded_batch_matches_instance_alone() -> None:
    rng = np.random.default_rng(4)
    model = EncoderModel(encoder_config(), seed=4)
    small = rng.integers(4, size=(3, 3))
    batch = np.zeros((2, 6, 6), dtype=np.int64)
    batch[0, :3, :3] = small
    batch[1] = rng.integers(4, size=(6, 6))
    with no_grad():
        alone = model.forward(small[None], np.array([[0, 2]]))
        padded = model.forward(batch, np.array([[0, 2], [1, 5]]), lengths=[3, 6])
    np.testing.assert_allclose(padded.data[0], alone.data[0], atol=1e-5)


def test_query_outside_graph_raises() -> None:
    model = EncoderModel(encoder_config(), seed=0)
    with pytest.raises(TargetIndexError):
        model.forward(np.zeros((1, 3, 3), dtype=np.int64), np.array([[0, 3]]))


def test_edge_cross_entropy_skips_unlabeled_edges() -> None:
    model = EncoderModel(encoder_config(), seed=0)
    logits = model.predict_edges(np.zeros((1, 2, 2), dtype=np.int64))
    targets = np.full((1, 2, 2), -1)
    targets[0, 0, 1] = 2
    loss = edge_cross_entropy(logits, targets)
    expected = -np.log(np.exp(logits.data[0, 0, 1, 2]) / np.exp(logits.data[0, 0, 1]).sum())
    assert loss.item() == pytest.approx(expected, rel=1e-5)


def test_encoder_needs_label_sizes() -> None:
    with pytest.raises(ValueError):
        EncoderModel(ModelConfig(d=8, heads=2), seed=0)


def test_heads_must_divide_d_in_config() -> None:
    with pytest.raises(ValueError):
        ModelConfig(d=10, heads=4)


def test_seq2seq_logits_shape_and_single_pair_helper() -> None:
    model = Seq2SeqModel(seq_config(), seed=0)
    logits = model.forward(np.array([[3, 4, 5], [6, 7, 0]]), [3, 2], np.array([[BOS_ID, 4], [BOS_ID, 5]]), [2, 2])
    assert logits.shape == (2, 2, 9)
    assert seq2seq_forward([3, 4, 5], [BOS_ID, 4, 8], model).shape == (3, 9)


def test_decode_reuses_encoder_state() -> None:
    model = Seq2SeqModel(seq_config(), seed=1)
    src = np.array([[3, 5, 7, 4]])
    tgt = np.array([[BOS_ID, 6, 6]])
    with no_grad():
        x_enc, real = model.encode_source(src, [4])
        split = model.decode(x_enc, real, tgt, [3]).data
        joint = model.forward(src, [4], tgt, [3]).data
    assert np.array_equal(split, joint)


@pytest.mark.parametrize("seed", range(3))
def test_decoder_logits_ignore_future_tokens_bitwise(seed: int) -> None:
    rng = np.random.default_rng(seed)
    model = Seq2SeqModel(seq_config(), seed=seed)
    src = rng.integers(3, 9, size=(1, 4))
    tgt = np.concatenate([[BOS_ID], rng.integers(3, 9, size=5)])[None]
    with no_grad():
        logits = model.forward(src, [4], tgt, [6]).data
        for p in range(5):
            edited = tgt.copy()
            edited[0, p + 1 :] = rng.integers(3, 9, size=5 - p)
            changed = model.forward(src, [4], edited, [6]).data
            assert np.array_equal(changed[:, : p + 1], logits[:, : p + 1])


def test_padded_sources_do_not_change_decoder_logits() -> None:
    model = Seq2SeqModel(seq_config(), seed=2)
    tgt = np.array([[BOS_ID, 5, 6]])
    with no_grad():
        alone = model.forward(np.array([[3, 4]]), [2], tgt, [3]).data[0]
        batched = model.forward(
            np.array([[3, 4, 0, 0], [8, 7, 6, 5]]), [2, 4], np.repeat(tgt, 2, axis=0), [3, 3]
        ).data[0]
    np.testing.assert_allclose(batched, alone, atol=1e-5)


def test_sequences_beyond_capacity_raise() -> None:
    model = Seq2SeqModel(seq_config(max_src_len=3, max_tgt_len=2), seed=0)
    with pytest.raises(CapacityError):
        model.forward(np.array([[3, 4, 5, 6]]), [4], np.array([[BOS_ID]]), [1])
    with pytest.raises(CapacityError):
        model.forward(np.array([[3]]), [1], np.array([[BOS_ID, 3, 4, 5]]), [4])


def test_greedy_decode_stops_at_max_len_and_flags_truncation() -> None:
    model = Seq2SeqModel(seq_config(), seed=5)
    # an unreachable stop id forces the length bound
    result = greedy_decode([3, 4, 5], model, max_len=4, eos_id=99)
    assert len(result.tokens) == 4
    assert result.truncated


def test_greedy_outputs_are_prefix_consistent() -> None:
    model = Seq2SeqModel(seq_config(), seed=6)
    short = greedy_decode([4, 4, 7], model, max_len=2, eos_id=99)
    long = greedy_decode([4, 4, 7], model, max_len=5, eos_id=99)
    assert long.tokens[:2] == short.tokens


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_greedy_token_is_the_argmax_on_its_prefix(seed: int) -> None:
    spec = DatasetSpec(
        task="reverse",
        vocab_size=6,
        train_sizes=[2, 3],
        test_sizes=[3, 4, 5],
        train_examples=8,
        valid_examples=2,
        test_examples=6,
        seed=seed,
    )
    sources = [
        instance.src
        for name, instances in generate_splits(spec).items()
        if name.startswith("test_")
        for instance in instances
    ]
    model = Seq2SeqModel(seq_config(dtype="float64"), seed=seed)
    assert prefix_consistency_failures(model, sources, max_len=7) == []

    batched = decode_sources(model, sources, max_len=7, batch_size=5)
    alone = [decode_sources(model, [src], max_len=7)[0] for src in sources]
    assert batched == alone


def test_greedy_decode_stops_at_eos() -> None:
    model = Seq2SeqModel(seq_config(), seed=7)
    model.head_bias.data[:] = 0.0
    model.head_bias.data[EOS_ID] = 1e4
    result = greedy_decode([3, 4], model, max_len=5)
    assert result.tokens == []
    assert not result.truncated


def test_batched_greedy_decode_returns_one_result_per_source() -> None:
    model = Seq2SeqModel(seq_config(), seed=8)
    results = greedy_decode_batch([[3, 4], [5, 6, 7, 8]], model, max_len=3, eos_id=99)
    assert [len(result.tokens) for result in results] == [3, 3]
    assert all(result.truncated for result in results)


def test_greedy_max_len_is_capped_by_decoder_capacity() -> None:
    model = Seq2SeqModel(seq_config(max_tgt_len=2), seed=9)
    result = greedy_decode([3, 4], model, max_len=10, eos_id=99)
    assert len(result.tokens) == 3
    assert result.truncated
