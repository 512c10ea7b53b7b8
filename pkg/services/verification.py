"""
Verification suites behind the ``gradcheck`` and ``selftest`` commands.

Both return a pandas frame with one row per check; a suite passes when every
row does.
"""

from __future__ import annotations

import logging
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from engine import Parameter, grad_check, no_grad
from engine.functional import cross_entropy
from models import reference
from models.attention import AblationMode, TriAttnParams, triangular_attention, triangular_attention_weights
from models.checkpoint import load_checkpoint, save_checkpoint
from models.config import ModelConfig
from models.encoder import EncoderModel
from models.layers import EdgeLayerParams, edge_layer
from models.masks import PivotMask, full_pivot_mask
from models.seq2seq import BOS_ID, EOS_ID, Seq2SeqModel
from tasks.composition import CompositionTable, compose_oracle, load_table
from tasks.generators import gen_relation_instance

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-12
FP32_TOLERANCE = 1e-5
ATTENTION_NAMES = ("wq", "bq", "wk", "bk", "v1", "b1", "v2", "b2", "wo", "bo")


def suite_passed(report: pd.DataFrame) -> bool:
    return bool(report["passed"].all())


def _relative_gap(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs(actual - expected)) / max(1.0, float(np.max(np.abs(expected)))))


def _random_attention(rng: np.random.Generator, d: int, heads: int) -> TriAttnParams:
    def param(name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(f"attn.{name}", rng.normal(size=shape))

    return TriAttnParams(
        **{name: param(name, (d, d) if name.startswith(("w", "v")) else (d,)) for name in ATTENTION_NAMES},
        num_heads=heads,
    )


def _attention_arrays(p: TriAttnParams) -> dict[str, np.ndarray]:
    return {name: getattr(p, name).data for name in ATTENTION_NAMES}


def _gradcheck_encoder(config: ModelConfig, seed: int) -> float:
    model = EncoderModel(config, seed=seed)
    rng = np.random.default_rng(seed)
    label_ids = rng.integers(config.num_edge_labels + 1, size=(2, 4, 4))
    queries = np.array([[0, 3], [2, 1]])
    targets = rng.integers(config.num_output_labels, size=2)

    def loss():
        return cross_entropy(model.forward(label_ids, queries, lengths=[4, 3]), targets)

    return grad_check(loss, model.parameters())


def _gradcheck_seq2seq(config: ModelConfig, seed: int) -> float:
    model = Seq2SeqModel(config, seed=seed)
    rng = np.random.default_rng(seed)
    src = rng.integers(3, config.vocab_size, size=(1, 2))
    token = int(rng.integers(3, config.target_vocab_size))
    tgt_in = np.array([[BOS_ID, token]])
    tgt_out = np.array([[token, EOS_ID]])

    def loss():
        return cross_entropy(model.forward(src, [2], tgt_in, [2]), tgt_out)

    return grad_check(loss, model.parameters())


def gradcheck_suite(seed: int = 0, tolerance: float = GRADCHECK_TOLERANCE) -> pd.DataFrame:
    """
    Full-model central-difference checks in float64 at d = 4, two layers, graphs
    and joint states of at most four nodes.
    """
    base = dict(num_layers=2, d=4, heads=2, dtype="float64")
    cases: list[tuple[str, Callable[[], float]]] = []
    for tied in (True, False):
        for ffn_residual in (False, True):
            suffix = f"tied={tied} ffn_residual={ffn_residual}"
            encoder_config = ModelConfig(
                **base, tied=tied, ffn_residual=ffn_residual, num_edge_labels=3, num_output_labels=3
            )
            seq_config = ModelConfig(
                **base,
                tied=tied,
                ffn_residual=ffn_residual,
                vocab_size=6,
                target_vocab_size=6,
                rel_clip=2,
                max_src_len=2,
                max_tgt_len=2,
            )
            cases.append((f"encoder {suffix}", lambda c=encoder_config: _gradcheck_encoder(c, seed)))
            cases.append((f"seq2seq {suffix}", lambda c=seq_config: _gradcheck_seq2seq(c, seed)))
    for mode in (AblationMode.VALUE_ABLATION, AblationMode.ATTENTION_ABLATION):
        config = ModelConfig(**base, mode=mode, num_edge_labels=3, num_output_labels=3)
        cases.append((f"encoder mode={mode.value}", lambda c=config: _gradcheck_encoder(c, seed)))

    rows = []
    for name, run in cases:
        error = run()
        rows.append({"case": name, "max_rel_error": error, "passed": error < tolerance})
        logger.info("gradcheck %s: max relative error %.3e", name, error)
    return pd.DataFrame(rows, columns=["case", "max_rel_error", "passed"])


def check_attention_oracle(seed: int) -> float:
    """Batched multi-head attention against the loop oracle over small n, d, heads and every mode."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(1, 6):
        for d in (2, 4, 8):
            for heads in (1, 2):
                p = _random_attention(rng, d, heads)
                x = rng.normal(size=(1, n, n, d))
                allowed = np.ones((n, n, n), dtype=bool)
                for mode in AblationMode:
                    actual = triangular_attention(Parameter("x", x), p, PivotMask(allowed), mode).data[0]
                    expected = reference.attention(x[0], _attention_arrays(p), heads, allowed, mode)
                    worst = max(worst, _relative_gap(actual, expected))
    return worst


def check_layer_oracle(seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for ffn_residual in (False, True):
        layer = EdgeLayerParams.initialize("layers.0", 4, 2, rng, np.float64)
        x = rng.normal(size=(1, 4, 4, 4))
        mask = full_pivot_mask(4)
        actual = edge_layer(Parameter("x", x), layer, mask, ffn_residual=ffn_residual).data[0]
        expected = reference.edge_layer(
            x[0], reference.layer_arrays(layer), 2, mask.allowed, ffn_residual=ffn_residual
        )
        worst = max(worst, _relative_gap(actual, expected))
    return worst


def check_normalization_and_masking(seed: int) -> tuple[float, bool]:
    """Worst |sum_l alpha - 1| under a padded mask, and whether masked weights are exactly 0."""
    rng = np.random.default_rng(seed)
    p = _random_attention(rng, 4, 2)
    mask = full_pivot_mask(5, lengths=[5, 3])
    x = Parameter("x", rng.normal(size=(2, 5, 5, 4)))
    worst, exact = 0.0, True
    for head in p.heads:
        alpha = triangular_attention_weights(x, head, mask).data
        worst = max(worst, float(np.max(np.abs(alpha.sum(axis=2) - 1.0))))
        exact = exact and bool(np.all(alpha[~mask.allowed] == 0.0))
    return worst, exact


def _encoder_fp32(seed: int, **overrides) -> EncoderModel:
    config = ModelConfig(num_layers=2, d=8, heads=2, num_edge_labels=3, num_output_labels=3)
    return EncoderModel(config.model_copy(update=overrides), seed=seed)


def check_permutation_equivariance(seed: int) -> float:
    rng = np.random.default_rng(seed)
    model = _encoder_fp32(seed)
    ids = rng.integers(4, size=(5, 5))
    perm = rng.permutation(5)
    out = model.encode_graphs(ids[None]).data[0]
    permuted = model.encode_graphs(ids[np.ix_(perm, perm)][None]).data[0]
    return float(np.max(np.abs(permuted - out[np.ix_(perm, perm)])))


def check_padding_neutrality(seed: int) -> float:
    rng = np.random.default_rng(seed)
    model = _encoder_fp32(seed)
    small = rng.integers(4, size=(3, 3))
    large = rng.integers(4, size=(5, 5))
    padded = np.zeros((2, 5, 5), dtype=np.int64)
    padded[0, :3, :3] = small
    padded[1] = large
    alone = model.encode_graphs(small[None]).data[0]
    batched = model.encode_graphs(padded, lengths=[3, 5]).data[0, :3, :3]
    worst = float(np.max(np.abs(alone - batched)))

    seq = Seq2SeqModel(
        ModelConfig(num_layers=2, d=8, heads=2, vocab_size=8, target_vocab_size=8, rel_clip=4), seed=seed
    )
    src_short = rng.integers(3, 8, size=3)
    src_long = rng.integers(3, 8, size=5)
    tgt = np.array([[BOS_ID, 4, 5]])
    src_batch = np.zeros((2, 5), dtype=np.int64)
    src_batch[0, :3] = src_short
    src_batch[1] = src_long
    alone = seq.forward(src_short[None], [3], tgt, [3]).data[0]
    batched = seq.forward(src_batch, [3, 5], np.repeat(tgt, 2, axis=0), [3, 3]).data[0]
    return max(worst, float(np.max(np.abs(alone - batched))))


def check_causal_invariance(seed: int) -> bool:
    """Decoder logits at position p are bitwise unchanged by edits to target tokens after p."""
    rng = np.random.default_rng(seed)
    model = Seq2SeqModel(
        ModelConfig(num_layers=2, d=8, heads=2, vocab_size=8, target_vocab_size=8, rel_clip=4), seed=seed
    )
    src = rng.integers(3, 8, size=(1, 4))
    tgt = np.concatenate([[BOS_ID], rng.integers(3, 8, size=4)])[None]
    logits = model.forward(src, [4], tgt, [5]).data
    for p in range(tgt.shape[1] - 1):
        edited = tgt.copy()
        edited[0, p + 1 :] = rng.integers(3, 8, size=tgt.shape[1] - p - 1)
        changed = model.forward(src, [4], edited, [5]).data
        if not np.array_equal(changed[:, : p + 1], logits[:, : p + 1]):
            return False
    return True


def check_tied_equals_untied(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    ids = rng.integers(4, size=(1, 4, 4))
    queries = np.array([[0, 3]])
    tied = _encoder_fp32(seed, num_layers=1, tied=True).forward(ids, queries).data
    untied = _encoder_fp32(seed, num_layers=1, tied=False).forward(ids, queries).data
    return bool(np.array_equal(tied, untied))


def check_checkpoint_roundtrip(seed: int) -> bool:
    rng = np.random.default_rng(seed)
    model = _encoder_fp32(seed, tied=False)
    ids = rng.integers(4, size=(2, 4, 4))
    queries = np.array([[0, 3], [1, 2]])
    with tempfile.TemporaryDirectory() as tmp:
        restored = load_checkpoint(save_checkpoint(model, Path(tmp) / "model.bin"))
    return bool(np.array_equal(model.forward(ids, queries).data, restored.forward(ids, queries).data))


def check_generator_oracle(seed: int, table: CompositionTable, samples: int = 100) -> bool:
    rng = np.random.default_rng(seed)
    for index in range(samples):
        instance = gen_relation_instance(table, 2 + index % 5, rng)
        if compose_oracle(table, instance.chain_labels()) != instance.target:
            return False
    return True


def selftest_suite(seed: int = 0) -> pd.DataFrame:
    """Oracle-equivalence and invariant checks."""
    rows = []

    def record(check: str, value: float, tolerance: float) -> None:
        rows.append({"check": check, "value": value, "tolerance": tolerance, "passed": value <= tolerance})
        logger.info("selftest %s: %.3e (tolerance %.1e)", check, value, tolerance)

    def record_exact(check: str, ok: bool) -> None:
        rows.append({"check": check, "value": 0.0 if ok else 1.0, "tolerance": 0.0, "passed": ok})
        logger.info("selftest %s: %s", check, "ok" if ok else "FAILED")

    with no_grad():
        record("attention_oracle", check_attention_oracle(seed), ORACLE_TOLERANCE)
        record("layer_oracle", check_layer_oracle(seed), ORACLE_TOLERANCE)
        normalization, masked_zero = check_normalization_and_masking(seed)
        record("attention_normalization", normalization, ORACLE_TOLERANCE)
        record_exact("masked_weights_zero", masked_zero)
        record("permutation_equivariance", check_permutation_equivariance(seed), FP32_TOLERANCE)
        record("padding_neutrality", check_padding_neutrality(seed), FP32_TOLERANCE)
        record_exact("causal_invariance", check_causal_invariance(seed))
        record_exact("tied_equals_untied", check_tied_equals_untied(seed))
        record_exact("checkpoint_roundtrip", check_checkpoint_roundtrip(seed))
    for name in ("cyclic", "kinship"):
        record_exact(f"generator_oracle[{name}]", check_generator_oracle(seed, load_table(name)))
    return pd.DataFrame(rows, columns=["check", "value", "tolerance", "passed"])
