from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from engine import Parameter, Tensor, no_grad
from engine.errors import CapacityError
from engine.functional import concat, einsum, getitem, linear, mul

from .config import ModelConfig
from .encoder import EdgeStack, encode, padding_weights
from .inputs import sequence_init
from .layers import xavier_uniform
from .masks import causal_pivot_mask, pivot_mask_from_real, real_positions

logger = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
NUM_SPECIAL_TOKENS = 3


@dataclass
class DecodeResult:
    tokens: list[int]
    truncated: bool


def pad_sequences(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, list[int]]:
    """Right-pad with PAD_ID; returns the (batch, max_len) id array and the true lengths."""
    lengths = [len(seq) for seq in sequences]
    if not lengths or min(lengths) < 1:
        raise ValueError("every sequence needs at least one token")
    ids = np.full((len(sequences), max(lengths)), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
    return ids, lengths


class Seq2SeqModel:
    """
    Encoder-decoder edge transformer.

    The decoder runs on a joint (N, N, d) state over encoder positions followed by
    decoder positions: the encoder block holds x_enc, the decoder block holds the
    sequence initialisation of the target prefix, and every encoder<->decoder edge
    starts from one learned cross-edge vector. The loop edge of decoder position p
    predicts the token at p + 1.
    """

    kind = "seq2seq"

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        if config.vocab_size <= NUM_SPECIAL_TOKENS or config.target_vocab_size <= NUM_SPECIAL_TOKENS:
            raise ValueError(
                f"seq2seq models need vocabularies larger than the {NUM_SPECIAL_TOKENS} special tokens"
            )
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        rng = np.random.default_rng(seed)
        d = config.d
        self.source_table = Parameter(
            "embeddings.source_tokens", xavier_uniform(rng, (config.vocab_size, d), self.dtype)
        )
        self.target_table = Parameter(
            "embeddings.target_tokens",
            xavier_uniform(rng, (config.target_vocab_size, d), self.dtype),
        )
        self.rel_table = Parameter(
            "embeddings.relative",
            xavier_uniform(rng, (2 * config.rel_clip + 1, d), self.dtype),
        )
        self.cross_edge = Parameter(
            "embeddings.cross_edge", xavier_uniform(rng, (1, d), self.dtype).reshape(d)
        )
        self.encoder = EdgeStack("encoder", config, rng, self.dtype)
        self.decoder = EdgeStack("decoder", config, rng, self.dtype)
        self.head_weight = Parameter(
            "head.weight", xavier_uniform(rng, (d, config.target_vocab_size), self.dtype)
        )
        self.head_bias = Parameter(
            "head.bias", np.zeros(config.target_vocab_size, dtype=self.dtype)
        )

    def parameters(self) -> list[Parameter]:
        return [
            self.source_table,
            self.target_table,
            self.rel_table,
            self.cross_edge,
            *self.encoder.parameters(),
            *self.decoder.parameters(),
            self.head_weight,
            self.head_bias,
        ]

    def named_parameters(self) -> dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}

    def encode_source(
        self, src_ids: np.ndarray, src_lengths: Sequence[int]
    ) -> tuple[Tensor, np.ndarray]:
        """x_enc (batch, n_enc, n_enc, d) and the (batch, n_enc) real-position mask."""
        src_ids = np.asarray(src_ids, dtype=np.int64)
        n_enc = src_ids.shape[1]
        if n_enc > self.config.max_src_len:
            raise CapacityError(
                f"source length {n_enc} exceeds max_src_len {self.config.max_src_len}"
            )
        real = real_positions(n_enc, src_lengths)
        weights = padding_weights(real, self.dtype)
        x0 = mul(
            sequence_init(self.source_table, self.rel_table, src_ids, self.config.rel_clip),
            weights,
        )
        return encode(x0, self.encoder, pivot_mask_from_real(real), weights), real

    def decode(
        self,
        x_enc: Tensor,
        src_real: np.ndarray,
        tgt_ids: np.ndarray,
        tgt_lengths: Sequence[int],
    ) -> Tensor:
        """Logits (batch, n_dec, target_vocab) for every decoder position."""
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        batch, n_dec = tgt_ids.shape
        n_enc = src_real.shape[1]
        if n_dec > self.config.max_tgt_len + 1:
            raise CapacityError(
                f"decoder length {n_dec} exceeds max_tgt_len + 1 = {self.config.max_tgt_len + 1}"
            )
        x_dec = sequence_init(self.target_table, self.rel_table, tgt_ids, self.config.rel_clip)
        enc_to_dec = einsum(
            "d,bij->bijd", self.cross_edge, Tensor(np.ones((batch, n_enc, n_dec), dtype=self.dtype))
        )
        dec_to_enc = einsum(
            "d,bij->bijd", self.cross_edge, Tensor(np.ones((batch, n_dec, n_enc), dtype=self.dtype))
        )
        joint = concat(
            [concat([x_enc, enc_to_dec], axis=2), concat([dec_to_enc, x_dec], axis=2)], axis=1
        )
        real = np.concatenate([src_real, real_positions(n_dec, tgt_lengths)], axis=1)
        weights = padding_weights(real, self.dtype)
        mask = causal_pivot_mask(n_enc, n_dec) & pivot_mask_from_real(real)
        x = encode(mul(joint, weights), self.decoder, mask, weights)
        loops = np.arange(n_enc, n_enc + n_dec)
        return linear(getitem(x, (slice(None), loops, loops)), self.head_weight, self.head_bias)

    def forward(
        self,
        src_ids: np.ndarray,
        src_lengths: Sequence[int],
        tgt_ids: np.ndarray,
        tgt_lengths: Sequence[int],
    ) -> Tensor:
        x_enc, src_real = self.encode_source(src_ids, src_lengths)
        return self.decode(x_enc, src_real, tgt_ids, tgt_lengths)


def seq2seq_forward(
    src_tokens: Sequence[int], tgt_tokens: Sequence[int], model: Seq2SeqModel
) -> Tensor:
    """
    Logits (n_dec, target_vocab) for one pair; ``tgt_tokens`` is the decoder input
    and starts with BOS_ID.
    """
    src = np.asarray([src_tokens], dtype=np.int64)
    tgt = np.asarray([tgt_tokens], dtype=np.int64)
    logits = model.forward(src, [src.shape[1]], tgt, [tgt.shape[1]])
    return getitem(logits, 0)


def greedy_decode_batch(
    sources: Sequence[Sequence[int]],
    model: Seq2SeqModel,
    max_len: int,
    eos_id: int = EOS_ID,
) -> list[DecodeResult]:
    """Greedy decoding of every source in lockstep; the encoder runs once."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    steps = min(max_len, model.config.max_tgt_len + 1)
    if steps < max_len:
        logger.debug("max_len %s capped at decoder capacity %s", max_len, steps)
    src_ids, src_lengths = pad_sequences(sources)
    batch = len(sources)
    emitted: list[list[int]] = [[] for _ in range(batch)]
    finished = np.zeros(batch, dtype=bool)
    with no_grad():
        x_enc, src_real = model.encode_source(src_ids, src_lengths)
        prefix = np.full((batch, 1), BOS_ID, dtype=np.int64)
        for _ in range(steps):
            logits = model.decode(x_enc, src_real, prefix, [prefix.shape[1]] * batch)
            next_ids = logits.data[:, -1].argmax(axis=-1)
            for row, token in enumerate(next_ids.tolist()):
                if finished[row]:
                    continue
                if token == eos_id:
                    finished[row] = True
                else:
                    emitted[row].append(token)
            if finished.all():
                break
            prefix = np.concatenate([prefix, next_ids[:, None]], axis=1)
    return [
        DecodeResult(tokens=tokens, truncated=not done)
        for tokens, done in zip(emitted, finished.tolist())
    ]


def greedy_decode(
    src_tokens: Sequence[int], model: Seq2SeqModel, max_len: int, eos_id: int = EOS_ID
) -> DecodeResult:
    """Extend <bos> with argmax tokens until ``eos_id`` or ``max_len`` tokens."""
    return greedy_decode_batch([src_tokens], model, max_len, eos_id)[0]
