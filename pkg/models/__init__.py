from .attention import (
    AblationMode,
    HeadParams,
    TriAttnParams,
    triangular_attention,
    triangular_attention_head,
    triangular_attention_weights,
)
from .checkpoint import CheckpointError, build_model, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .encoder import (
    EdgeStack,
    EncoderModel,
    classify_query_edge,
    edge_cross_entropy,
    edge_logits,
    encode,
)
from .inputs import edge_label_ids, graph_init, graph_init_batch, relative_positions, sequence_init
from .layers import EdgeLayerParams, edge_layer, feed_forward
from .masks import PivotMask, causal_pivot_mask, full_pivot_mask
from .seq2seq import (
    BOS_ID,
    EOS_ID,
    NUM_SPECIAL_TOKENS,
    PAD_ID,
    DecodeResult,
    Seq2SeqModel,
    greedy_decode,
    greedy_decode_batch,
    seq2seq_forward,
)

__all__ = [
    "AblationMode",
    "BOS_ID",
    "CheckpointError",
    "DecodeResult",
    "EOS_ID",
    "EdgeLayerParams",
    "EdgeStack",
    "EncoderModel",
    "HeadParams",
    "ModelConfig",
    "NUM_SPECIAL_TOKENS",
    "PAD_ID",
    "PivotMask",
    "Seq2SeqModel",
    "TriAttnParams",
    "build_model",
    "causal_pivot_mask",
    "classify_query_edge",
    "edge_cross_entropy",
    "edge_label_ids",
    "edge_layer",
    "edge_logits",
    "encode",
    "feed_forward",
    "full_pivot_mask",
    "graph_init",
    "graph_init_batch",
    "greedy_decode",
    "greedy_decode_batch",
    "load_checkpoint",
    "relative_positions",
    "save_checkpoint",
    "seq2seq_forward",
    "sequence_init",
    "triangular_attention",
    "triangular_attention_head",
    "triangular_attention_weights",
]
