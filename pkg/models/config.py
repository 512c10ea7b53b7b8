from __future__ import annotations

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .attention import AblationMode


class ModelConfig(BaseModel):
    """
    Architecture of an edge transformer.

    Label and vocabulary sizes left at 0 are filled in from the dataset before a
    model is built. ``num_edge_labels`` counts real labels; the embedding table
    gets one extra row (row 0) for the null label.
    """

    model_config = ConfigDict(extra="forbid")

    num_layers: int = Field(default=4, ge=0)
    d: int = Field(default=64, gt=0)
    heads: int = Field(default=4, gt=0)
    tied: bool = True
    mode: AblationMode = AblationMode.BASE
    ffn_residual: bool = False
    vocab_size: int = Field(default=0, ge=0)
    target_vocab_size: int = Field(default=0, ge=0)
    num_edge_labels: int = Field(default=0, ge=0)
    num_output_labels: int = Field(default=0, ge=0)
    rel_clip: int = Field(default=16, gt=0)
    max_src_len: int = Field(default=32, gt=0)
    max_tgt_len: int = Field(default=32, gt=0)
    dtype: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "ModelConfig":
        if self.d % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        return self

    @property
    def num_layer_params(self) -> int:
        """Distinct parameter sets in a stack: one when tied, L otherwise."""
        return 1 if self.tied else self.num_layers

    def canonical_text(self) -> str:
        """Key-sorted ``key = value`` lines with JSON values."""
        dumped = self.model_dump(mode="json")
        return "".join(f"{key} = {json.dumps(dumped[key])}\n" for key in sorted(dumped))
