from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from pydantic import ValidationError

from engine.errors import EdgeTransformerError

from .config import ModelConfig
from .encoder import EncoderModel
from .seq2seq import Seq2SeqModel

logger = logging.getLogger(__name__)

MAGIC = b"EDGECKPT"
FORMAT_VERSION = 1
MODEL_KINDS = {EncoderModel.kind: EncoderModel, Seq2SeqModel.kind: Seq2SeqModel}

Model = Union[EncoderModel, Seq2SeqModel]


class CheckpointError(EdgeTransformerError, ValueError):
    """A checkpoint file is malformed or does not match its configuration."""


def build_model(config: ModelConfig, kind: str, seed: int = 0) -> Model:
    try:
        model_cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    return model_cls(config, seed=seed)


def _header_text(model: Model) -> str:
    return f"kind = {json.dumps(model.kind)}\n" + model.config.canonical_text()


def _parse_header(text: str) -> tuple[str, ModelConfig]:
    values: dict[str, object] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}")
        values[key.strip()] = json.loads(raw.strip())
    kind = values.pop("kind", None)
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {kind!r} in checkpoint header")
    try:
        return str(kind), ModelConfig.model_validate(values)
    except ValidationError as exc:
        raise CheckpointError(f"invalid model config in checkpoint header: {exc}") from exc


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    """
    Write header (format version, key-sorted config) then every named tensor as
    (name, rank, extents, little-endian float32 payload).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header_text(model).encode("utf-8")
    params = model.parameters()
    with path.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        handle.write(header)
        handle.write(struct.pack("<I", len(params)))
        for param in params:
            name = param.name.encode("utf-8")
            handle.write(struct.pack("<H", len(name)))
            handle.write(name)
            handle.write(struct.pack("<B", param.ndim))
            handle.write(struct.pack(f"<{param.ndim}I", *param.shape))
            handle.write(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
    logger.debug("saved %s tensors to %s", len(params), path)
    return path


def _read_exact(handle: BinaryIO, size: int) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise CheckpointError("checkpoint ended unexpectedly")
    return data


def load_checkpoint(path: Union[str, Path]) -> Model:
    """Rebuild the model named in the header and fill in its tensors, validating names and shapes."""
    path = Path(path)
    logger.debug("loading checkpoint %s", path)
    with path.open("rb") as handle:
        if _read_exact(handle, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        version, header_len = struct.unpack("<II", _read_exact(handle, 8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        kind, config = _parse_header(_read_exact(handle, header_len).decode("utf-8"))
        model = build_model(config, kind)
        expected = model.named_parameters()
        (count,) = struct.unpack("<I", _read_exact(handle, 4))
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(handle, 2))
            name = _read_exact(handle, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(handle, 1))
            shape = struct.unpack(f"<{rank}I", _read_exact(handle, 4 * rank))
            if name not in expected:
                raise CheckpointError(f"unexpected tensor {name!r} for this configuration")
            if name in loaded:
                raise CheckpointError(f"tensor {name!r} appears twice")
            if tuple(shape) != expected[name].shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tuple(shape)}, configuration needs {expected[name].shape}"
                )
            size = int(np.prod(shape, dtype=np.int64))
            payload = np.frombuffer(_read_exact(handle, 4 * size), dtype="<f4")
            loaded[name] = payload.reshape(shape)
        if handle.read(1):
            raise CheckpointError("trailing bytes after the last tensor")
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors {missing}")
    for name, array in loaded.items():
        expected[name].data = array.astype(model.dtype)
    return model
