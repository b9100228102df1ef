"""
Checkpoint container.

Layout, in order:

1. The 9-byte magic ``SDBCKPT1\\n``.
2. One UTF-8 JSON line ending in ``\\n``::

       {"model": {...ModelConfig fields...},
        "vocab": ["[PAD]", "[UNK]", "[CLS]", ...],
        "tensors": [{"name": "embed.token", "shape": [V, d]}, ...]}

3. For each entry of "tensors", in that order, prod(shape) little-endian
   float64 values in row-major order. Nothing follows the last tensor.
"""

import json
import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np
from pydantic import ValidationError

from .data import Vocabulary
from .errors import CheckpointError, DataError
from .model import Parameters, parameter_shapes
from .state import ModelConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"SDBCKPT1\n"
_DTYPE = np.dtype("<f8")


class Checkpoint(NamedTuple):
    config: ModelConfig
    params: Parameters
    vocab: Vocabulary


def save_checkpoint(path: str, config: ModelConfig, params: Parameters, vocab: Vocabulary) -> None:
    header = {
        "model": config.model_dump(mode="json"),
        "vocab": vocab.tokens,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8") + b"\n")
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.values, dtype=_DTYPE).tobytes())
    logger.info("Saved checkpoint %s (%d tensors)", path, len(params))


def load_checkpoint(path: str) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path} is not an sdbert checkpoint")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(MAGIC):end].decode("utf-8"))
        config = ModelConfig.model_validate(header["model"])
        vocab = Vocabulary(header["vocab"])
        entries = [(entry["name"], tuple(entry["shape"])) for entry in header["tensors"]]
    except (ValueError, KeyError, TypeError, ValidationError, DataError) as e:
        raise CheckpointError(f"{path}: bad header: {e}") from e

    if entries != parameter_shapes(config):
        raise CheckpointError(f"{path}: tensor layout does not match its model config")

    offset = end + 1
    tensors = {}
    for name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for {name}")
        values = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=offset).reshape(shape)
        tensors[name] = Tensor(values.astype(np.float64), requires_grad=True)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} unexpected trailing bytes")
    return Checkpoint(config=config, params=Parameters(tensors), vocab=vocab)
