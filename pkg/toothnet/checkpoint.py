"""
Checkpoint Module

Binary parameter container plus the JSON manifest describing the networks
that own those parameters.

Container layout (little-endian):
- magic "TPCKPT1"
- uint32 version, uint32 entry count
- per entry: uint16 name length, UTF-8 name, uint8 ndim,
  uint32 extent per dimension, float64 payload
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from toothnet.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from toothnet.errors import CheckpointError, DatasetIOError

logger = logging.getLogger(__name__)


def save_checkpoint(path, arrays):
    """
    Write named arrays to a checkpoint file.

    Args:
        path: Destination file
        arrays: Mapping of parameter name -> numpy array
    """
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, values in arrays.items():
        encoded = name.encode("utf-8")
        values = np.asarray(values, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(values.tobytes(order="C"))
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise DatasetIOError(path, e) from e
    logger.debug("wrote %d tensors to %s", len(arrays), path)


def load_checkpoint(path):
    """Read a checkpoint file back into an ordered name -> array dict."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    try:
        version, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        arrays = {}
        for _ in range(count):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + length].decode("utf-8")
            offset += length
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            count_values = int(np.prod(shape)) if ndim else 1
            payload = np.frombuffer(blob, dtype="<f8", count=count_values, offset=offset)
            offset += 8 * count_values
            arrays[name] = payload.astype(np.float64).reshape(shape)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"truncated or corrupt checkpoint {path}: {e}") from e
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return arrays


def write_manifest(path, manifest):
    try:
        Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(path, e) from e


def read_manifest(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CheckpointError(f"cannot read pipeline manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt pipeline manifest {path}: line {e.lineno}") from e
