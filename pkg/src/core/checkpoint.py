"""
Checkpoint files.

Layout: the 8-byte magic ``RIDCKPT1``, a little-endian uint64 header length,
a UTF-8 JSON header ``{"tensors": {name: {"offset", "shape", "dtype"}},
"meta": {...}}`` and then the raw little-endian tensor bytes. Offsets count
from the first byte after the header.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from src.core.errors import ConfigError

logger = logging.getLogger(__name__)

MAGIC = b"RIDCKPT1"


def save_checkpoint(path, tensors, meta=None):
    """Write ``tensors`` (name -> array) in sorted-name order with ``meta``."""
    path = Path(path)
    index, blobs, offset = {}, [], 0
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        array = np.ascontiguousarray(array.astype(array.dtype.newbyteorder("<"), copy=False))
        index[name] = {"offset": offset, "shape": list(array.shape), "dtype": array.dtype.str}
        blob = array.tobytes()
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
        tmp.replace(path)
    except OSError as e:
        raise ConfigError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug("Saved %d tensors to %s", len(index), path)
    return path


def load_checkpoint(path):
    """Return (tensors, meta)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"Cannot read checkpoint {path}: {e}") from e
    if raw[:len(MAGIC)] != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    data_start = 16 + header_len

    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = data_start + entry["offset"]
        if start + count * dtype.itemsize > len(raw):
            raise ConfigError(f"{path}: tensor {name} runs past the end of the file")
        array = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
        tensors[name] = array.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return tensors, header.get("meta", {})
