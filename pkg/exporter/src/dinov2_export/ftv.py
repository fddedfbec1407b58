"""FTV tensor writer.

Byte layout (little-endian): magic "FTV1", u32 ndim, ndim u32 dims, u32
dtype code (0 = f32), u32 metadata length, UTF-8 JSON metadata (sorted
keys), then the raw C-order float32 payload. Writing is byte-deterministic
for identical inputs.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"FTV1"
DTYPE_F32 = 0


def write_ftv(data: np.ndarray, meta: dict, path) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if any(e < 1 for e in data.shape):
        raise ValueError(f"refusing to write zero-extent tensor {data.shape}")
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(struct.pack("<I", DTYPE_F32))
            fh.write(struct.pack("<I", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(data.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
