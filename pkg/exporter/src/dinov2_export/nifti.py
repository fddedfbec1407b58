"""Minimal read-only NIfTI-1 support (single-file .nii / .nii.gz)."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_HDR_SIZE = 348
_DTYPE_CODES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}


@dataclass
class NiftiVolume:
    data: np.ndarray  # (nz, ny, nx), float32
    spacing: tuple[float, float, float]  # (sz, sy, sx) mm


def read_nifti(path) -> NiftiVolume:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such volume file: {path}")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        hdr = fh.read(_HDR_SIZE)
        if len(hdr) < _HDR_SIZE or struct.unpack_from("<i", hdr, 0)[0] != _HDR_SIZE:
            raise ValueError(f"{path}: not a NIfTI-1 file")
        if hdr[344:348] != b"n+1\x00":
            raise ValueError(f"{path}: only single-file NIfTI-1 is supported")
        dim = struct.unpack_from("<8h", hdr, 40)
        if not 1 <= dim[0] <= 3:
            raise ValueError(f"{path}: need a 3D volume, dim[0]={dim[0]}")
        nx, ny, nz = dim[1], max(dim[2], 1), max(dim[3], 1)
        datatype = struct.unpack_from("<h", hdr, 70)[0]
        if datatype not in _DTYPE_CODES:
            raise ValueError(f"{path}: unsupported datatype code {datatype}")
        pixdim = struct.unpack_from("<8f", hdr, 76)
        vox_offset = int(struct.unpack_from("<f", hdr, 108)[0])
        fh.seek(vox_offset)
        dtype = np.dtype(_DTYPE_CODES[datatype]).newbyteorder("<")
        raw = fh.read(nx * ny * nz * dtype.itemsize)
        if len(raw) != nx * ny * nz * dtype.itemsize:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)
    return NiftiVolume(np.ascontiguousarray(data, dtype=np.float32),
                       (float(pixdim[3]), float(pixdim[2]), float(pixdim[1])))
