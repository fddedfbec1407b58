"""File formats: a NIfTI-1 subset, the FTV tensor container, and landmark CSVs.

NIfTI support is deliberately narrow: single-file NIfTI-1 (.nii / .nii.gz),
scalar dtypes {u8, i16, i32, f32, f64}, spacing from pixdim and origin from
the q-offset fields. Orientation codes are ignored with a warning; the
pipeline operates in voxel space.

The FTV container is little-endian: magic "FTV1", u32 ndim, ndim u32 dims,
u32 dtype code (0 = f32), u32 metadata length, UTF-8 JSON metadata, raw
C-order f32 payload.
"""
from __future__ import annotations

import gzip
import json
import os
import struct
import warnings
from pathlib import Path

import numpy as np

from .types import DisplacementField, FeatureVolume, GridInfo, LandmarkSet, Provenance, Volume3D

_NIFTI_HDR_SIZE = 348
_DTYPE_CODES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}
_DTYPE_TO_CODE = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}

FTV_MAGIC = b"FTV1"
_FTV_F32 = 0


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _open_maybe_gz(path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_volume(path, as_labels: bool = False) -> Volume3D:
    """Read a single-file NIfTI-1 volume.

    Intensity data is promoted to float32. With ``as_labels=True`` an
    integral on-disk dtype is kept as integer labels.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such volume file: {path}")
    with _open_maybe_gz(path, "rb") as fh:
        hdr = fh.read(_NIFTI_HDR_SIZE)
        if len(hdr) < _NIFTI_HDR_SIZE:
            raise ValueError(f"{path}: truncated NIfTI header ({len(hdr)} bytes)")
        sizeof_hdr = struct.unpack_from("<i", hdr, 0)[0]
        if sizeof_hdr != _NIFTI_HDR_SIZE:
            raise ValueError(f"{path}: sizeof_hdr={sizeof_hdr}, not a NIfTI-1 file")
        magic = hdr[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise ValueError(f"{path}: bad NIfTI magic {magic!r}")
        if magic == b"ni1\x00":
            raise ValueError(f"{path}: two-file NIfTI (hdr/img) is not supported")
        dim = struct.unpack_from("<8h", hdr, 40)
        ndim = dim[0]
        if not 1 <= ndim <= 3:
            raise ValueError(f"{path}: only 3D volumes supported, dim[0]={ndim}")
        nx, ny, nz = (dim[1] if ndim >= 1 else 1, dim[2] if ndim >= 2 else 1,
                      dim[3] if ndim >= 3 else 1)
        datatype = struct.unpack_from("<h", hdr, 70)[0]
        if datatype not in _DTYPE_CODES:
            raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
        pixdim = struct.unpack_from("<8f", hdr, 76)
        for i in (1, 2, 3):
            if not (np.isfinite(pixdim[i]) and pixdim[i] > 0):
                raise ValueError(f"{path}: non-positive pixdim[{i}]={pixdim[i]}")
        vox_offset = struct.unpack_from("<f", hdr, 108)[0]
        scl_slope, scl_inter = struct.unpack_from("<2f", hdr, 112)
        if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
            warnings.warn(f"{path}: scl_slope/scl_inter ignored ({scl_slope}, {scl_inter})")
        qform_code, sform_code = struct.unpack_from("<2h", hdr, 252)
        if qform_code > 1 or sform_code > 1:
            warnings.warn(f"{path}: orientation codes ignored (qform={qform_code}, sform={sform_code})")
        qoffset = struct.unpack_from("<3f", hdr, 268)  # (x, y, z)

        fh.seek(int(vox_offset))
        dtype = np.dtype(_DTYPE_CODES[datatype]).newbyteorder("<")
        count = nx * ny * nz
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise ValueError(f"{path}: payload truncated ({len(raw)} bytes for {count} voxels)")
        # NIfTI stores x fastest; (nz, ny, nx) C-order matches that layout.
        data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)

    is_labels = as_labels and np.issubdtype(data.dtype, np.integer)
    if not is_labels:
        data = np.ascontiguousarray(data, dtype=np.float32)
    else:
        data = np.ascontiguousarray(data)
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    origin = (float(qoffset[2]), float(qoffset[1]), float(qoffset[0]))
    return Volume3D(data, spacing=spacing, origin=origin, is_labels=is_labels)


def write_volume(v: Volume3D, path) -> None:
    """Write a Volume3D as single-file NIfTI-1; read_volume inverts it."""
    path = Path(path)
    data = v.data
    if v.is_labels:
        if data.dtype not in _DTYPE_TO_CODE:
            data = data.astype(np.int32)
    else:
        data = data.astype(np.float32, copy=False)
    code = _DTYPE_TO_CODE[np.dtype(data.dtype)]
    nz, ny, nx = data.shape
    sz, sy, sx = v.spacing
    oz, oy, ox = v.origin

    hdr = bytearray(_NIFTI_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _NIFTI_HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)  # bitpix
    struct.pack_into("<8f", hdr, 76, 0.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<2h", hdr, 252, 1, 0)  # qform_code=1, sform_code=0
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, 0.0)  # quatern b,c,d: identity
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    hdr[344:348] = b"n+1\x00"

    payload = np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<"), copy=False)
    with _open_maybe_gz(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00" * 4)  # extension flag
        fh.write(payload.tobytes(order="C"))


# ---------------------------------------------------------------------------
# FTV tensor container
# ---------------------------------------------------------------------------

def write_feature_tensor(t: FeatureVolume | DisplacementField, path) -> None:
    """Serialize a feature volume or displacement field; byte-deterministic."""
    if isinstance(t, DisplacementField):
        kind = "displacement"
        provenance = "displacement"
    elif isinstance(t, FeatureVolume):
        kind = "features"
        provenance = t.provenance.value
    else:
        raise TypeError(f"cannot serialize {type(t).__name__} as FTV")
    data = np.ascontiguousarray(t.data, dtype="<f4")
    if any(e < 1 for e in data.shape):
        raise ValueError(f"refusing to write zero-extent tensor {data.shape}")
    meta = {
        "kind": kind,
        "grid_spacing": list(t.grid.spacing),
        "grid_origin": list(t.grid.origin),
        "provenance": provenance,
    }
    extra = _jsonable(t.extra) if t.extra else {}
    if extra:
        meta["extra"] = extra
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FTV_MAGIC)
        fh.write(struct.pack("<I", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(struct.pack("<I", _FTV_F32))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(data.tobytes(order="C"))


def _jsonable(obj):
    """Best-effort JSON conversion; non-serializable entries are dropped."""
    if isinstance(obj, dict):
        out = {}
        for k, v in sorted(obj.items()):
            v = _jsonable(v)
            if v is not _DROP:
                out[k] = v
        return out
    if isinstance(obj, (list, tuple)):
        return [v for v in (_jsonable(x) for x in obj) if v is not _DROP]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    return _DROP


_DROP = object()


def read_feature_tensor(path) -> FeatureVolume | DisplacementField:
    """Read an FTV file back into its typed form."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FTV_MAGIC:
            raise ValueError(f"{path}: bad FTV magic {magic!r}")
        (ndim,) = struct.unpack("<I", fh.read(4))
        if ndim != 4:
            raise ValueError(f"{path}: FTV tensors must be 4D, got ndim={ndim}")
        dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        (dtype_code,) = struct.unpack("<I", fh.read(4))
        if dtype_code != _FTV_F32:
            raise ValueError(f"{path}: unknown FTV dtype code {dtype_code}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen).decode("utf-8"))
        count = int(np.prod(dims))
        raw = fh.read()
        if len(raw) != count * 4:
            raise ValueError(f"{path}: payload size {len(raw)} != expected {count * 4}")
        data = np.frombuffer(raw, dtype="<f4").reshape(dims)

    grid = GridInfo(tuple(meta["grid_spacing"]), tuple(meta["grid_origin"]))
    extra = meta.get("extra", {})
    kind = meta.get("kind")
    if kind == "displacement":
        if dims[0] != 3:
            raise ValueError(f"{path}: displacement tensor must have 3 channels, got {dims[0]}")
        return DisplacementField(data.copy(), grid=grid, extra=extra)
    if kind == "features":
        return FeatureVolume(data.copy(), grid=grid,
                             provenance=Provenance(meta.get("provenance", "EXTERNAL")),
                             extra=extra)
    raise ValueError(f"{path}: unknown FTV kind {kind!r}")


# ---------------------------------------------------------------------------
# Landmarks
# ---------------------------------------------------------------------------

def _read_points(path) -> np.ndarray:
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            if len(tokens) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 comma-separated values")
            try:
                x, y, z = (float(t) for t in tokens)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric landmark {line!r}") from None
            pts.append((z, y, x))  # file order is x,y,z
    if not pts:
        raise ValueError(f"{path}: empty landmark file")
    return np.asarray(pts, dtype=np.float64)


def read_landmarks(path_fixed, path_moving, spacing_fixed=(1.0, 1.0, 1.0),
                   spacing_moving=(1.0, 1.0, 1.0)) -> LandmarkSet:
    """Read paired headerless x,y,z CSVs (voxel coordinates)."""
    fixed = _read_points(path_fixed)
    moving = _read_points(path_moving)
    if len(fixed) != len(moving):
        raise ValueError(
            f"landmark counts differ: {len(fixed)} in {path_fixed}, {len(moving)} in {path_moving}"
        )
    return LandmarkSet(fixed, moving, spacing_fixed=spacing_fixed, spacing_moving=spacing_moving)


def atomic_write(path, write_fn) -> None:
    """Write via temp file + rename so no partial file survives a failure."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
