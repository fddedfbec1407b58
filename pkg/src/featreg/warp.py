"""Trilinear warping and displacement-field resampling."""
from __future__ import annotations

import numpy as np

from .types import DisplacementField, FeatureVolume, GridInfo, Volume3D

TRILINEAR = "TRILINEAR"
NEAREST = "NEAREST"


def trilinear_sample(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample a (C, D, H, W) array at float (3, N) voxel coordinates.

    Positions are clamped to the array bounds (border replication).
    """
    _, D, H, W = data.shape
    z = np.clip(coords[0], 0.0, D - 1)
    y = np.clip(coords[1], 0.0, H - 1)
    x = np.clip(coords[2], 0.0, W - 1)
    z0 = np.floor(z).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    z1 = np.minimum(z0 + 1, D - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fz = (z - z0).astype(data.dtype, copy=False)
    fy = (y - y0).astype(data.dtype, copy=False)
    fx = (x - x0).astype(data.dtype, copy=False)

    out = None
    for (zi, wz) in ((z0, 1 - fz), (z1, fz)):
        for (yi, wy) in ((y0, 1 - fy), (y1, fy)):
            for (xi, wx) in ((x0, 1 - fx), (x1, fx)):
                w = wz * wy * wx
                contrib = data[:, zi, yi, xi] * w
                out = contrib if out is None else out + contrib
    return out


def nearest_sample(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    _, D, H, W = data.shape
    z = np.clip(np.rint(coords[0]), 0, D - 1).astype(np.intp)
    y = np.clip(np.rint(coords[1]), 0, H - 1).astype(np.intp)
    x = np.clip(np.rint(coords[2]), 0, W - 1).astype(np.intp)
    return data[:, z, y, x]


def _identity_coords(shape) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    return np.stack([g.ravel() for g in grids])


def warp(inp: Volume3D | FeatureVolume, field: DisplacementField,
         interpolation: str = TRILINEAR):
    """Warp a volume or feature volume: output(x) = input(x + u(x)).

    The field must live on the input grid; samples are border-clamped.
    Label volumes require NEAREST so no new label values appear.
    """
    if isinstance(inp, Volume3D):
        data = inp.data[None]
        shape = inp.data.shape
        if inp.is_labels and interpolation != NEAREST:
            raise ValueError("label volumes must be warped with NEAREST")
    else:
        data = inp.data
        shape = inp.grid_shape
    if field.grid_shape != tuple(shape):
        raise ValueError(
            f"field grid {field.grid_shape} does not match input grid {tuple(shape)}; "
            "resample with upsample_field first"
        )
    if field.data.any():
        coords = _identity_coords(shape) + field.data.reshape(3, -1).astype(np.float64)
    else:
        # zero field: exact identity, bitwise
        if isinstance(inp, Volume3D):
            return Volume3D(inp.data.copy(), inp.spacing, inp.origin, inp.is_labels)
        return FeatureVolume(inp.data.copy(), inp.grid, inp.provenance, dict(inp.extra))

    if interpolation == TRILINEAR:
        out = trilinear_sample(data, coords)
    elif interpolation == NEAREST:
        out = nearest_sample(data, coords)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    out = out.reshape(data.shape[0], *shape)

    if isinstance(inp, Volume3D):
        res = out[0]
        if inp.is_labels:
            res = res.astype(inp.data.dtype)
        return Volume3D(res, inp.spacing, inp.origin, inp.is_labels)
    return FeatureVolume(out, inp.grid, inp.provenance, dict(inp.extra))


def resample_field(field: DisplacementField, shape, grid: GridInfo) -> DisplacementField:
    """Trilinearly resample a field onto a target grid.

    Sample positions map through image-voxel space, and components are
    rescaled by the spacing ratio so the physical displacement is preserved.
    """
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ValueError(f"target grid extents must be >= 1, got {shape}")
    if shape == field.grid_shape and grid == field.grid:
        return DisplacementField(field.data.copy(), field.grid, dict(field.extra))

    tgt_cells = _identity_coords(shape)  # (3, N) target cell indices
    img = grid.cell_to_image(tgt_cells.T).T
    src_cells = field.grid.image_to_cell(img.T).T
    sampled = trilinear_sample(field.data, src_cells)
    scale = (np.array(field.grid.spacing) / np.array(grid.spacing)).reshape(3, 1)
    out = (sampled * scale).astype(np.float32).reshape(3, *shape)
    return DisplacementField(out, grid)


def upsample_field(field: DisplacementField, target: "DisplacementField | FeatureVolume | tuple") -> DisplacementField:
    """Resample a field onto the grid of `target` (a tensor or (shape, GridInfo))."""
    if isinstance(target, (FeatureVolume, DisplacementField)):
        return resample_field(field, target.grid_shape, target.grid)
    shape, grid = target
    return resample_field(field, shape, grid)
