"""Densify feature volumes encoded every `gap` slices along one axis."""
from __future__ import annotations

import numpy as np

from .types import FeatureVolume, GridInfo


def interpolate_slice_gap(fv_sparse: FeatureVolume, gap: int, axis: int = 0,
                          target_extent: int | None = None) -> FeatureVolume:
    """Linearly interpolate between encoded slices {0, gap, 2*gap, ...}.

    Slices past the last encoded one replicate it, up to `target_extent`
    (default: (n_encoded - 1) * gap + 1). Grid spacing along `axis` is
    divided by `gap`.
    """
    if gap < 1:
        raise ValueError("gap must be >= 1")
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    n_enc = fv_sparse.data.shape[1 + axis]
    if n_enc < 1:
        raise ValueError("axis extent must be >= 1")
    dense_extent = (n_enc - 1) * gap + 1
    if target_extent is None:
        target_extent = dense_extent
    if target_extent < dense_extent:
        raise ValueError(f"target_extent {target_extent} < densified extent {dense_extent}")

    spacing = list(fv_sparse.grid.spacing)
    spacing[axis] = spacing[axis] / gap
    grid = GridInfo(tuple(spacing), fv_sparse.grid.origin)

    if gap == 1 and target_extent == n_enc:
        return FeatureVolume(fv_sparse.data.copy(), grid, fv_sparse.provenance,
                             dict(fv_sparse.extra))

    data = np.moveaxis(fv_sparse.data, 1 + axis, 1)  # (C, n_enc, ...)
    out_shape = (data.shape[0], target_extent, *data.shape[2:])
    out = np.empty(out_shape, dtype=np.float32)
    for i in range(target_extent):
        pos = min(i / gap, n_enc - 1)  # replicate past the last encoded slice
        lo = int(np.floor(pos))
        hi = min(lo + 1, n_enc - 1)
        t = pos - lo
        # float64 blend keeps linear ramps exact after the float32 cast
        blend = (1.0 - t) * data[:, lo].astype(np.float64) + t * data[:, hi].astype(np.float64)
        out[:, i] = blend.astype(np.float32)
    out = np.moveaxis(out, 1, 1 + axis)
    return FeatureVolume(np.ascontiguousarray(out), grid, fv_sparse.provenance,
                         dict(fv_sparse.extra))
